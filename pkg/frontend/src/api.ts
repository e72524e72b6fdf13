/** Typed client for the review API. The fetch implementation is injectable so
 * tests drive the client against an in-memory fixture server. */

import type {
  DecisionAck,
  DecisionBody,
  QaDetail,
  QueueFilters,
  QueuePage,
} from "./types.js";

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiRequestError extends Error {
  constructor(
    public readonly status: number,
    public readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiRequestError";
  }
}

export interface MediaChunk {
  status: number;
  bytes: ArrayBuffer;
  contentRange: string | null;
}

async function raiseForStatus(res: Response): Promise<void> {
  if (res.ok) return;
  let code = `http_${res.status}`;
  let message = res.statusText;
  try {
    const body = (await res.json()) as { code?: string; message?: string; detail?: unknown };
    if (body.code) code = body.code;
    if (body.message) message = body.message;
    else if (body.detail) message = JSON.stringify(body.detail);
  } catch {
    // non-JSON error body; keep the status text
  }
  throw new ApiRequestError(res.status, code, message);
}

export class ReviewApi {
  constructor(
    private readonly baseUrl: string,
    private readonly reviewerId: string,
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private url(path: string): string {
    return `${this.baseUrl.replace(/\/$/, "")}${path}`;
  }

  async queue(page = 1, pageSize = 20, filters: QueueFilters = {}): Promise<QueuePage> {
    const params = new URLSearchParams({ page: String(page), page_size: String(pageSize) });
    if (filters.domain) params.set("domain", filters.domain);
    if (filters.difficulty) params.set("difficulty", filters.difficulty);
    const res = await this.fetchFn(this.url(`/api/review/queue?${params}`));
    await raiseForStatus(res);
    return (await res.json()) as QueuePage;
  }

  async qa(qaId: string): Promise<QaDetail> {
    const res = await this.fetchFn(this.url(`/api/qa/${encodeURIComponent(qaId)}`));
    await raiseForStatus(res);
    return (await res.json()) as QaDetail;
  }

  async decide(qaId: string, body: Omit<DecisionBody, "reviewer_id">): Promise<DecisionAck> {
    const res = await this.fetchFn(this.url(`/api/qa/${encodeURIComponent(qaId)}/decision`), {
      method: "POST",
      headers: {
        "Content-Type": "application/json",
        "X-Reviewer-Id": this.reviewerId,
      },
      body: JSON.stringify({ ...body, reviewer_id: this.reviewerId }),
    });
    await raiseForStatus(res);
    return (await res.json()) as DecisionAck;
  }

  /** Src for native <video>/<audio> elements; the server speaks Range. */
  mediaUrl(mediaId: string): string {
    return this.url(`/api/media/${encodeURIComponent(mediaId)}`);
  }

  /** Fetch one byte range, the same request a native player issues. */
  async fetchMediaRange(mediaId: string, start: number, end: number): Promise<MediaChunk> {
    const res = await this.fetchFn(this.url(`/api/media/${encodeURIComponent(mediaId)}`), {
      headers: { Range: `bytes=${start}-${end}` },
    });
    await raiseForStatus(res);
    return {
      status: res.status,
      bytes: await res.arrayBuffer(),
      contentRange: res.headers.get("content-range"),
    };
  }

  /** Cheap availability probe: ask for the first byte. */
  async probeMedia(mediaId: string): Promise<boolean> {
    try {
      const chunk = await this.fetchMediaRange(mediaId, 0, 0);
      return chunk.status === 206 || chunk.status === 200;
    } catch {
      return false;
    }
  }
}
