/** Review session controller: all UI behavior, no DOM.
 *
 * The server is the source of truth: nothing leaves the local queue and no
 * status is shown as changed until the server acknowledges the decision.
 */

import { ApiRequestError, ReviewApi } from "./api.js";
import type { QaDetail, QueueFilters, QueueItemView, Verdict } from "./types.js";

export interface DraftForm {
  editedQuestion: string;
  editedAnswer: string;
  note: string;
}

export interface SubmitOptions {
  /** Rejections are destructive for the qa; they need explicit confirmation. */
  confirmReject?: boolean;
}

export type SubmitResult =
  | { kind: "ok"; status: string }
  | { kind: "needs_confirmation" }
  | { kind: "client_invalid"; message: string }
  | { kind: "server_error"; message: string };

export class ReviewSession {
  items: QueueItemView[] = [];
  page = 1;
  pageSize = 20;
  total = 0;
  filters: QueueFilters = {};

  current: QaDetail | null = null;
  /** media id -> reachable; decisions are disabled if anything is missing */
  mediaAvailable = new Map<string, boolean>();
  draft: DraftForm = { editedQuestion: "", editedAnswer: "", note: "" };
  editMode = false;

  formError: string | null = null;
  toast: string | null = null;
  lastRangeStatus: number | null = null;

  constructor(private readonly api: ReviewApi) {}

  get isEmpty(): boolean {
    return this.total === 0;
  }

  get pageCount(): number {
    return Math.max(1, Math.ceil(this.total / this.pageSize));
  }

  get decisionsDisabled(): boolean {
    if (this.current === null) return true;
    return this.current.media.some((m) => this.mediaAvailable.get(m.id) === false);
  }

  async loadQueue(page = this.page): Promise<void> {
    const result = await this.api.queue(page, this.pageSize, this.filters);
    this.items = result.items;
    this.page = result.page;
    this.pageSize = result.page_size;
    this.total = result.total;
  }

  async setFilters(filters: QueueFilters): Promise<void> {
    this.filters = filters;
    await this.loadQueue(1);
  }

  async openTask(qaId: string): Promise<void> {
    const detail = await this.api.qa(qaId);
    this.current = detail;
    this.formError = null;
    this.editMode = false;
    // edit mode pre-fills from the payload; keep the prefill ready
    this.draft = { editedQuestion: detail.question, editedAnswer: detail.answer, note: "" };
    this.mediaAvailable = new Map();
    for (const media of detail.media) {
      this.mediaAvailable.set(media.id, await this.api.probeMedia(media.id));
    }
  }

  enterEditMode(): void {
    if (this.current === null) return;
    this.editMode = true;
    this.draft.editedQuestion = this.current.question;
    this.draft.editedAnswer = this.current.answer;
  }

  mediaSrc(mediaId: string): string {
    return this.api.mediaUrl(mediaId);
  }

  /** Pull the first chunk of a stream, as a native player's Range fetch does. */
  async playMedia(mediaId: string, chunkBytes = 64 * 1024): Promise<number> {
    const chunk = await this.api.fetchMediaRange(mediaId, 0, chunkBytes - 1);
    this.lastRangeStatus = chunk.status;
    return chunk.bytes.byteLength;
  }

  async submit(verdict: Verdict, options: SubmitOptions = {}): Promise<SubmitResult> {
    if (this.current === null) {
      return { kind: "client_invalid", message: "no task is open" };
    }
    if (this.decisionsDisabled) {
      return { kind: "client_invalid", message: "media unavailable; decisions are disabled" };
    }
    const qaId = this.current.qa_id;

    if (verdict === "edit") {
      const question = this.draft.editedQuestion.trim();
      const answer = this.draft.editedAnswer.trim();
      const questionChanged = question !== "" && question !== this.current.question;
      const answerChanged = answer !== "" && answer !== this.current.answer;
      if (!questionChanged && !answerChanged) {
        this.formError = "edit needs a changed question or answer";
        return { kind: "client_invalid", message: this.formError };
      }
    }
    if (verdict === "reject" && !options.confirmReject) {
      return { kind: "needs_confirmation" };
    }

    try {
      const body =
        verdict === "edit"
          ? {
              verdict,
              edited_question:
                this.draft.editedQuestion.trim() !== this.current.question
                  ? this.draft.editedQuestion.trim()
                  : null,
              edited_answer:
                this.draft.editedAnswer.trim() !== this.current.answer
                  ? this.draft.editedAnswer.trim()
                  : null,
              note: this.draft.note,
            }
          : { verdict, note: this.draft.note };
      const ack = await this.api.decide(qaId, body);
      // server acknowledged: only now drop the item and move on
      this.items = this.items.filter((item) => item.qa_id !== qaId);
      this.formError = null;
      this.current = null;
      await this.loadQueue();
      await this.advance();
      return { kind: "ok", status: ack.status };
    } catch (err) {
      if (err instanceof ApiRequestError) {
        if (err.status === 404) {
          // someone else got here first: surface it and resync the queue
          this.toast = `task ${qaId} is gone (${err.code}); queue refreshed`;
          this.current = null;
          await this.loadQueue();
          return { kind: "server_error", message: err.message };
        }
        // validation or transition error: keep the form state for another try
        this.formError = err.message;
        return { kind: "server_error", message: err.message };
      }
      throw err;
    }
  }

  /** Open the next item in the refreshed queue, if any. */
  async advance(): Promise<void> {
    const next = this.items[0];
    if (next !== undefined) {
      await this.openTask(next.qa_id);
    }
  }

  dismissToast(): void {
    this.toast = null;
  }
}
