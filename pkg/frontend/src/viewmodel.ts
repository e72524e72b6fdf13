/** Pure payload -> display-model mappings.
 *
 * Every displayed field is copied from an API payload field; nothing is
 * invented client-side. Snapshot tests pin this traceability.
 */

import type { QaDetail, QueueItemView } from "./types.js";

export interface QueueRowModel {
  qaId: string;
  preview: string;
  domain: string;
  difficulty: string;
  mediaKinds: string;
  status: string;
}

export function queueRow(item: QueueItemView): QueueRowModel {
  return {
    qaId: item.qa_id,
    preview: item.question_preview,
    domain: item.domain,
    difficulty: item.difficulty,
    mediaKinds: item.media_kinds.join(", "),
    status: item.status,
  };
}

export interface FuzzRowModel {
  targetId: string;
  original: string;
  surrogate: string;
}

export interface MediaSlotModel {
  mediaId: string;
  kind: string;
  /** native element to mount: video/audio players, plain <img> for images */
  element: "video" | "audio" | "img";
}

export interface TaskViewModel {
  qaId: string;
  question: string;
  answer: string;
  domain: string;
  difficulty: string;
  hops: number;
  status: string;
  fuzzMap: FuzzRowModel[];
  reasoningPath: string[];
  media: MediaSlotModel[];
}

export function taskView(detail: QaDetail): TaskViewModel {
  return {
    qaId: detail.qa_id,
    question: detail.question,
    answer: detail.answer,
    domain: detail.domain,
    difficulty: detail.difficulty,
    hops: detail.hops,
    status: detail.status,
    fuzzMap: detail.fuzzed.map((f) => ({
      targetId: f.id,
      original: f.original,
      surrogate: f.surrogate,
    })),
    reasoningPath: [...detail.reasoning_path],
    media: detail.media.map((m) => ({
      mediaId: m.id,
      kind: m.kind,
      element: m.kind === "video" ? "video" : m.kind === "audio" ? "audio" : "img",
    })),
  };
}
