/** Payload types mirroring the review API's documented response schemas. */

export interface QueueItemView {
  qa_id: string;
  question_preview: string;
  domain: string;
  difficulty: string;
  media_kinds: string[];
  status: string;
}

export interface QueuePage {
  items: QueueItemView[];
  page: number;
  page_size: number;
  total: number;
}

export interface FuzzedEntityView {
  id: string;
  original: string;
  surrogate: string;
}

export interface MediaRefView {
  id: string;
  kind: string;
  uri: string;
  duration_s?: number;
  width?: number;
  height?: number;
}

export interface QaDetail {
  qa_id: string;
  question: string;
  answer: string;
  fuzzed: FuzzedEntityView[];
  reasoning_path: string[];
  hops: number;
  difficulty: string;
  domain: string;
  media: MediaRefView[];
  status: string;
  graph_id: string;
  version: number;
  parent_qa_id: string | null;
}

export type Verdict = "accept" | "reject" | "edit";

export interface DecisionBody {
  verdict: Verdict;
  reviewer_id: string;
  edited_question?: string | null;
  edited_answer?: string | null;
  note?: string;
}

export interface DecisionAck {
  qa_id: string;
  status: string;
}

export interface ApiErrorBody {
  code: string;
  message: string;
}

export interface QueueFilters {
  domain?: string;
  difficulty?: string;
}
