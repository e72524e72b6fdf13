import { describe, expect, it } from "vitest";

import { queueRow, taskView } from "../src/viewmodel.js";
import { makeQa } from "./fixture_server.js";

const QUEUE_ITEM = {
  qa_id: "qa_42",
  question_preview: "What closes the sequence heard near a metallic chime?",
  domain: "Art",
  difficulty: "medium",
  media_kinds: ["audio", "video"],
  status: "needs_review",
};

describe("view models are traceable to API payload fields", () => {
  it("queue row carries payload fields through unchanged", () => {
    const row = queueRow(QUEUE_ITEM);
    expect(row.qaId).toBe(QUEUE_ITEM.qa_id);
    expect(row.preview).toBe(QUEUE_ITEM.question_preview);
    expect(row.domain).toBe(QUEUE_ITEM.domain);
    expect(row.difficulty).toBe(QUEUE_ITEM.difficulty);
    expect(row.mediaKinds).toBe("audio, video");
    expect(row.status).toBe(QUEUE_ITEM.status);
    expect(row).toMatchSnapshot();
  });

  it("task view maps the detail payload field-for-field", () => {
    const detail = makeQa("qa_42", {
      media: [
        { id: "m-v", kind: "video", uri: "store/m-v", duration_s: 90, width: 64, height: 48 },
        { id: "m-a", kind: "audio", uri: "store/m-a", duration_s: 30 },
        { id: "m-i", kind: "image", uri: "store/m-i", width: 64, height: 64 },
      ],
    });
    const view = taskView(detail);
    expect(view.question).toBe(detail.question);
    expect(view.answer).toBe(detail.answer);
    expect(view.fuzzMap).toEqual(
      detail.fuzzed.map((f) => ({ targetId: f.id, original: f.original, surrogate: f.surrogate })),
    );
    expect(view.reasoningPath).toEqual(detail.reasoning_path);
    expect(view.media.map((m) => m.element)).toEqual(["video", "audio", "img"]);
    expect(view).toMatchSnapshot();
  });
});
