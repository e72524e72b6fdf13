/** Thin DOM layer over the session controller. Browser-only by design; all
 * behavior lives in state.ts where the test suite can reach it. */

import { ReviewSession } from "./state.js";
import { queueRow, taskView } from "./viewmodel.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className = "",
  text = "",
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text) node.textContent = text;
  return node;
}

export function renderQueue(session: ReviewSession, root: HTMLElement): void {
  root.replaceChildren();
  if (session.isEmpty) {
    root.append(el("p", "empty-state", "Nothing waiting for review."));
    return;
  }
  const list = el("ul", "queue");
  for (const item of session.items) {
    const row = queueRow(item);
    const li = el("li", "queue-item");
    li.dataset.qaId = row.qaId;
    li.append(
      el("span", "preview", row.preview),
      el("span", "meta", `${row.domain} / ${row.difficulty} / ${row.mediaKinds}`),
    );
    li.addEventListener("click", () => {
      void session.openTask(row.qaId).then(() => renderAll(session));
    });
    list.append(li);
  }
  root.append(list);

  const pager = el("div", "pager");
  pager.append(el("span", "", `page ${session.page} of ${session.pageCount}`));
  const prev = el("button", "", "prev");
  prev.disabled = session.page <= 1;
  prev.addEventListener("click", () => {
    void session.loadQueue(session.page - 1).then(() => renderAll(session));
  });
  const next = el("button", "", "next");
  next.disabled = session.page >= session.pageCount;
  next.addEventListener("click", () => {
    void session.loadQueue(session.page + 1).then(() => renderAll(session));
  });
  pager.append(prev, next);
  root.append(pager);
}

export function renderTask(session: ReviewSession, root: HTMLElement): void {
  root.replaceChildren();
  const detail = session.current;
  if (detail === null) {
    root.append(el("p", "empty-state", "Select a task from the queue."));
    return;
  }
  const view = taskView(detail);

  const players = el("div", "players");
  for (const slot of view.media) {
    if (session.mediaAvailable.get(slot.mediaId) === false) {
      players.append(
        el("div", "banner error", `media ${slot.mediaId} is unavailable; decisions disabled`),
      );
      continue;
    }
    const src = session.mediaSrc(slot.mediaId);
    if (slot.element === "img") {
      const img = el("img", "media-image");
      img.src = src;
      players.append(img);
    } else {
      const player = el(slot.element, "media-player");
      player.controls = true;
      player.preload = "metadata";
      player.src = src;
      players.append(player);
    }
  }
  root.append(players);

  root.append(el("h2", "", view.question));
  root.append(el("p", "answer", `Answer: ${view.answer}`));
  root.append(el("p", "meta", `${view.domain} / ${view.difficulty} / ${view.hops} hops`));

  const fuzz = el("table", "fuzz-map");
  for (const row of view.fuzzMap) {
    const tr = el("tr");
    tr.append(el("td", "", row.targetId), el("td", "", row.original), el("td", "", row.surrogate));
    fuzz.append(tr);
  }
  root.append(fuzz);
  root.append(el("p", "path", `Reasoning path: ${view.reasoningPath.join(" -> ")}`));

  root.append(renderDecisionForm(session));
}

function renderDecisionForm(session: ReviewSession): HTMLElement {
  const form = el("div", "decision-form");
  const question = el("textarea", "edit-question");
  question.value = session.draft.editedQuestion;
  question.addEventListener("input", () => (session.draft.editedQuestion = question.value));
  const answer = el("textarea", "edit-answer");
  answer.value = session.draft.editedAnswer;
  answer.addEventListener("input", () => (session.draft.editedAnswer = answer.value));
  const note = el("input", "note");
  note.value = session.draft.note;
  note.addEventListener("input", () => (session.draft.note = note.value));

  const buttons = el("div", "buttons");
  const accept = el("button", "accept", "Accept (a)");
  const reject = el("button", "reject", "Reject (r)");
  const edit = el("button", "edit", "Submit edit (e)");
  for (const button of [accept, reject, edit]) {
    button.disabled = session.decisionsDisabled;
  }
  accept.addEventListener("click", () => void submitAndRender(session, "accept"));
  reject.addEventListener("click", () => void confirmReject(session));
  edit.addEventListener("click", () => void submitAndRender(session, "edit"));
  buttons.append(accept, reject, edit);

  form.append(question, answer, note, buttons);
  if (session.formError) {
    form.append(el("div", "banner error", session.formError));
  }
  return form;
}

async function confirmReject(session: ReviewSession): Promise<void> {
  // rejections always go through an explicit confirmation
  if (window.confirm("Reject this task?")) {
    await session.submit("reject", { confirmReject: true });
  }
  renderAll(session);
}

async function submitAndRender(session: ReviewSession, verdict: "accept" | "edit"): Promise<void> {
  await session.submit(verdict);
  renderAll(session);
}

export function renderToast(session: ReviewSession, root: HTMLElement): void {
  root.replaceChildren();
  if (session.toast) {
    const toast = el("div", "toast", session.toast);
    toast.addEventListener("click", () => {
      session.dismissToast();
      renderToast(session, root);
    });
    root.append(toast);
  }
}

export function renderAll(session: ReviewSession): void {
  renderQueue(session, document.getElementById("queue")!);
  renderTask(session, document.getElementById("task")!);
  renderToast(session, document.getElementById("toast")!);
}

export function bindShortcuts(session: ReviewSession): void {
  document.addEventListener("keydown", (event) => {
    if (event.target instanceof HTMLTextAreaElement || event.target instanceof HTMLInputElement) {
      return;
    }
    if (event.key === "a") void submitAndRender(session, "accept");
    if (event.key === "r") void confirmReject(session);
    if (event.key === "n") void session.advance().then(() => renderAll(session));
  });
}
