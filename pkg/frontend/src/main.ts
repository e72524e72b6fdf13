import { ReviewApi } from "./api.js";
import { bindShortcuts, renderAll } from "./dom.js";
import { ReviewSession } from "./state.js";

function reviewerId(): string {
  const key = "omnitir-reviewer-id";
  let id = window.localStorage.getItem(key);
  if (!id) {
    id = window.prompt("Reviewer id?") || `reviewer-${Date.now()}`;
    window.localStorage.setItem(key, id);
  }
  return id;
}

async function start(): Promise<void> {
  const api = new ReviewApi(window.location.origin, reviewerId());
  const session = new ReviewSession(api);
  bindShortcuts(session);
  await session.loadQueue();
  await session.advance();
  renderAll(session);
}

void start();
