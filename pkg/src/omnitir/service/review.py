"""Human-verification stage: review queue, decision application, benchmark export.

All transitions are append-only events. An accepted qa becomes part of the
exported benchmark; an edit spawns a new version that re-enters review so the
inspection guarantees hold for edited content too.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path

from ..errors import FuzzificationError, ReviewError
from ..event_graph import FuzzifiedQA, scan_answer_leakage
from ..util import sha256_hex
from .stores import DecisionStore, QaStore, QueueStore

VERDICTS = ("accept", "reject", "edit")


@dataclass(frozen=True)
class ReviewDecision:
    qa_id: str
    reviewer_id: str
    verdict: str
    edited_question: str | None = None
    edited_answer: str | None = None
    note: str = ""
    decided_at: str = ""

    def __post_init__(self) -> None:
        if self.verdict not in VERDICTS:
            raise ReviewError(f"unknown verdict: {self.verdict}")
        if not self.reviewer_id.strip():
            raise ReviewError("reviewer_id must be nonempty")
        if self.verdict == "edit" and not (self.edited_question or self.edited_answer):
            raise ReviewError("edit decisions need at least one edited field")

    def to_dict(self) -> dict:
        return {
            "qa_id": self.qa_id,
            "reviewer_id": self.reviewer_id,
            "verdict": self.verdict,
            "edited_question": self.edited_question,
            "edited_answer": self.edited_answer,
            "note": self.note,
            "decided_at": self.decided_at or datetime.now(timezone.utc).isoformat(),
        }


class ReviewService:
    def __init__(
        self,
        qa_store: QaStore,
        decision_store: DecisionStore,
        queue_store: QueueStore,
        quorum: int = 1,
        auto_verify_edits: bool = False,
    ):
        if quorum < 1:
            raise ReviewError("quorum must be >= 1")
        self.qa_store = qa_store
        self.decision_store = decision_store
        self.queue_store = queue_store
        self.quorum = quorum
        self.auto_verify_edits = auto_verify_edits

    # -- queue

    def enqueue_for_review(self, qa: FuzzifiedQA) -> int:
        """Idempotent; only screened (needs_review) qa may enter the queue."""
        current = self.qa_store.latest(qa.qa_id)
        status = current.status if current else qa.status
        if status != "needs_review":
            raise ReviewError(f"not screened: qa {qa.qa_id} has status {status}")
        if current is None:
            self.qa_store.append(qa)
        return self.queue_store.enqueue(qa.qa_id)

    def queue(self) -> list[FuzzifiedQA]:
        out = []
        for qa_id in self.queue_store.enqueued_ids():
            qa = self.qa_store.latest(qa_id)
            if qa is not None and qa.status == "needs_review":
                out.append(qa)
        return out

    # -- decisions

    def apply_decision(self, decision: ReviewDecision) -> str:
        qa = self.qa_store.latest(decision.qa_id)
        if qa is None:
            raise ReviewError(f"unknown qa_id: {decision.qa_id}")
        if qa.status == "verified":
            raise ReviewError(f"qa {decision.qa_id} is already verified")
        if qa.status != "needs_review":
            raise ReviewError(
                f"qa {decision.qa_id} is not awaiting review (status {qa.status})"
            )
        self.decision_store.append(decision.to_dict())

        if decision.verdict == "reject":
            self.qa_store.append(replace(qa, status="rejected"))
            return "rejected"

        if decision.verdict == "accept":
            accepts = {
                d["reviewer_id"]
                for d in self.decision_store.for_qa(decision.qa_id)
                if d["verdict"] == "accept"
            }
            if len(accepts) >= self.quorum:
                self.qa_store.append(replace(qa, status="verified"))
                return "verified"
            return "needs_review"

        # edit: a new version enters review; the original line is preserved
        try:
            edited = replace(
                qa,
                qa_id=f"{qa.qa_id}_v{qa.version + 1}",
                version=qa.version + 1,
                parent_qa_id=qa.qa_id,
                question=decision.edited_question or qa.question,
                answer=decision.edited_answer or qa.answer,
                status="verified" if self.auto_verify_edits else "needs_review",
            )
        except FuzzificationError as exc:
            raise ReviewError(f"edit produces an invalid qa: {exc}") from exc
        self.qa_store.append(replace(qa, status="rejected"))
        self.qa_store.append(edited)
        if edited.status == "needs_review":
            self.queue_store.enqueue(edited.qa_id)
        return edited.status

    # -- export

    def export_benchmark(self, out_dir: str | Path) -> dict:
        """Bundle every verified qa; identical store state yields identical bytes."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        verified = [qa for qa in self.qa_store.all_latest() if qa.status == "verified"]
        verified.sort(key=lambda qa: qa.qa_id)
        leaks = scan_answer_leakage(verified)
        if leaks:
            raise ReviewError(f"answer leakage in verified qa: {leaks}")
        lines = []
        per_domain: dict[str, int] = {}
        per_difficulty: dict[str, int] = {}
        for qa in verified:
            per_domain[qa.domain] = per_domain.get(qa.domain, 0) + 1
            per_difficulty[qa.difficulty] = per_difficulty.get(qa.difficulty, 0) + 1
            lines.append(
                json.dumps(
                    {
                        "task_id": qa.qa_id,
                        "question": qa.question,
                        "answer": qa.answer,
                        "domain": qa.domain,
                        "difficulty": qa.difficulty,
                        "hops": qa.hops,
                        "media": [m.to_dict() for m in qa.media],
                        "reasoning_path": list(qa.reasoning_path),
                    },
                    ensure_ascii=False,
                )
            )
        body = "".join(line + "\n" for line in lines)
        (out_dir / "tasks.jsonl").write_text(body, encoding="utf-8")
        manifest = {
            "total": len(verified),
            "per_domain": dict(sorted(per_domain.items())),
            "per_difficulty": dict(sorted(per_difficulty.items())),
            "sha256": sha256_hex(body.encode("utf-8")),
        }
        (out_dir / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        return manifest
