"""Flat-file persistence: JSONL event stores plus per-id JSON documents.

JSONL stores are append-only; a status change is a new line, never a rewrite.
No database dependency; the classes here are the seam where one could go.
"""

from __future__ import annotations

import json
import threading
from pathlib import Path

from ..agent_runtime import Trajectory
from ..errors import StoreError
from ..event_graph import EventGraph, FuzzifiedQA
from ..signal_miner import MinedSignals
from ..util import append_jsonl, read_jsonl


class GraphStore:
    """One JSON document per graph_id under <root>/graphs/."""

    def __init__(self, root: str | Path):
        self.dir = Path(root) / "graphs"
        self.dir.mkdir(parents=True, exist_ok=True)

    def save(self, graph: EventGraph) -> Path:
        path = self.dir / f"{graph.graph_id}.json"
        path.write_text(
            json.dumps(graph.to_dict(), ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
        )
        return path

    def load(self, graph_id: str) -> EventGraph:
        path = self.dir / f"{graph_id}.json"
        if not path.exists():
            raise StoreError(f"unknown graph id: {graph_id}")
        return EventGraph.from_dict(json.loads(path.read_text(encoding="utf-8")))

    def ids(self) -> list[str]:
        return sorted(p.stem for p in self.dir.glob("*.json"))


class SignalsStore:
    """One mined-signals document per media id under <root>/signals/."""

    def __init__(self, root: str | Path):
        self.dir = Path(root) / "signals"
        self.dir.mkdir(parents=True, exist_ok=True)

    def save(self, signals: MinedSignals) -> Path:
        path = self.dir / f"{signals.source.id}.json"
        path.write_text(
            json.dumps(signals.to_dict(), ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
        )
        return path

    def load(self, media_id: str) -> MinedSignals:
        path = self.dir / f"{media_id}.json"
        if not path.exists():
            raise StoreError(f"no mined signals for media id: {media_id}")
        return MinedSignals.from_dict(json.loads(path.read_text(encoding="utf-8")))

    def ids(self) -> list[str]:
        return sorted(p.stem for p in self.dir.glob("*.json"))


class QaStore:
    """Append-only qa event log; the latest line per qa_id is its current state."""

    def __init__(self, root: str | Path):
        self.path = Path(root) / "qa.jsonl"
        self._lock = threading.Lock()

    def append(self, qa: FuzzifiedQA) -> int:
        with self._lock:
            seq = sum(1 for _ in read_jsonl(self.path))
            append_jsonl(self.path, {"seq": seq, "qa": qa.to_dict()})
            return seq

    def latest(self, qa_id: str) -> FuzzifiedQA | None:
        found = None
        for record in read_jsonl(self.path):
            if record["qa"]["qa_id"] == qa_id:
                found = record
        return FuzzifiedQA.from_dict(found["qa"]) if found else None

    def all_latest(self) -> list[FuzzifiedQA]:
        latest: dict[str, dict] = {}
        for record in read_jsonl(self.path):
            latest[record["qa"]["qa_id"]] = record["qa"]
        return [FuzzifiedQA.from_dict(latest[k]) for k in sorted(latest)]

    def history(self, qa_id: str) -> list[FuzzifiedQA]:
        return [
            FuzzifiedQA.from_dict(r["qa"])
            for r in read_jsonl(self.path)
            if r["qa"]["qa_id"] == qa_id
        ]


class DecisionStore:
    """Append-only log of review decisions."""

    def __init__(self, root: str | Path):
        self.path = Path(root) / "decisions.jsonl"
        self._lock = threading.Lock()

    def append(self, decision: dict) -> None:
        with self._lock:
            append_jsonl(self.path, decision)

    def for_qa(self, qa_id: str) -> list[dict]:
        return [d for d in read_jsonl(self.path) if d["qa_id"] == qa_id]


class QueueStore:
    """Append-only enqueue log; active membership is derived, never rewritten."""

    def __init__(self, root: str | Path):
        self.path = Path(root) / "review_queue.jsonl"
        self._lock = threading.Lock()

    def enqueued_ids(self) -> list[str]:
        seen: list[str] = []
        for record in read_jsonl(self.path):
            if record["qa_id"] not in seen:
                seen.append(record["qa_id"])
        return seen

    def enqueue(self, qa_id: str) -> int:
        with self._lock:
            ids = self.enqueued_ids()
            if qa_id in ids:
                return ids.index(qa_id)
            append_jsonl(self.path, {"event": "enqueue", "qa_id": qa_id})
            return len(ids)


class TrajectoryStore:
    """Append-only JSONL of finished trajectories."""

    def __init__(self, root: str | Path, name: str = "trajectories.jsonl"):
        self.path = Path(root) / name
        self._lock = threading.Lock()

    def append(self, trajectory: Trajectory) -> None:
        with self._lock:
            append_jsonl(self.path, trajectory.to_dict())

    def all(self) -> list[Trajectory]:
        return [Trajectory.from_dict(r) for r in read_jsonl(self.path)]
