"""Request/response cassettes for hermetic record-and-replay runs.

One cassette is a JSONL file of ``{"request_hash": ..., "response_text": ...}``
entries. Tool results ride in ``response_text`` as serialized JSON. In replay
mode a missing entry is an infrastructure error, never a live call.
"""

from __future__ import annotations

import threading
from pathlib import Path

from .errors import CassetteMiss, ConfigError
from .util import append_jsonl, read_jsonl

LIVE_RECORD = "live_record"
REPLAY = "replay"
LIVE_ONLY = "live_only"
CASSETTE_MODES = (LIVE_RECORD, REPLAY, LIVE_ONLY)


class Cassette:
    def __init__(self, path: str | Path, mode: str = REPLAY):
        if mode not in CASSETTE_MODES:
            raise ConfigError(f"unknown cassette mode: {mode}")
        self.path = Path(path)
        self.mode = mode
        self._lock = threading.Lock()
        self._entries: dict[str, str] = {}
        for record in read_jsonl(self.path):
            self._entries[record["request_hash"]] = record["response_text"]

    def __len__(self) -> int:
        return len(self._entries)

    def lookup(self, request_hash: str) -> str | None:
        """Return the recorded response, or None when a live call should run."""
        with self._lock:
            hit = self._entries.get(request_hash)
        if hit is not None and self.mode != LIVE_ONLY:
            return hit
        if self.mode == REPLAY:
            raise CassetteMiss(f"cassette miss: {request_hash} not in {self.path.name}")
        return None

    def record(self, request_hash: str, response_text: str) -> None:
        if self.mode != LIVE_RECORD:
            return
        with self._lock:
            if request_hash in self._entries:
                return
            self._entries[request_hash] = response_text
            append_jsonl(
                self.path,
                {"request_hash": request_hash, "response_text": response_text},
            )
