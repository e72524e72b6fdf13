"""Canonical JSON, hashing, and JSONL helpers."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Iterator


def canonical_json(value: Any) -> str:
    """Serialize with sorted keys and no whitespace, for hashing and cache keys."""
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def hash_json(value: Any) -> str:
    return sha256_hex(canonical_json(value).encode("utf-8"))


def read_jsonl(path: str | Path) -> Iterator[dict]:
    path = Path(path)
    if not path.exists():
        return
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)


def append_jsonl(path: str | Path, record: dict) -> None:
    """Append one record; never rewrites existing lines."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, ensure_ascii=False) + "\n")
        fh.flush()


def last_json_block(text: str) -> str:
    """Return the raw content of the last fenced ```json block in *text*."""
    marker = "```json"
    start = text.rfind(marker)
    if start < 0:
        raise ValueError("no json block")
    body_start = start + len(marker)
    end = text.find("```", body_start)
    if end < 0:
        raise ValueError("unterminated json block")
    return text[body_start:end]
