"""Shared fixture builders: synthetic media, scripted backends, report stubs."""

from __future__ import annotations

import io
import json
import math
import struct
import tempfile
import wave
from pathlib import Path

import cv2
import numpy as np
from PIL import Image

from omnitir.agent_runtime import Step, render_step_model_text
from omnitir.backends import ModelRequest
from omnitir.toolbelt import ToolCall
from omnitir.agent_runtime import render_call


def make_wav_bytes(seconds: float, rate: int = 4000, freq: float = 440.0) -> bytes:
    frames = int(round(seconds * rate))
    samples = b"".join(
        struct.pack("<h", int(12000 * math.sin(2 * math.pi * freq * i / rate)))
        for i in range(frames)
    )
    buffer = io.BytesIO()
    with wave.open(buffer, "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(rate)
        fh.writeframes(samples)
    return buffer.getvalue()


def make_avi_bytes(seconds: float, fps: int = 4, width: int = 64, height: int = 48) -> bytes:
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "clip.avi"
        writer = cv2.VideoWriter(
            str(path), cv2.VideoWriter_fourcc(*"MJPG"), fps, (width, height)
        )
        assert writer.isOpened()
        for i in range(int(round(seconds * fps))):
            frame = np.full((height, width, 3), ((i * 7) % 255, 90, 180), dtype=np.uint8)
            writer.write(frame)
        writer.release()
        return path.read_bytes()


def make_png_bytes(width: int = 100, height: int = 100, color=(200, 30, 60)) -> bytes:
    buffer = io.BytesIO()
    Image.new("RGB", (width, height), color).save(buffer, format="PNG")
    return buffer.getvalue()


def fenced(payload) -> str:
    return "```json\n" + json.dumps(payload, ensure_ascii=False, indent=2) + "\n```"


def image_report_obj(summary: str = "a plain test card image") -> dict:
    return {"ocr": [], "objects": [], "faces": [], "global_summary": summary}


def audio_report_obj(summary: str = "a steady test tone") -> dict:
    return {
        "asr": [],
        "speakers": {},
        "events": [],
        "nonspeech_information": "continuous sine tone",
        "global_summary": summary,
    }


def turn_call(thought: str, name: str, arguments: dict) -> str:
    """Model turn text in the canonical rendered form (thought + call block)."""
    return f"{thought}\n{render_call(ToolCall('', name, arguments))}"


def turn_answer(thought: str, answer: str) -> str:
    return f"{thought}\n<answer>{answer}</answer>"


class CountingBackend:
    """Delegates to scripted replies while counting calls."""

    def __init__(self, replies: list[str], backend_id: str = "counting"):
        self.replies = list(replies)
        self.backend_id = backend_id
        self.calls = 0
        self.requests: list[ModelRequest] = []

    def complete(self, request: ModelRequest) -> str:
        self.calls += 1
        self.requests.append(request)
        return self.replies.pop(0)


class TreePolicyBackend:
    """Continuations keyed by the tuple of prior assistant turn texts.

    Visiting the same node repeatedly walks its continuation list in order,
    which is how k samples per node are scripted deterministically.
    """

    backend_id = "tree-policy"

    def __init__(self, tree: dict[tuple[str, ...], list[str]]):
        self.tree = {key: list(value) for key, value in tree.items()}
        self._cursor: dict[tuple[str, ...], int] = {}

    def complete(self, request: ModelRequest) -> str:
        key = tuple(m.text() for m in request.messages if m.role == "assistant")
        options = self.tree[key]
        i = self._cursor.get(key, 0)
        self._cursor[key] = i + 1
        return options[i % len(options)]


class ScriptedVerifier:
    """Keeps exactly the prefixes whose rendered turn texts are whitelisted."""

    def __init__(self, keep: set[tuple[str, ...]]):
        self.keep = keep

    def assess(self, task, steps: list[Step]) -> bool:
        return tuple(render_step_model_text(s) for s in steps) in self.keep
