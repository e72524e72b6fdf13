"""Model backend interface: (system, messages with text/media parts, tools) -> text.

All model inference is external. Three implementations cover the lifecycle:
an HTTP chat-completions client for live runs, a scripted backend for tests,
and a cassette wrapper that records live traffic and replays it hermetically.
"""

from __future__ import annotations

import base64
import os
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import httpx

from .cassette import Cassette
from .errors import BackendError
from .media_store import MediaRef
from .util import hash_json


@dataclass(frozen=True)
class TextPart:
    text: str

    def to_dict(self) -> dict:
        return {"text": self.text}


@dataclass(frozen=True)
class MediaPart:
    ref: MediaRef

    def to_dict(self) -> dict:
        return {"media": ref_dict(self.ref)}


def ref_dict(ref: MediaRef) -> dict:
    return {"id": ref.id, "kind": ref.kind}


Part = TextPart | MediaPart


@dataclass(frozen=True)
class Message:
    role: str  # "user" | "assistant" | "tool"
    parts: tuple[Part, ...]

    def to_dict(self) -> dict:
        return {"role": self.role, "parts": [p.to_dict() for p in self.parts]}

    def text(self) -> str:
        return "".join(p.text for p in self.parts if isinstance(p, TextPart))


@dataclass(frozen=True)
class ModelRequest:
    system: str | None
    messages: tuple[Message, ...]
    tools: tuple[dict, ...] = ()
    options: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "system": self.system,
            "messages": [m.to_dict() for m in self.messages],
            "tools": list(self.tools),
            "options": self.options,
        }

    def request_hash(self) -> str:
        return hash_json(self.to_dict())


def user_message(*parts: Part) -> Message:
    return Message("user", tuple(parts))


class ModelBackend(Protocol):
    backend_id: str

    def complete(self, request: ModelRequest) -> str: ...


class ScriptedBackend:
    """Replays a fixed response sequence; used to script tests end to end."""

    def __init__(self, responses: Sequence[str], backend_id: str = "scripted"):
        self.backend_id = backend_id
        self._responses = list(responses)
        self.requests: list[ModelRequest] = []

    def complete(self, request: ModelRequest) -> str:
        self.requests.append(request)
        if not self._responses:
            raise BackendError(f"scripted backend {self.backend_id} exhausted")
        return self._responses.pop(0)


class RuleBackend:
    """Computes responses from the request via a callable; for table-driven tests."""

    def __init__(self, rule: Callable[[ModelRequest], str], backend_id: str = "rule"):
        self.backend_id = backend_id
        self.rule = rule
        self.requests: list[ModelRequest] = []

    def complete(self, request: ModelRequest) -> str:
        self.requests.append(request)
        return self.rule(request)


class HttpChatBackend:
    """Chat-completions style HTTP client.

    Media parts are inlined as data URLs; the API key is resolved from the
    named environment variable at call time and never persisted.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key_env: str = "",
        media_loader: Callable[[MediaRef], bytes] | None = None,
        timeout_s: float = 120.0,
        backend_id: str | None = None,
    ):
        self.endpoint = endpoint
        self.model = model
        self.api_key_env = api_key_env
        self.media_loader = media_loader
        self.timeout_s = timeout_s
        self.backend_id = backend_id or f"http:{model}"

    def complete(self, request: ModelRequest) -> str:
        headers = {"Content-Type": "application/json"}
        if self.api_key_env:
            key = os.environ.get(self.api_key_env, "")
            if not key:
                raise BackendError(f"api key env var {self.api_key_env} is empty")
            headers["Authorization"] = f"Bearer {key}"
        payload = {
            "model": self.model,
            "messages": self._render_messages(request),
            **request.options,
        }
        if request.tools:
            payload["tools"] = list(request.tools)
        try:
            resp = httpx.post(
                self.endpoint, json=payload, headers=headers, timeout=self.timeout_s
            )
        except httpx.HTTPError as exc:
            raise BackendError(f"backend request failed: {exc}") from exc
        if resp.status_code != 200:
            raise BackendError(f"backend returned {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, ValueError) as exc:
            raise BackendError(f"malformed backend response: {exc}") from exc

    def _render_messages(self, request: ModelRequest) -> list[dict]:
        messages: list[dict] = []
        if request.system:
            messages.append({"role": "system", "content": request.system})
        for msg in request.messages:
            content: list[dict] = []
            for part in msg.parts:
                if isinstance(part, TextPart):
                    content.append({"type": "text", "text": part.text})
                else:
                    content.append(self._media_content(part.ref))
            role = "user" if msg.role == "tool" else msg.role
            messages.append({"role": role, "content": content})
        return messages

    def _media_content(self, ref: MediaRef) -> dict:
        if self.media_loader is None:
            return {"type": "text", "text": f"[media {ref.kind} {ref.id}]"}
        data = base64.b64encode(self.media_loader(ref)).decode("ascii")
        mime = {"image": "image/png", "audio": "audio/wav", "video": "video/x-msvideo"}[ref.kind]
        if ref.kind == "image":
            return {"type": "image_url", "image_url": {"url": f"data:{mime};base64,{data}"}}
        return {"type": "input_media", "media": {"kind": ref.kind, "data": data, "mime": mime}}


class CassetteBackend:
    """Record/replay wrapper keyed by the canonical request hash."""

    def __init__(
        self,
        cassette: Cassette,
        inner: ModelBackend | None = None,
        backend_id: str | None = None,
    ):
        self.cassette = cassette
        self.inner = inner
        self.backend_id = backend_id or (inner.backend_id if inner is not None else "cassette")

    def complete(self, request: ModelRequest) -> str:
        key = request.request_hash()
        hit = self.cassette.lookup(key)
        if hit is not None:
            return hit
        if self.inner is None:
            raise BackendError("cassette backend has no live inner backend")
        response = self.inner.complete(request)
        self.cassette.record(key, response)
        return response
