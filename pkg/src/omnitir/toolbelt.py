"""Tool registry, dispatch, and the built-in tool implementations.

Dispatch is total: for any syntactically valid call it returns a ToolResult,
downgrading tool-level failures to ``tool_error`` so an episode can continue.
Only two infrastructure faults abort: a cassette miss in replay mode and a
corrupted registry. Network-facing tools are replayable via cassettes.
"""

from __future__ import annotations

import html.parser
import json
import math
import re
import resource
import subprocess
import sys
from dataclasses import dataclass, replace
from typing import Callable, Protocol
from urllib.parse import urlsplit

import httpx
import jsonschema

from .backends import MediaPart, ModelBackend, ModelRequest, TextPart, user_message
from .cassette import Cassette
from .errors import CassetteMiss, OmnitirError
from .media_store import CropBox, MediaRef, MediaStore, TimeSpan
from .signal_miner import MinedSignals
from .templates import load_template
from .util import hash_json

OBSERVATION_CAP = 4000
MAX_QUERY_CHARS = 512


@dataclass(frozen=True)
class ToolSchema:
    name: str
    description: str
    parameters: dict

    def to_function_schema(self) -> dict:
        return {
            "type": "function",
            "function": {
                "name": self.name,
                "description": self.description,
                "parameters": self.parameters,
            },
        }

    def validate_arguments(self, arguments: dict) -> None:
        schema = dict(self.parameters)
        schema["additionalProperties"] = False
        jsonschema.validate(instance=arguments, schema=schema)


@dataclass(frozen=True)
class ToolCall:
    call_id: str
    name: str
    arguments: dict

    def to_dict(self) -> dict:
        return {"call_id": self.call_id, "name": self.name, "arguments": self.arguments}

    @classmethod
    def from_dict(cls, data: dict) -> "ToolCall":
        return cls(data["call_id"], data["name"], data["arguments"])


@dataclass(frozen=True)
class ToolResult:
    call_id: str
    status: str  # "ok" | "tool_error"
    text: str
    media: tuple[MediaRef, ...] = ()
    truncated: bool = False

    def to_dict(self) -> dict:
        return {
            "call_id": self.call_id,
            "status": self.status,
            "text": self.text,
            "media": [m.to_dict() for m in self.media],
            "truncated": self.truncated,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ToolResult":
        return cls(
            call_id=data["call_id"],
            status=data["status"],
            text=data["text"],
            media=tuple(MediaRef.from_dict(m) for m in data.get("media", [])),
            truncated=data.get("truncated", False),
        )


def ok(text: str, media: tuple[MediaRef, ...] = ()) -> ToolResult:
    return ToolResult("", "ok", text, media)


def tool_error(message: str) -> ToolResult:
    return ToolResult("", "tool_error", message)


@dataclass(frozen=True)
class Tool:
    schema: ToolSchema
    fn: Callable[[dict], ToolResult]
    use_cassette: bool = False  # local deterministic tools skip the cassette


class ToolRegistry:
    """Immutable after construction; safe to share across concurrent episodes."""

    def __init__(self, tools: list[Tool] = ()):  # type: ignore[assignment]
        self._tools: dict[str, Tool] = {}
        for tool in tools or ():
            self.register(tool)

    def register(self, tool: Tool) -> None:
        if self._tools.get(tool.schema.name) is not None:
            raise OmnitirError(f"duplicate tool name: {tool.schema.name}")
        self._tools[tool.schema.name] = tool

    def get(self, name: str) -> Tool | None:
        tool = self._tools.get(name)
        if tool is not None and not isinstance(tool, Tool):
            raise OmnitirError("tool registry corrupted")
        return tool

    def names(self) -> list[str]:
        return sorted(self._tools)

    def schemas(self) -> list[dict]:
        return [self._tools[name].schema.to_function_schema() for name in sorted(self._tools)]

    def subset(self, names: list[str]) -> "ToolRegistry":
        missing = [n for n in names if n not in self._tools]
        if missing:
            raise OmnitirError(f"unknown tools in selector: {missing}")
        return ToolRegistry([self._tools[n] for n in names])

    def merged_with(self, tools: list[Tool]) -> "ToolRegistry":
        out = ToolRegistry(list(self._tools.values()))
        for tool in tools:
            out.register(tool)
        return out


def export_schema_doc(registry: ToolRegistry) -> str:
    """Function-calling schema document, stable formatting for goldens."""
    return json.dumps(registry.schemas(), indent=2, ensure_ascii=False) + "\n"


def dispatch(
    call: ToolCall,
    registry: ToolRegistry,
    cassette: Cassette | None = None,
    observation_cap: int = OBSERVATION_CAP,
) -> ToolResult:
    tool = registry.get(call.name)
    if tool is None:
        return _finish(tool_error(f"unknown tool: {call.name}"), call, observation_cap)
    try:
        tool.schema.validate_arguments(call.arguments)
    except jsonschema.ValidationError as exc:
        return _finish(tool_error(f"invalid arguments: {exc.message}"), call, observation_cap)

    key = hash_json({"tool": call.name, "arguments": call.arguments})
    if cassette is not None and tool.use_cassette:
        hit = cassette.lookup(key)  # raises CassetteMiss in replay mode
        if hit is not None:
            return _finish(ToolResult.from_dict(json.loads(hit)), call, observation_cap)

    try:
        result = tool.fn(call.arguments)
    except CassetteMiss:
        raise
    except OmnitirError as exc:
        result = tool_error(str(exc))
    except Exception as exc:  # noqa: BLE001 - tool faults must not kill the episode
        result = tool_error(f"{type(exc).__name__}: {exc}")

    if cassette is not None and tool.use_cassette:
        cassette.record(key, json.dumps(result.to_dict(), ensure_ascii=False))
    return _finish(result, call, observation_cap)


def _finish(result: ToolResult, call: ToolCall, observation_cap: int) -> ToolResult:
    text = result.text
    truncated = result.truncated
    if len(text) > observation_cap:
        text = text[:observation_cap]
        truncated = True
    return replace(result, call_id=call.call_id, text=text, truncated=truncated)


# --- web tools ---------------------------------------------------------------


class WebClient(Protocol):
    def search(self, query: str) -> list[dict]: ...

    def fetch(self, url: str) -> tuple[int, str]: ...

    def image_search(self, query: str) -> list[dict]: ...


class HttpWebClient:
    """Minimal JSON search API + page fetch client with injectable endpoints."""

    def __init__(
        self,
        search_endpoint: str = "",
        image_search_endpoint: str = "",
        api_key_env: str = "",
        timeout_s: float = 30.0,
        result_count: int = 5,
    ):
        self.search_endpoint = search_endpoint
        self.image_search_endpoint = image_search_endpoint
        self.api_key_env = api_key_env
        self.timeout_s = timeout_s
        self.result_count = result_count

    def _query(self, endpoint: str, query: str) -> list[dict]:
        if not endpoint:
            raise OmnitirError("no search endpoint configured")
        import os

        headers = {}
        if self.api_key_env:
            headers["Authorization"] = f"Bearer {os.environ.get(self.api_key_env, '')}"
        resp = httpx.get(
            endpoint, params={"q": query, "count": self.result_count},
            headers=headers, timeout=self.timeout_s,
        )
        resp.raise_for_status()
        return list(resp.json().get("results", []))

    def search(self, query: str) -> list[dict]:
        return self._query(self.search_endpoint, query)

    def image_search(self, query: str) -> list[dict]:
        return self._query(self.image_search_endpoint, query)

    def fetch(self, url: str) -> tuple[int, str]:
        resp = httpx.get(url, timeout=self.timeout_s, follow_redirects=True)
        return resp.status_code, resp.text


class StaticWebClient:
    """Canned search/page fixtures for tests and offline demos."""

    def __init__(
        self,
        search_results: dict[str, list[dict]] | None = None,
        pages: dict[str, str] | None = None,
        image_results: dict[str, list[dict]] | None = None,
    ):
        self.search_results = search_results or {}
        self.pages = pages or {}
        self.image_results = image_results or {}

    def search(self, query: str) -> list[dict]:
        return self.search_results.get(query, [])

    def image_search(self, query: str) -> list[dict]:
        return self.image_results.get(query, [])

    def fetch(self, url: str) -> tuple[int, str]:
        if url in self.pages:
            return 200, self.pages[url]
        return 404, ""


class _TextExtractor(html.parser.HTMLParser):
    _SKIP = {"script", "style", "noscript"}

    def __init__(self) -> None:
        super().__init__()
        self._chunks: list[str] = []
        self._skip_depth = 0

    def handle_starttag(self, tag, attrs):
        if tag in self._SKIP:
            self._skip_depth += 1

    def handle_endtag(self, tag):
        if tag in self._SKIP and self._skip_depth:
            self._skip_depth -= 1

    def handle_data(self, data):
        if not self._skip_depth and data.strip():
            self._chunks.append(data.strip())

    def text(self) -> str:
        return "\n".join(self._chunks)


def extract_page_text(raw: str) -> str:
    if "<" not in raw:
        return raw.strip()
    parser = _TextExtractor()
    parser.feed(raw)
    return parser.text()


def _format_results(results: list[dict]) -> str:
    lines = []
    for i, item in enumerate(results, start=1):
        lines.append(f"{i}. {item.get('title', '')}")
        lines.append(f"   {item.get('url', '')}")
        snippet = item.get("snippet") or item.get("image_url") or ""
        if snippet:
            lines.append(f"   {snippet}")
    return "\n".join(lines) if lines else "no results"


def _check_query(query: str) -> str | None:
    if not query.strip():
        return "empty query"
    if len(query) > MAX_QUERY_CHARS:
        return "query too long"
    return None


def make_web_search_tool(client: WebClient) -> Tool:
    schema = ToolSchema(
        name="web_search",
        description="Searches the web and returns the top ranked results (title, url, snippet).",
        parameters={
            "type": "object",
            "properties": {
                "query": {"type": "string", "description": "The search query."},
            },
            "required": ["query"],
        },
    )

    def fn(args: dict) -> ToolResult:
        problem = _check_query(args["query"])
        if problem:
            return tool_error(problem)
        return ok(_format_results(client.search(args["query"])))

    return Tool(schema, fn, use_cassette=True)


def make_web_image_search_tool(client: WebClient) -> Tool:
    schema = ToolSchema(
        name="web_image_search",
        description="Searches the web for images and returns the top results (title, url, image url).",
        parameters={
            "type": "object",
            "properties": {
                "query": {"type": "string", "description": "The image search query."},
            },
            "required": ["query"],
        },
    )

    def fn(args: dict) -> ToolResult:
        problem = _check_query(args["query"])
        if problem:
            return tool_error(problem)
        return ok(_format_results(client.image_search(args["query"])))

    return Tool(schema, fn, use_cassette=True)


def make_page_browser_tool(client: WebClient) -> Tool:
    schema = ToolSchema(
        name="page_browser",
        description="Fetches a web page and returns its extracted text content.",
        parameters={
            "type": "object",
            "properties": {
                "url": {"type": "string", "description": "The page URL to read."},
            },
            "required": ["url"],
        },
    )

    def fn(args: dict) -> ToolResult:
        url = args["url"]
        parts = urlsplit(url)
        if parts.scheme not in ("http", "https") or not parts.netloc:
            return tool_error(f"malformed url: {url}")
        status, raw = client.fetch(url)
        if not 200 <= status < 300:
            return tool_error(f"http error {status}")
        return ok(extract_page_text(raw))

    return Tool(schema, fn, use_cassette=True)


# --- code executor -----------------------------------------------------------


@dataclass(frozen=True)
class SandboxConfig:
    timeout_s: float = 30.0
    memory_mb: int = 512
    interpreter: str = sys.executable


# Best-effort guard: model code runs without network inside the subprocess.
_SANDBOX_PRELUDE = """\
import socket as _socket
def _no_network(*args, **kwargs):
    raise OSError("network access is disabled in the code sandbox")
_socket.socket = _no_network
_socket.create_connection = _no_network
del _socket
"""


def run_sandboxed(code: str, config: SandboxConfig) -> ToolResult:
    try:
        compile(code, "<tool>", "eval")
    except SyntaxError:
        body = code
    else:
        # Bare expressions print their value, matching calculator-style usage.
        body = f"__result = ({code})\nif __result is not None:\n    print(__result)"

    def limits() -> None:
        cap = config.memory_mb * 1024 * 1024
        resource.setrlimit(resource.RLIMIT_AS, (cap, cap))

    try:
        proc = subprocess.run(
            [config.interpreter, "-I", "-c", _SANDBOX_PRELUDE + body],
            capture_output=True,
            text=True,
            timeout=config.timeout_s,
            preexec_fn=limits,
        )
    except subprocess.TimeoutExpired:
        return tool_error(f"timeout after {config.timeout_s:g} s")
    except (OSError, ValueError) as exc:
        return tool_error(f"sandbox unavailable: {exc}")
    text = proc.stdout.rstrip("\n")
    if proc.stderr.strip():
        # Exceptions inside executed code are signal, not tool failure.
        text = (text + "\n" if text else "") + "[stderr]\n" + proc.stderr.rstrip("\n")
    return ok(text)


def make_code_executor_tool(config: SandboxConfig | None = None) -> Tool:
    cfg = config or SandboxConfig()
    schema = ToolSchema(
        name="code_executor",
        description="Executes Python code in a sandbox and returns stdout/stderr. Bare expressions are evaluated and printed.",
        parameters={
            "type": "object",
            "properties": {
                "code": {"type": "string", "description": "The Python code to execute."},
            },
            "required": ["code"],
        },
    )

    def fn(args: dict) -> ToolResult:
        return run_sandboxed(args["code"], cfg)

    return Tool(schema, fn)


# --- active perception tools ---------------------------------------------------

# Function schemas for the perception tools; golden files pin the exact bytes,
# so any edit here must update tests/goldens/schemas in the same change.


def read_video_schema() -> ToolSchema:
    return ToolSchema(
        name="read_video",
        description="Reads a specific time segment of a video file to examine details.",
        parameters={
            "type": "object",
            "properties": {
                "video_id": {"type": "string", "description": "The video identifier or filename."},
                "t_start": {"type": "integer", "description": "Start time in seconds."},
                "t_end": {"type": "integer", "description": "End time in seconds."},
            },
            "required": ["video_id", "t_start", "t_end"],
        },
    )


def read_audio_schema() -> ToolSchema:
    return ToolSchema(
        name="read_audio",
        description="Reads a specific time segment of an audio file to listen to details.",
        parameters={
            "type": "object",
            "properties": {
                "audio_id": {"type": "string", "description": "The audio identifier or filename."},
                "t_start": {"type": "integer", "description": "Start time in seconds."},
                "t_end": {"type": "integer", "description": "End time in seconds."},
            },
            "required": ["audio_id", "t_start", "t_end"],
        },
    )


def read_image_schema() -> ToolSchema:
    return ToolSchema(
        name="read_image",
        description="Reads specific images to view them in detail. Optionally crop the image by providing a crop box [left, top, right, bottom].",
        parameters={
            "type": "object",
            "properties": {
                "image_ids": {
                    "type": "array",
                    "items": {"type": "string"},
                    "description": "List of image identifiers or filenames.",
                },
                "crop_box": {
                    "type": "array",
                    "items": {"type": "integer"},
                    "minItems": 4,
                    "maxItems": 4,
                    "description": "Optional. A 4-element list [left, top, right, bottom] specifying the cropping rectangle.",
                },
            },
            "required": ["image_ids"],
        },
    )


def audio_qa_schema() -> ToolSchema:
    return ToolSchema(
        name="audio_qa",
        description="Answer the question using audio from audio_path or video_path.",
        parameters={
            "type": "object",
            "properties": {
                "question": {"type": "string", "description": "The question to answer."},
                "audio_path": {"type": "string", "description": "Audio file path."},
                "video_path": {"type": "string", "description": "Video file path (audio will be used)."},
            },
            "required": ["question"],
        },
    )


def vision_qa_schema() -> ToolSchema:
    return ToolSchema(
        name="vision_qa",
        description="Answer the question using visual content from image_path or video_path.",
        parameters={
            "type": "object",
            "properties": {
                "question": {"type": "string", "description": "The question to answer."},
                "image_path": {"type": "string", "description": "Image file path."},
                "video_path": {"type": "string", "description": "Video file path."},
            },
            "required": ["question"],
        },
    )


PINNED_TOOL_SCHEMAS = {
    "read_video": read_video_schema,
    "read_audio": read_audio_schema,
    "read_image": read_image_schema,
    "audio_qa": audio_qa_schema,
    "vision_qa": vision_qa_schema,
}


def _clip_stub(ref: MediaRef, span: TimeSpan) -> str:
    return (
        f"[{ref.kind} clip {ref.id[:12]}: seconds {span.to_list()[0]}-{span.to_list()[1]}, "
        f"attached to the next turn]"
    )


def make_read_video_tool(store: MediaStore) -> Tool:
    def fn(args: dict) -> ToolResult:
        ref = store.get(args["video_id"])
        if ref.kind != "video":
            return tool_error(f"unknown id: {args['video_id']} is not a video")
        span = TimeSpan(args["t_start"], args["t_end"])
        clip = store.slice_media(ref, span)
        return ok(_clip_stub(clip, span), media=(clip,))

    return Tool(read_video_schema(), fn)


def make_read_audio_tool(store: MediaStore) -> Tool:
    def fn(args: dict) -> ToolResult:
        ref = store.get(args["audio_id"])
        if ref.kind != "audio":
            return tool_error(f"unknown id: {args['audio_id']} is not an audio file")
        span = TimeSpan(args["t_start"], args["t_end"])
        clip = store.slice_media(ref, span)
        return ok(_clip_stub(clip, span), media=(clip,))

    return Tool(read_audio_schema(), fn)


def make_read_image_tool(store: MediaStore) -> Tool:
    def fn(args: dict) -> ToolResult:
        image_ids = args["image_ids"]
        if not image_ids:
            return tool_error("empty list: image_ids must name at least one image")
        out: list[MediaRef] = []
        for image_id in image_ids:
            ref = store.get(image_id)
            if ref.kind != "image":
                return tool_error(f"unknown id: {image_id} is not an image")
            if "crop_box" in args:
                ref = store.crop_image(ref, CropBox.from_list(args["crop_box"]))
            out.append(ref)
        stub = ", ".join(f"{r.id[:12]} ({r.width}x{r.height})" for r in out)
        return ok(f"[images attached to the next turn: {stub}]", media=tuple(out))

    return Tool(read_image_schema(), fn)


def _resolve_media(store: MediaStore, value: str) -> MediaRef:
    return store.get(value)


def make_audio_qa_tool(store: MediaStore, backend: ModelBackend) -> Tool:
    system = load_template("audio_qa_system")

    def fn(args: dict) -> ToolResult:
        path = args.get("audio_path") or args.get("video_path")
        if not path:
            return tool_error("one media path required: pass audio_path or video_path")
        ref = _resolve_media(store, path)
        answer = backend.complete(
            ModelRequest(
                system=system,
                messages=(user_message(TextPart(args["question"]), MediaPart(ref)),),
            )
        )
        return ok(answer)

    return Tool(audio_qa_schema(), fn, use_cassette=True)


def make_vision_qa_tool(store: MediaStore, backend: ModelBackend, name: str = "vision_qa") -> Tool:
    system = load_template("vision_qa_system")
    schema = vision_qa_schema()
    if name != schema.name:
        schema = ToolSchema(name, schema.description, schema.parameters)

    def fn(args: dict) -> ToolResult:
        path = args.get("image_path") or args.get("video_path")
        if not path:
            return tool_error("one media path required: pass image_path or video_path")
        ref = _resolve_media(store, path)
        answer = backend.complete(
            ModelRequest(
                system=system,
                messages=(user_message(TextPart(args["question"]), MediaPart(ref)),),
            )
        )
        return ok(answer)

    return Tool(schema, fn, use_cassette=True)


# --- cross-modal retrieval ----------------------------------------------------


_TOKEN_RE = re.compile(r"[a-z0-9]+")


def _tokens(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


class SummaryIndex:
    """Lexical tf-idf index over mined global summaries."""

    def __init__(self) -> None:
        self._docs: list[tuple[str, str, list[str]]] = []  # (ref_id, kind, tokens)

    def __len__(self) -> int:
        return len(self._docs)

    def add(self, ref_id: str, kind: str, text: str) -> None:
        self._docs.append((ref_id, kind, _tokens(text)))

    def add_signals(self, signals: MinedSignals) -> None:
        pieces: list[str] = []
        for report in signals.image_reports:
            pieces.append(report.global_summary)
        if signals.audio_global_report is not None:
            pieces.append(signals.audio_global_report.global_summary)
        pieces.extend(c.text for c in signals.video_clip_descriptions)
        if pieces:
            self.add(signals.source.id, signals.source.kind, " ".join(pieces))

    def _idf(self, token: str) -> float:
        df = sum(1 for _, _, toks in self._docs if token in toks)
        return math.log((1 + len(self._docs)) / (1 + df)) + 1.0

    def score(self, query: str, doc_tokens: list[str]) -> float:
        return sum(doc_tokens.count(tok) * self._idf(tok) for tok in _tokens(query))

    def search(self, query: str, kind: str | None = None, n: int = 5) -> list[tuple[str, float]]:
        scored = [
            (ref_id, self.score(query, toks))
            for ref_id, doc_kind, toks in self._docs
            if kind is None or doc_kind == kind
        ]
        scored = [(ref_id, s) for ref_id, s in scored if s > 0]
        scored.sort(key=lambda pair: (-pair[1], pair[0]))
        return scored[:n]


def search_related_media(kind: str, query: str, index: SummaryIndex, n: int = 5) -> list[str]:
    return [ref_id for ref_id, _ in index.search(query, kind=kind, n=n)]


def make_related_media_tool(kind: str, index: SummaryIndex, n: int = 5) -> Tool:
    schema = ToolSchema(
        name=f"search_related_{kind}_info",
        description=f"Retrieves context-related {kind} items from the local media database by matching their mined summaries.",
        parameters={
            "type": "object",
            "properties": {
                "query": {"type": "string", "description": "What to look for."},
            },
            "required": ["query"],
        },
    )

    def fn(args: dict) -> ToolResult:
        problem = _check_query(args["query"])
        if problem:
            return tool_error(problem)
        hits = index.search(args["query"], kind=kind, n=n)
        if not hits:
            return ok("no related media found")
        lines = [f"{i}. {ref_id} (score {score:.3f})" for i, (ref_id, score) in enumerate(hits, 1)]
        return ok("\n".join(lines))

    return Tool(schema, fn)
