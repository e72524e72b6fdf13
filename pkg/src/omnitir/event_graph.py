"""Cross-modal event graphs and question generation.

A graph is mined from perception signals, expanded with external next-hop
evidence by an agent session, and finally turned into multi-hop questions by
obscuring entities along a reasoning path so the answer requires traversing
the whole path.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace
from typing import Sequence

from .agent_runtime import AgentConfig, Task, run_episode
from .backends import ModelBackend, ModelRequest, TextPart, user_message
from .cassette import Cassette
from .errors import FuzzificationError, GraphError, MiningError, ReportValidationError
from .media_store import MediaRef, TimeSpan
from .signal_miner import MinedSignals, parse_model_report
from .templates import render_template
from .toolbelt import Tool, ToolRegistry, ToolSchema, ToolResult, ok, tool_error
from .util import hash_json

PROVENANCE_CLASSES = ("visual", "audio", "text", "external_web", "external_tool")
EXTERNAL_PROVENANCE = ("external_web", "external_tool")
NODE_KINDS = ("entity", "event")

DOMAINS = (
    "Geography",
    "Technology",
    "History",
    "Finance",
    "Sport",
    "Art",
    "Movie",
    "Science",
    "Food",
)

QA_STATUSES = ("draft", "screened", "needs_review", "verified", "rejected")

SCREENING_CRITERIA = (
    "naturalness_clarity",
    "omni_indispensability",
    "correctness_uniqueness",
)


def difficulty_from_hops(hops: int, medium_at: int = 3, hard_at: int = 4) -> str:
    """Default hop->difficulty mapping; both thresholds are config knobs."""
    if hops >= hard_at:
        return "hard"
    if hops >= medium_at:
        return "medium"
    return "easy"


@dataclass(frozen=True)
class SourceRef:
    """Evidence pointer: exactly one of media, url, or tool call."""

    media_id: str | None = None
    span: tuple[float, float] | None = None
    url: str | None = None
    tool_call_id: str | None = None

    def __post_init__(self) -> None:
        anchors = [v for v in (self.media_id, self.url, self.tool_call_id) if v]
        if len(anchors) != 1:
            raise GraphError(f"source needs exactly one anchor, got {self.to_dict()}")
        if self.span is not None and self.media_id is None:
            raise GraphError("span sources must name a media_id")

    def to_dict(self) -> dict:
        out: dict = {}
        if self.media_id:
            out["media_id"] = self.media_id
            if self.span is not None:
                out["span"] = list(self.span)
        if self.url:
            out["url"] = self.url
        if self.tool_call_id:
            out["tool_call_id"] = self.tool_call_id
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SourceRef":
        if not isinstance(data, dict):
            raise GraphError(f"source must be an object, got {data!r}")
        span = data.get("span")
        if span is not None:
            span = tuple(TimeSpan.from_list(span).to_list())  # validates ordering
        return cls(
            media_id=data.get("media_id"),
            span=span,
            url=data.get("url"),
            tool_call_id=data.get("tool_call_id"),
        )


@dataclass(frozen=True)
class EventNode:
    id: str
    kind: str
    label: str
    provenance: frozenset[str]
    time_anchor: TimeSpan | None = None
    attrs: dict = field(default_factory=dict)
    sources: tuple[SourceRef, ...] = ()

    def __post_init__(self) -> None:
        if not self.id:
            raise GraphError("node id must be nonempty")
        if self.kind not in NODE_KINDS:
            raise GraphError(f"unknown node kind: {self.kind}")
        if not self.label.strip():
            raise GraphError(f"node {self.id} label must be nonempty")
        bad = self.provenance - set(PROVENANCE_CLASSES)
        if bad or not self.provenance:
            raise GraphError(f"node {self.id} has invalid provenance {sorted(bad)}")
        if self.provenance & set(EXTERNAL_PROVENANCE):
            if not any(s.url or s.tool_call_id for s in self.sources):
                raise GraphError(
                    f"node {self.id}: external provenance requires a url or tool-call source"
                )

    def to_dict(self) -> dict:
        out: dict = {
            "id": self.id,
            "kind": self.kind,
            "label": self.label,
            "provenance": sorted(self.provenance),
            "attrs": dict(self.attrs),
            "sources": [s.to_dict() for s in self.sources],
        }
        if self.time_anchor is not None:
            out["time_anchor"] = self.time_anchor.to_list()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "EventNode":
        if not isinstance(data, dict):
            raise GraphError(f"node must be an object, got {data!r}")
        anchor = data.get("time_anchor")
        return cls(
            id=str(data.get("id", "")),
            kind=data.get("kind", ""),
            label=data.get("label", ""),
            provenance=frozenset(data.get("provenance", [])),
            time_anchor=TimeSpan.from_list(anchor) if anchor is not None else None,
            attrs=dict(data.get("attrs", {})),
            sources=tuple(SourceRef.from_dict(s) for s in data.get("sources", [])),
        )


@dataclass(frozen=True)
class EventEdge:
    src: str
    dst: str
    relation: str
    evidence: tuple[SourceRef, ...] = ()

    def __post_init__(self) -> None:
        if self.src == self.dst:
            raise GraphError(f"self-loop edge on {self.src}")
        if not self.relation.strip():
            raise GraphError(f"edge {self.src}->{self.dst} needs a relation label")

    @property
    def key(self) -> str:
        return f"{self.src}~{self.dst}"

    def to_dict(self) -> dict:
        return {
            "src": self.src,
            "dst": self.dst,
            "relation": self.relation,
            "evidence": [s.to_dict() for s in self.evidence],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EventEdge":
        if not isinstance(data, dict):
            raise GraphError(f"edge must be an object, got {data!r}")
        return cls(
            src=str(data.get("src", "")),
            dst=str(data.get("dst", "")),
            relation=data.get("relation", ""),
            evidence=tuple(SourceRef.from_dict(s) for s in data.get("evidence", [])),
        )


@dataclass
class EventGraph:
    graph_id: str
    nodes: dict[str, EventNode] = field(default_factory=dict)
    edges: list[EventEdge] = field(default_factory=list)
    origin: list[MediaRef] = field(default_factory=list)
    expansion_log: list[dict] = field(default_factory=list)

    def add_node(self, node: EventNode) -> None:
        if node.id in self.nodes:
            raise GraphError(f"duplicate node id: {node.id}")
        self.nodes[node.id] = node

    def add_edge(self, edge: EventEdge) -> None:
        if edge.src not in self.nodes or edge.dst not in self.nodes:
            raise GraphError(f"edge references unknown node: {edge.src}->{edge.dst}")
        self.edges.append(edge)

    def successors(self, node_id: str) -> list[str]:
        return [e.dst for e in self.edges if e.src == node_id]

    def predecessors(self, node_id: str) -> list[str]:
        return [e.src for e in self.edges if e.dst == node_id]

    def edge_between(self, src: str, dst: str) -> EventEdge | None:
        for e in self.edges:
            if e.src == src and e.dst == dst:
                return e
        return None

    def copy(self) -> "EventGraph":
        return EventGraph(
            graph_id=self.graph_id,
            nodes=dict(self.nodes),
            edges=list(self.edges),
            origin=list(self.origin),
            expansion_log=[dict(e) for e in self.expansion_log],
        )

    def to_dict(self) -> dict:
        return {
            "graph_id": self.graph_id,
            "nodes": [self.nodes[k].to_dict() for k in sorted(self.nodes)],
            "edges": [e.to_dict() for e in self.edges],
            "origin": [m.to_dict() for m in self.origin],
            "expansion_log": list(self.expansion_log),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EventGraph":
        graph = cls(
            graph_id=data["graph_id"],
            origin=[MediaRef.from_dict(m) for m in data.get("origin", [])],
            expansion_log=list(data.get("expansion_log", [])),
        )
        for raw in data.get("nodes", []):
            graph.add_node(EventNode.from_dict(raw))
        for raw in data.get("edges", []):
            graph.add_edge(EventEdge.from_dict(raw))
        return graph


def is_simple_path(graph: EventGraph, path: Sequence[str]) -> bool:
    """Brute-force check that *path* is a connected simple path in *graph*."""
    if len(path) < 1 or len(set(path)) != len(path):
        return False
    if any(n not in graph.nodes for n in path):
        return False
    return all(graph.edge_between(a, b) is not None for a, b in zip(path, path[1:]))


# --- construction --------------------------------------------------------------


def build_graph(
    signals: MinedSignals | Sequence[MinedSignals],
    builder_backend: ModelBackend,
    graph_id: str | None = None,
    max_attempts: int = 3,
) -> EventGraph:
    bundle = [signals] if isinstance(signals, MinedSignals) else list(signals)
    if not bundle or all(s.is_empty() for s in bundle):
        raise GraphError("nothing to build from: signals are empty")
    known_media = {s.source.id for s in bundle}
    signals_json = json.dumps(
        [_builder_view(s) for s in bundle], ensure_ascii=False, indent=2
    )
    prompt = render_template("graph_builder", signals_json=signals_json)
    origin = [s.source for s in bundle]
    gid = graph_id or f"g_{hash_json(sorted(known_media))[:12]}"

    failures: list[str] = []
    for _ in range(max_attempts):
        text = builder_backend.complete(
            ModelRequest(system=None, messages=(user_message(TextPart(prompt)),))
        )
        try:
            payload = parse_model_report(text)
            return _graph_from_payload(gid, payload, known_media, origin)
        except (ReportValidationError, GraphError) as exc:
            failures.append(str(exc))
    raise MiningError(f"graph builder failed after {max_attempts} attempts: {failures[-1]}")


def _builder_view(signals: MinedSignals) -> dict:
    # Strip run-specific provenance so identical reports yield identical prompts.
    view = signals.to_dict()
    view.pop("mined_at", None)
    view.pop("miner_backend_id", None)
    return view


def _graph_from_payload(
    graph_id: str, payload, known_media: set[str], origin: list[MediaRef]
) -> EventGraph:
    if not isinstance(payload, dict) or "nodes" not in payload or "edges" not in payload:
        raise GraphError("builder output must be an object with nodes and edges")
    graph = EventGraph(graph_id=graph_id, origin=origin)
    for raw in payload["nodes"]:
        node = EventNode.from_dict(raw)
        if not node.sources:
            raise GraphError(f"node {node.id} cites no signal source")
        for source in node.sources:
            if source.media_id is not None and source.media_id not in known_media:
                raise GraphError(f"node {node.id} cites unknown media {source.media_id}")
        graph.add_node(node)
    for raw in payload["edges"]:
        graph.add_edge(EventEdge.from_dict(raw))
    return graph


# --- agentic expansion ----------------------------------------------------------


@dataclass
class ExpansionSession:
    """One agent episode equipped with the expansion tool set.

    ``registry`` holds the evidence tools (search, browse, image search,
    visual QA, code); the graph-linking tools are added per run, bound to a
    staging area so invalid proposals are rejected without ending the episode.
    """

    backend: ModelBackend
    registry: ToolRegistry
    config: AgentConfig = field(default_factory=lambda: AgentConfig(max_steps=12))
    cassette: Cassette | None = None
    initial_context: list[str] = field(default_factory=list)
    fuzz_backend: ModelBackend | None = None  # used by difficulty expansion


def _proposal_tools(staging: EventGraph, log: list[dict]) -> list[Tool]:
    propose_node_schema = ToolSchema(
        name="propose_node",
        description="Adds a new entity/event node to the event graph, grounded in an external source you verified.",
        parameters={
            "type": "object",
            "properties": {
                "id": {"type": "string", "description": "New unique node id."},
                "kind": {"type": "string", "description": "entity or event."},
                "label": {"type": "string", "description": "Specific node label."},
                "provenance": {
                    "type": "array",
                    "items": {"type": "string"},
                    "description": "Evidence modalities; external facts use external_web or external_tool.",
                },
                "attrs": {"type": "object", "description": "Optional key/value attributes."},
                "time_anchor": {
                    "type": "array",
                    "items": {"type": "number"},
                    "minItems": 2,
                    "maxItems": 2,
                    "description": "Optional [t_start, t_end] anchor in seconds.",
                },
                "sources": {
                    "type": "array",
                    "items": {"type": "object"},
                    "description": "Evidence refs: {url}, {tool_call_id}, or {media_id, span}.",
                },
            },
            "required": ["id", "kind", "label", "provenance", "sources"],
        },
    )

    propose_edge_schema = ToolSchema(
        name="propose_edge",
        description="Connects two event-graph nodes with a directed, labeled relation.",
        parameters={
            "type": "object",
            "properties": {
                "src": {"type": "string", "description": "Source node id."},
                "dst": {"type": "string", "description": "Destination node id."},
                "relation": {"type": "string", "description": "Relation label."},
                "evidence": {
                    "type": "array",
                    "items": {"type": "object"},
                    "description": "Evidence refs supporting the relation.",
                },
            },
            "required": ["src", "dst", "relation"],
        },
    )

    def record(name: str, args: dict, accepted: bool, detail: str) -> None:
        log.append({"tool": name, "arguments": args, "accepted": accepted, "detail": detail})

    def propose_node_fn(args: dict) -> ToolResult:
        try:
            node = EventNode.from_dict(args)
            if not node.provenance & set(EXTERNAL_PROVENANCE):
                raise GraphError(
                    f"node {node.id}: expansion nodes must carry external provenance"
                )
            staging.add_node(node)
        except GraphError as exc:
            record("propose_node", args, False, str(exc))
            return tool_error(str(exc))
        record("propose_node", args, True, f"added node {node.id}")
        return ok(f"node {node.id} added")

    def propose_edge_fn(args: dict) -> ToolResult:
        try:
            edge = EventEdge.from_dict(args)
            staging.add_edge(edge)
        except GraphError as exc:
            record("propose_edge", args, False, str(exc))
            return tool_error(str(exc))
        record("propose_edge", args, True, f"added edge {edge.key}")
        return ok(f"edge {edge.src} -> {edge.dst} added")

    return [
        Tool(propose_node_schema, propose_node_fn),
        Tool(propose_edge_schema, propose_edge_fn),
    ]


def expand_graph(graph: EventGraph, session: ExpansionSession) -> EventGraph:
    """Run one expansion episode; returns a superset graph, never mutates input."""
    staging = graph.copy()
    proposal_log: list[dict] = []
    registry = session.registry.merged_with(_proposal_tools(staging, proposal_log))
    instruction = render_template(
        "expansion_system", graph_json=json.dumps(graph.to_dict(), ensure_ascii=False, indent=2)
    )
    if session.initial_context:
        items = "\n".join(f"- {item}" for item in session.initial_context)
        instruction += f"\n**Pre-retrieved related media candidates**:\n{items}\n"
    task = Task(task_id=f"expand:{graph.graph_id}", instruction=instruction)
    trajectory = run_episode(task, session.backend, registry, session.config, session.cassette)
    staging.expansion_log.extend(proposal_log)
    staging.expansion_log.append(
        {
            "event": "expansion_session",
            "steps": len(trajectory.steps),
            "termination": trajectory.termination,
            "proposals": len(proposal_log),
        }
    )
    return staging


# --- reasoning paths -------------------------------------------------------------


def _enumerate_simple_paths(graph: EventGraph, max_paths: int = 20000) -> list[list[str]]:
    paths: list[list[str]] = []

    def walk(path: list[str]) -> None:
        if len(paths) >= max_paths:
            return
        if len(path) >= 2:
            paths.append(list(path))
        for nxt in sorted(graph.successors(path[-1])):
            if nxt not in path:
                path.append(nxt)
                walk(path)
                path.pop()

    for start in sorted(graph.nodes):
        walk([start])
    return paths


def path_provenance(graph: EventGraph, path: Sequence[str]) -> set[str]:
    classes: set[str] = set()
    for node_id in path:
        classes |= graph.nodes[node_id].provenance
    return classes


def select_reasoning_path(graph: EventGraph, min_hops: int = 2, seed: int = 0) -> list[str]:
    """Longest qualifying simple path, chosen deterministically under *seed*.

    Qualifying means hops >= min_hops and evidence spanning at least two
    provenance classes.
    """
    candidates = [p for p in _enumerate_simple_paths(graph) if len(p) - 1 >= min_hops]
    if not candidates:
        raise GraphError("no qualifying path")
    cross_modal = [p for p in candidates if len(path_provenance(graph, p)) >= 2]
    if not cross_modal:
        raise GraphError("cross-modal requirement unmet")
    best_hops = max(len(p) - 1 for p in cross_modal)
    pool = sorted((p for p in cross_modal if len(p) - 1 == best_hops))
    return list(random.Random(seed).choice(pool))


# --- fuzzification ---------------------------------------------------------------


@dataclass(frozen=True)
class FuzzedEntity:
    target_id: str
    original: str
    surrogate: str

    def to_dict(self) -> dict:
        return {"id": self.target_id, "original": self.original, "surrogate": self.surrogate}


@dataclass(frozen=True)
class FuzzifiedQA:
    qa_id: str
    question: str
    answer: str
    fuzzed: tuple[FuzzedEntity, ...]
    reasoning_path: tuple[str, ...]
    hops: int
    difficulty: str
    domain: str
    media: tuple[MediaRef, ...]
    status: str = "draft"
    graph_id: str = ""
    version: int = 1
    parent_qa_id: str | None = None

    def __post_init__(self) -> None:
        if self.hops < 2:
            raise FuzzificationError(f"hops must be >= 2, got {self.hops}")
        if self.status not in QA_STATUSES:
            raise FuzzificationError(f"unknown status: {self.status}")
        if self.answer.strip().lower() in self.question.lower():
            raise FuzzificationError("answer leakage: answer occurs in question")
        on_path = set(self.reasoning_path) | {
            f"{a}~{b}" for a, b in zip(self.reasoning_path, self.reasoning_path[1:])
        }
        for fuzzed in self.fuzzed:
            if fuzzed.target_id not in on_path:
                raise FuzzificationError(f"fuzzed id {fuzzed.target_id} not on reasoning path")

    def to_dict(self) -> dict:
        return {
            "qa_id": self.qa_id,
            "question": self.question,
            "answer": self.answer,
            "fuzzed": [f.to_dict() for f in self.fuzzed],
            "reasoning_path": list(self.reasoning_path),
            "hops": self.hops,
            "difficulty": self.difficulty,
            "domain": self.domain,
            "media": [m.to_dict() for m in self.media],
            "status": self.status,
            "graph_id": self.graph_id,
            "version": self.version,
            "parent_qa_id": self.parent_qa_id,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FuzzifiedQA":
        return cls(
            qa_id=data["qa_id"],
            question=data["question"],
            answer=data["answer"],
            fuzzed=tuple(
                FuzzedEntity(f["id"], f["original"], f["surrogate"]) for f in data["fuzzed"]
            ),
            reasoning_path=tuple(data["reasoning_path"]),
            hops=data["hops"],
            difficulty=data["difficulty"],
            domain=data["domain"],
            media=tuple(MediaRef.from_dict(m) for m in data["media"]),
            status=data["status"],
            graph_id=data.get("graph_id", ""),
            version=data.get("version", 1),
            parent_qa_id=data.get("parent_qa_id"),
        )


def _path_payload(graph: EventGraph, path: Sequence[str]) -> list[dict]:
    payload = []
    for i, node_id in enumerate(path):
        payload.append({"node": graph.nodes[node_id].to_dict()})
        if i + 1 < len(path):
            edge = graph.edge_between(node_id, path[i + 1])
            assert edge is not None
            payload.append({"relation": edge.to_dict()})
    return payload


def _validate_path(graph: EventGraph, path: Sequence[str]) -> int:
    if not is_simple_path(graph, path):
        raise GraphError(f"not a simple path in graph: {list(path)}")
    hops = len(path) - 1
    if hops < 2:
        raise FuzzificationError("trivial fact lookup rejected: path needs >= 2 hops")
    return hops


def fuzzify(
    graph: EventGraph,
    path: Sequence[str],
    fuzz_backend: ModelBackend,
    max_attempts: int = 3,
    medium_at: int = 3,
    hard_at: int = 4,
) -> FuzzifiedQA:
    hops = _validate_path(graph, path)
    prompt = render_template(
        "fuzzify",
        path_json=json.dumps(_path_payload(graph, path), ensure_ascii=False, indent=2),
        domains=", ".join(DOMAINS),
    )
    failures: list[str] = []
    for _ in range(max_attempts):
        text = fuzz_backend.complete(
            ModelRequest(system=None, messages=(user_message(TextPart(prompt)),))
        )
        try:
            return _qa_from_payload(graph, path, hops, parse_model_report(text), medium_at, hard_at)
        except (ReportValidationError, FuzzificationError) as exc:
            failures.append(str(exc))
    raise FuzzificationError(
        f"fuzzification failed after {max_attempts} attempts: {failures[-1]}"
    )


def _qa_from_payload(
    graph: EventGraph,
    path: Sequence[str],
    hops: int,
    payload,
    medium_at: int,
    hard_at: int,
) -> FuzzifiedQA:
    if not isinstance(payload, dict):
        raise FuzzificationError("fuzzifier output must be an object")
    question = payload.get("question")
    answer = payload.get("answer")
    fuzzed_raw = payload.get("fuzzed")
    domain = payload.get("domain")
    if not isinstance(question, str) or not question.strip():
        raise FuzzificationError("question must be a nonempty string")
    if not isinstance(answer, str) or not answer.strip():
        raise FuzzificationError("answer must be a nonempty string")
    if not isinstance(fuzzed_raw, list) or not fuzzed_raw:
        raise FuzzificationError("at least one path element must be fuzzified")
    if domain not in DOMAINS:
        raise FuzzificationError(f"unknown domain: {domain}")

    edge_keys = {f"{a}~{b}" for a, b in zip(path, path[1:])}
    question_ci = question.lower()
    fuzzed: list[FuzzedEntity] = []
    for raw in fuzzed_raw:
        if not isinstance(raw, dict):
            raise FuzzificationError("fuzzed entries must be objects")
        target_id = raw.get("id")
        original = raw.get("original")
        surrogate = raw.get("surrogate")
        if not all(isinstance(v, str) and v for v in (target_id, original, surrogate)):
            raise FuzzificationError("fuzzed entries need id/original/surrogate strings")
        if target_id in graph.nodes:
            if target_id not in path:
                raise FuzzificationError(f"fuzzed node {target_id} not on path")
            if graph.nodes[target_id].label != original:
                raise FuzzificationError(f"fuzzed original does not match node {target_id} label")
        elif target_id in edge_keys:
            pass
        else:
            raise FuzzificationError(f"fuzzed id {target_id} not on reasoning path")
        if surrogate.strip().lower() == original.strip().lower():
            raise FuzzificationError(f"surrogate equals original for {target_id}")
        if surrogate.lower() not in question_ci:
            raise FuzzificationError(f"question does not reference surrogate for {target_id}")
        if original.lower() in question_ci:
            raise FuzzificationError(f"question leaks original label of {target_id}")
        fuzzed.append(FuzzedEntity(target_id, original, surrogate))

    if answer.strip().lower() in question_ci:
        raise FuzzificationError("answer leakage: answer occurs in question")

    qa_id = "qa_" + hash_json(
        {"graph": graph.graph_id, "path": list(path), "question": question}
    )[:16]
    return FuzzifiedQA(
        qa_id=qa_id,
        question=question,
        answer=answer,
        fuzzed=tuple(fuzzed),
        reasoning_path=tuple(path),
        hops=hops,
        difficulty=difficulty_from_hops(hops, medium_at, hard_at),
        domain=domain,
        media=tuple(graph.origin),
        status="draft",
        graph_id=graph.graph_id,
    )


def scan_answer_leakage(qas: Sequence[FuzzifiedQA]) -> list[str]:
    """Ids of stored questions containing their answer (case-insensitive)."""
    return [qa.qa_id for qa in qas if qa.answer.strip().lower() in qa.question.lower()]


# --- committee screening -----------------------------------------------------------


@dataclass(frozen=True)
class MemberVerdict:
    member_id: str
    criteria: dict[str, bool]
    comments: str = ""

    def passes(self) -> bool:
        return all(self.criteria.values())


@dataclass(frozen=True)
class ScreeningVerdict:
    qa_id: str
    per_criterion: dict[str, bool]
    members: tuple[MemberVerdict, ...]
    passed: bool

    def to_dict(self) -> dict:
        return {
            "qa_id": self.qa_id,
            "per_criterion": dict(self.per_criterion),
            "members": [
                {"member_id": m.member_id, "criteria": m.criteria, "comments": m.comments}
                for m in self.members
            ],
            "pass": self.passed,
        }


def screen_qa(
    qa: FuzzifiedQA,
    committee_backends: Sequence[ModelBackend],
    max_attempts: int = 3,
) -> tuple[FuzzifiedQA, ScreeningVerdict]:
    """Unanimous committee pass moves a qa to needs_review, else rejected."""
    if not committee_backends:
        raise GraphError("screening committee is empty")
    prompt = render_template(
        "screening",
        question=qa.question,
        answer=qa.answer,
        fuzzed_json=json.dumps([f.to_dict() for f in qa.fuzzed], ensure_ascii=False),
        media_kinds=", ".join(sorted({m.kind for m in qa.media})) or "none",
        hops=qa.hops,
    )
    members: list[MemberVerdict] = []
    for backend in committee_backends:
        verdict = _member_verdict(backend, prompt, max_attempts)
        members.append(verdict)
    per_criterion = {
        criterion: all(m.criteria[criterion] for m in members)
        for criterion in SCREENING_CRITERIA
    }
    passed = all(per_criterion.values())
    screened = replace(qa, status="needs_review" if passed else "rejected")
    return screened, ScreeningVerdict(qa.qa_id, per_criterion, tuple(members), passed)


def _member_verdict(backend: ModelBackend, prompt: str, max_attempts: int) -> MemberVerdict:
    failures: list[str] = []
    for _ in range(max_attempts):
        text = backend.complete(
            ModelRequest(system=None, messages=(user_message(TextPart(prompt)),))
        )
        try:
            payload = parse_model_report(text)
            if not isinstance(payload, dict):
                raise ReportValidationError("verdict must be an object")
            criteria = {}
            for criterion in SCREENING_CRITERIA:
                value = payload.get(criterion)
                if not isinstance(value, bool):
                    raise ReportValidationError(f"criterion {criterion} must be a boolean")
                criteria[criterion] = value
            return MemberVerdict(
                member_id=getattr(backend, "backend_id", "member"),
                criteria=criteria,
                comments=str(payload.get("comments", "")),
            )
        except ReportValidationError as exc:
            failures.append(str(exc))
    raise MiningError(f"committee member verdict unparseable after {max_attempts} attempts: {failures[-1]}")


# --- difficulty expansion ------------------------------------------------------------


def expand_difficulty(
    qa: FuzzifiedQA,
    graph: EventGraph,
    session: ExpansionSession,
    max_attempts: int = 3,
) -> tuple[FuzzifiedQA, EventGraph]:
    """Deepen a screened qa by extending its path with fresh evidence.

    Returns the new qa version plus the expanded graph it lives in; the
    original qa and graph are preserved.
    """
    if qa.status != "needs_review":
        raise GraphError("only screened qa may be deepened")
    if session.fuzz_backend is None:
        raise GraphError("difficulty expansion needs a fuzz backend on the session")
    expanded = expand_graph(graph, session)
    extension = _longest_extension(expanded, list(qa.reasoning_path))
    if len(extension) == len(qa.reasoning_path):
        raise GraphError("no deepening achieved")
    deeper = fuzzify(expanded, extension, session.fuzz_backend, max_attempts=max_attempts)
    deeper = replace(
        deeper,
        qa_id=f"{qa.qa_id}_v{qa.version + 1}",
        version=qa.version + 1,
        parent_qa_id=qa.qa_id,
        status="draft",
    )
    return deeper, expanded


def _longest_extension(graph: EventGraph, path: list[str]) -> list[str]:
    """Longest simple path containing *path* as a contiguous run.

    New evidence may hang off either end, so the original path is grown both
    forward from its tail and backward from its head; ties break
    deterministically by node-id order.
    """
    forward = _longest_chain(path, lambda n: sorted(graph.successors(n)), at_tail=True)
    backward = _longest_chain(
        forward, lambda n: sorted(graph.predecessors(n)), at_tail=False
    )
    return backward


def _longest_chain(path: list[str], neighbors, at_tail: bool) -> list[str]:
    best = list(path)

    def walk(current: list[str]) -> None:
        nonlocal best
        anchor = current[-1] if at_tail else current[0]
        for nxt in neighbors(anchor):
            if nxt in current:
                continue
            candidate = current + [nxt] if at_tail else [nxt] + current
            walk(candidate)
        if len(current) > len(best):
            best = list(current)

    walk(list(path))
    return best
