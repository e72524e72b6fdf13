"""End-to-end construction and training-data orchestration.

Thin composition over the module operations so the CLI and the hermetic test
suite drive the exact same code: mine -> build -> expand -> fuzzify -> screen
-> review -> export, plus trajectory synthesis and evaluation passes.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from ..agent_runtime import AgentConfig, Task, Trajectory, run_episode
from ..backends import ModelBackend
from ..cassette import Cassette
from ..event_graph import (
    ExpansionSession,
    FuzzifiedQA,
    build_graph,
    expand_graph,
    fuzzify,
    screen_qa,
    select_reasoning_path,
)
from ..eval_harness import EvalOutcome, score_answer
from ..media_store import MediaRef, MediaStore
from ..signal_miner import MinedSignals, mine_all
from ..toolbelt import (
    SummaryIndex,
    ToolRegistry,
    WebClient,
    make_code_executor_tool,
    make_page_browser_tool,
    make_read_audio_tool,
    make_read_image_tool,
    make_read_video_tool,
    make_related_media_tool,
    make_vision_qa_tool,
    make_web_image_search_tool,
    make_web_search_tool,
    make_audio_qa_tool,
)
from ..trajectory_forge import (
    BranchVerifier,
    ExplorationResult,
    explore,
    select_for_training,
)
from .review import ReviewService
from .stores import GraphStore, QaStore, SignalsStore, TrajectoryStore


@dataclass
class ConstructionBackends:
    """Every external model role the construction pipeline talks to."""

    miner: ModelBackend
    builder: ModelBackend
    expander: ModelBackend
    fuzzifier: ModelBackend
    committee: list[ModelBackend]
    web: WebClient
    vqa: ModelBackend | None = None
    cassette: Cassette | None = None
    expansion_max_steps: int = 12
    related_media_top_n: int = 5


def mine_media(
    store: MediaStore,
    refs: Sequence[MediaRef],
    backend: ModelBackend,
    signals_store: SignalsStore | None = None,
    max_len_s: float = 60,
) -> list[MinedSignals]:
    out = []
    for ref in refs:
        signals = mine_all(ref, store, backend, max_len_s=max_len_s)
        if signals_store is not None:
            signals_store.save(signals)
        out.append(signals)
    return out


def expansion_registry(
    store: MediaStore, backends: ConstructionBackends, index: SummaryIndex
) -> ToolRegistry:
    """The expansion tool set: cross-modal linking, web, visual QA, code."""
    tools = [
        make_related_media_tool("video", index, backends.related_media_top_n),
        make_related_media_tool("audio", index, backends.related_media_top_n),
        make_related_media_tool("image", index, backends.related_media_top_n),
        make_web_search_tool(backends.web),
        make_page_browser_tool(backends.web),
        make_web_image_search_tool(backends.web),
        make_code_executor_tool(),
    ]
    if backends.vqa is not None:
        tools.append(make_vision_qa_tool(store, backends.vqa, name="visual_question_answering"))
    return ToolRegistry(tools)


def related_audio_candidates(
    index: SummaryIndex, signals: Sequence[MinedSignals], top_n: int = 5
) -> list[str]:
    """Pre-retrieved related-audio context for image+audio style graphs."""
    image_summaries = [
        report.global_summary
        for s in signals
        if s.source.kind == "image"
        for report in s.image_reports
    ]
    if not image_summaries:
        return []
    hits = index.search(" ".join(image_summaries), kind="audio", n=top_n)
    return [ref_id for ref_id, _ in hits]


def construct_tasks(
    store: MediaStore,
    media_groups: Sequence[Sequence[MediaRef]],
    backends: ConstructionBackends,
    store_root: str | Path,
    review: ReviewService,
    min_hops: int = 2,
    seed: int = 0,
    max_len_s: float = 60,
) -> list[FuzzifiedQA]:
    """Full construction pass over task media groups; returns the screened qa.

    Each group (e.g. one video, or an image+audio pair) becomes one graph and
    one candidate question. Screened questions are enqueued for human review.
    """
    signals_store = SignalsStore(store_root)
    graph_store = GraphStore(store_root)
    qa_store = QaStore(store_root)
    index = SummaryIndex()
    all_signals: list[list[MinedSignals]] = []
    for group in media_groups:
        signals = mine_media(store, group, backends.miner, signals_store, max_len_s)
        for s in signals:
            index.add_signals(s)
        all_signals.append(signals)

    registry = expansion_registry(store, backends, index)
    screened: list[FuzzifiedQA] = []
    for signals in all_signals:
        graph = build_graph(signals, backends.builder)
        session = ExpansionSession(
            backend=backends.expander,
            registry=registry,
            config=AgentConfig(max_steps=backends.expansion_max_steps),
            cassette=backends.cassette,
            initial_context=related_audio_candidates(index, signals),
        )
        graph = expand_graph(graph, session)
        graph_store.save(graph)
        path = select_reasoning_path(graph, min_hops=min_hops, seed=seed)
        qa = fuzzify(graph, path, backends.fuzzifier)
        qa_store.append(qa)
        qa, verdict = screen_qa(qa, backends.committee)
        qa_store.append(qa)
        if verdict.passed:
            review.enqueue_for_review(qa)
        screened.append(qa)
    return screened


def agent_registry(
    store: MediaStore,
    web: WebClient,
    audio_qa_backend: ModelBackend | None = None,
    vision_qa_backend: ModelBackend | None = None,
) -> ToolRegistry:
    """The evaluation-time tool set: web, code, active perception, optional QA tools."""
    tools = [
        make_web_search_tool(web),
        make_page_browser_tool(web),
        make_code_executor_tool(),
        make_read_video_tool(store),
        make_read_audio_tool(store),
        make_read_image_tool(store),
    ]
    if audio_qa_backend is not None:
        tools.append(make_audio_qa_tool(store, audio_qa_backend))
    if vision_qa_backend is not None:
        tools.append(make_vision_qa_tool(store, vision_qa_backend))
    return ToolRegistry(tools)


def run_benchmark(
    tasks: Sequence[Task],
    backend: ModelBackend,
    registry: ToolRegistry,
    config: AgentConfig,
    judge: ModelBackend,
    cassette: Cassette | None = None,
    trajectory_store: TrajectoryStore | None = None,
) -> tuple[list[Trajectory], list[EvalOutcome]]:
    trajectories = []
    outcomes = []
    for task in tasks:
        trajectory = run_episode(task, backend, registry, config, cassette)
        if trajectory_store is not None:
            trajectory_store.append(trajectory)
        trajectories.append(trajectory)
        output_text = trajectory.steps[-1].thought if trajectory.steps else ""
        outcomes.append(
            score_answer(
                question=task.instruction,
                output_text=output_text,
                label=task.label or "",
                judge_backend=judge,
                task_id=task.task_id,
            )
        )
    return trajectories, outcomes


def synthesize_training_trajectories(
    tasks: Sequence[Task],
    policy_backend: ModelBackend,
    verifier: BranchVerifier,
    registry: ToolRegistry,
    k: int = 3,
    max_depth: int = 12,
    per_task: int = 1,
    cassette: Cassette | None = None,
) -> list[Trajectory]:
    kept: list[Trajectory] = []
    for task in tasks:
        result: ExplorationResult = explore(
            task,
            policy_backend,
            verifier,
            k=k,
            max_depth=max_depth,
            registry=registry,
            cassette=cassette,
        )
        kept.extend(select_for_training(result.trajectories, per_task=per_task))
    return kept
