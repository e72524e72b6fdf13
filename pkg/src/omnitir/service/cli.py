"""Command-line entry points: thin wrappers over the module operations.

Every subcommand honors ``--replay <cassette>``, which strips live endpoints
and replays all backend and web traffic from the cassette, making the run
hermetic. Failures print a machine-readable error to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from ..agent_runtime import AgentConfig, Task, Trajectory
from ..cassette import LIVE_RECORD, REPLAY
from ..errors import OmnitirError
from ..eval_harness import (
    EvalOutcome,
    aggregate_error_rates,
    analyze_errors,
    pass_at_1,
    report_to_json,
    tool_call_stats,
)
from ..event_graph import ExpansionSession, build_graph, fuzzify, screen_qa, select_reasoning_path
from ..media_store import MediaStore
from ..signal_miner import mine_all
from ..toolbelt import HttpWebClient, StaticWebClient, SummaryIndex
from ..trajectory_forge import (
    ModelBranchVerifier,
    build_preference_pair,
    export_training_set,
    locate_first_error,
    to_sft_record,
)
from ..util import append_jsonl, read_jsonl
from .config import PipelineConfig
from .pipeline import (
    agent_registry,
    expansion_registry,
    ConstructionBackends,
    run_benchmark,
    synthesize_training_trajectories,
)
from .review import ReviewDecision, ReviewService
from .stores import DecisionStore, GraphStore, QaStore, QueueStore, SignalsStore, TrajectoryStore


class _Env:
    """Lazily-built handles shared by the subcommands."""

    def __init__(self, args: argparse.Namespace):
        if args.config:
            config = PipelineConfig.load(args.config)
        else:
            config = PipelineConfig()
        if args.store:
            config = replace(config, store_root=args.store)
        if args.replay:
            config = _hermetic(config, args.replay)
        elif args.record:
            config = replace(config, cassette_path=args.record, cassette_mode=LIVE_RECORD)
        self.config = config
        self.root = Path(config.store_root)
        self.cassette = config.open_cassette()

    @property
    def store(self) -> MediaStore:
        return MediaStore(self.root / "media")

    def backend(self, role: str):
        return self.config.build_backend(role, self.cassette)

    def web_client(self):
        cfg = self.config
        if cfg.web_search_endpoint or cfg.web_image_search_endpoint:
            return HttpWebClient(
                search_endpoint=cfg.web_search_endpoint,
                image_search_endpoint=cfg.web_image_search_endpoint,
                api_key_env=cfg.web_api_key_env,
            )
        return StaticWebClient()

    def review_service(self, quorum: int | None = None) -> ReviewService:
        return ReviewService(
            QaStore(self.root),
            DecisionStore(self.root),
            QueueStore(self.root),
            quorum=quorum or self.config.review_quorum,
        )

    def construction_backends(self) -> ConstructionBackends:
        return ConstructionBackends(
            miner=self.backend("miner"),
            builder=self.backend("builder"),
            expander=self.backend("expander"),
            fuzzifier=self.backend("fuzzifier"),
            committee=self.config.build_committee(self.cassette),
            web=self.web_client(),
            cassette=self.cassette,
            expansion_max_steps=self.config.expansion_max_steps,
        )

    def summary_index(self) -> SummaryIndex:
        signals_store = SignalsStore(self.root)
        index = SummaryIndex()
        for media_id in signals_store.ids():
            index.add_signals(signals_store.load(media_id))
        return index


def _hermetic(config: PipelineConfig, cassette_path: str) -> PipelineConfig:
    data = config.to_dict()
    data["cassette_path"] = cassette_path
    data["cassette_mode"] = REPLAY
    data["backends"] = {}
    data["committee"] = []
    data["web_search_endpoint"] = ""
    data["web_image_search_endpoint"] = ""
    return PipelineConfig.from_dict(data)


def _load_tasks(path: str) -> list[Task]:
    return [Task.from_dict(record) for record in read_jsonl(path)]


def _load_trajectories(path: str) -> list[Trajectory]:
    return [Trajectory.from_dict(record) for record in read_jsonl(path)]


def _emit(payload: dict) -> None:
    print(json.dumps(payload, ensure_ascii=False))


# --- subcommands -------------------------------------------------------------


def cmd_ingest(env: _Env, args: argparse.Namespace) -> None:
    store = env.store
    for path in args.paths:
        ref = store.ingest(Path(path), args.kind)
        _emit(ref.to_dict())


def cmd_mine(env: _Env, args: argparse.Namespace) -> None:
    store = env.store
    signals_store = SignalsStore(env.root)
    miner = env.backend("miner")
    ids = args.media or [r.id for r in store.refs()]
    for media_id in ids:
        signals = mine_all(
            store.get(media_id), store, miner, max_len_s=env.config.clip_max_len_s
        )
        signals_store.save(signals)
        _emit({"media_id": media_id, "clips": len(signals.clip_spans())})


def cmd_build_graph(env: _Env, args: argparse.Namespace) -> None:
    signals_store = SignalsStore(env.root)
    signals = [signals_store.load(media_id) for media_id in args.media]
    graph = build_graph(signals, env.backend("builder"), graph_id=args.graph_id)
    GraphStore(env.root).save(graph)
    _emit({"graph_id": graph.graph_id, "nodes": len(graph.nodes), "edges": len(graph.edges)})


def cmd_expand(env: _Env, args: argparse.Namespace) -> None:
    graph_store = GraphStore(env.root)
    graph = graph_store.load(args.graph_id)
    backends = env.construction_backends()
    registry = expansion_registry(env.store, backends, env.summary_index())
    session = ExpansionSession(
        backend=backends.expander,
        registry=registry,
        config=AgentConfig(max_steps=env.config.expansion_max_steps),
        cassette=env.cassette,
    )
    expanded = expand_graph(graph, session)
    graph_store.save(expanded)
    _emit({"graph_id": expanded.graph_id, "nodes": len(expanded.nodes), "edges": len(expanded.edges)})


def cmd_generate_qa(env: _Env, args: argparse.Namespace) -> None:
    graph = GraphStore(env.root).load(args.graph_id)
    path = select_reasoning_path(graph, min_hops=args.min_hops, seed=args.seed)
    qa = fuzzify(graph, path, env.backend("fuzzifier"))
    QaStore(env.root).append(qa)
    _emit(qa.to_dict())


def cmd_screen(env: _Env, args: argparse.Namespace) -> None:
    qa_store = QaStore(env.root)
    review = env.review_service()
    committee = env.config.build_committee(env.cassette)
    if args.qa_id:
        targets = [qa_store.latest(args.qa_id)]
        if targets[0] is None:
            raise OmnitirError(f"unknown qa_id: {args.qa_id}")
    else:
        targets = [qa for qa in qa_store.all_latest() if qa.status == "draft"]
    for qa in targets:
        screened, verdict = screen_qa(qa, committee)
        qa_store.append(screened)
        if verdict.passed:
            review.enqueue_for_review(screened)
        _emit(verdict.to_dict())


def cmd_review_serve(env: _Env, args: argparse.Namespace) -> None:
    import uvicorn

    from .api import create_app

    app = create_app(env.review_service(args.quorum), env.store, ui_dir=args.ui or None)
    uvicorn.run(app, host=args.host, port=args.port)


def cmd_review_decide(env: _Env, args: argparse.Namespace) -> None:
    decision = ReviewDecision(
        qa_id=args.qa_id,
        reviewer_id=args.reviewer,
        verdict=args.verdict,
        edited_question=args.question,
        edited_answer=args.answer,
        note=args.note,
    )
    status = env.review_service(args.quorum).apply_decision(decision)
    _emit({"qa_id": args.qa_id, "status": status})


def cmd_export_benchmark(env: _Env, args: argparse.Namespace) -> None:
    manifest = env.review_service().export_benchmark(args.out)
    _emit(manifest)


def cmd_synthesize(env: _Env, args: argparse.Namespace) -> None:
    tasks = _load_tasks(args.tasks)
    registry = agent_registry(env.store, env.web_client())
    verifier = ModelBranchVerifier(env.backend("verifier"))
    kept = synthesize_training_trajectories(
        tasks,
        env.backend("policy"),
        verifier,
        registry,
        k=args.k,
        max_depth=args.max_depth,
        per_task=args.per_task,
        cassette=env.cassette,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(
        "".join(t.to_json() + "\n" for t in kept), encoding="utf-8"
    )
    _emit({"tasks": len(tasks), "trajectories": len(kept), "out": str(out)})


def cmd_export_training(env: _Env, args: argparse.Namespace) -> None:
    trajectories = _load_trajectories(args.trajectories)
    if args.kind == "sft":
        manifest = export_training_set([to_sft_record(t) for t in trajectories], args.out)
    else:
        annotations = {r["task_id"]: r for r in read_jsonl(args.annotations)}
        locator = env.backend("locator")
        pairs = []
        for trajectory in trajectories:
            annotation = annotations.get(trajectory.task.task_id)
            if annotation is None:
                raise OmnitirError(f"no annotation for task {trajectory.task.task_id}")
            location = locate_first_error(trajectory, annotation, locator)
            pairs.append(build_preference_pair(trajectory, location))
        manifest = export_training_set(pairs, args.out)
    _emit(manifest)


def cmd_evaluate(env: _Env, args: argparse.Namespace) -> None:
    tasks = _load_tasks(args.tasks)
    judge = env.backend("judge")
    if args.trajectories:
        trajectories = _load_trajectories(args.trajectories)
        by_task = {t.task.task_id: t for t in trajectories}
        outcomes = []
        from ..eval_harness import score_answer

        for task in tasks:
            trajectory = by_task.get(task.task_id)
            output_text = (
                trajectory.steps[-1].thought if trajectory and trajectory.steps else ""
            )
            outcomes.append(
                score_answer(
                    task.instruction, output_text, task.label or "", judge,
                    task_id=task.task_id,
                )
            )
    else:
        registry = agent_registry(env.store, env.web_client())
        config = AgentConfig(max_steps=env.config.max_steps)
        trajectories, outcomes = run_benchmark(
            tasks, env.backend("policy"), registry, config, judge,
            cassette=env.cassette,
            trajectory_store=TrajectoryStore(env.root),
        )
    meta = {
        t.task_id: {
            "category": (t.annotation or {}).get("domain", "unknown"),
            "difficulty": (t.annotation or {}).get("difficulty", "unknown"),
        }
        for t in tasks
    }
    report = pass_at_1(outcomes, meta, trajectories)
    Path(args.out).write_text(report_to_json(report), encoding="utf-8")
    if args.csv:
        groups = ("category", "difficulty") if args.group_by == "both" else (args.group_by,)
        Path(args.csv).write_text(report.to_csv(groups), encoding="utf-8")
    if args.outcomes:
        for outcome in outcomes:
            append_jsonl(args.outcomes, outcome.to_dict())
    _emit({"overall": report.overall.to_dict(), "out": args.out})


def cmd_analyze_errors(env: _Env, args: argparse.Namespace) -> None:
    tasks = {t.task_id: t for t in _load_tasks(args.tasks)}
    trajectories = {t.task.task_id: t for t in _load_trajectories(args.trajectories)}
    outcomes = [EvalOutcome.from_dict(r) for r in read_jsonl(args.outcomes)]
    analyzer = env.backend("analyzer")
    label_sets = []
    for outcome in outcomes:
        if outcome.correct:
            continue
        task = tasks.get(outcome.task_id)
        trajectory = trajectories.get(outcome.task_id)
        if task is None or trajectory is None:
            raise OmnitirError(f"missing task or trajectory for {outcome.task_id}")
        labels = analyze_errors(
            outcome, trajectory, task.annotation or {"answer": task.label or ""}, analyzer
        )
        append_jsonl(args.out, labels.to_dict())
        label_sets.append(labels)
    table = aggregate_error_rates(
        label_sets,
        denominator_policy=args.policy,
        total_tasks=len(outcomes) if args.policy == "all_tasks" else None,
    )
    _emit(table)


def cmd_stats(env: _Env, args: argparse.Namespace) -> None:
    trajectories = _load_trajectories(args.trajectories)
    correct = None
    if args.outcomes:
        correct = {
            r["task_id"] for r in read_jsonl(args.outcomes) if r["correct"]
        }
    _emit(tool_call_stats(trajectories, correct))


# --- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="omnitir",
        description="Omni-modal tool-integrated reasoning toolkit",
    )
    parser.add_argument("--config", default="", help="pipeline config JSON")
    parser.add_argument("--store", default="", help="store root override")
    parser.add_argument("--replay", default="", help="cassette file; makes the run hermetic")
    parser.add_argument("--record", default="", help="cassette file; records live traffic")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="ingest media files into the content store")
    p.add_argument("--kind", required=True, choices=["video", "audio", "image"])
    p.add_argument("paths", nargs="+")
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("mine", help="mine perception signals from stored media")
    p.add_argument("--media", nargs="*", default=[], help="media ids (default: all)")
    p.set_defaults(fn=cmd_mine)

    p = sub.add_parser("build-graph", help="build an event graph from mined signals")
    p.add_argument("--media", nargs="+", required=True)
    p.add_argument("--graph-id", default=None)
    p.set_defaults(fn=cmd_build_graph)

    p = sub.add_parser("expand", help="agentically expand an event graph")
    p.add_argument("--graph-id", required=True)
    p.set_defaults(fn=cmd_expand)

    p = sub.add_parser("generate-qa", help="fuzzify a reasoning path into a question")
    p.add_argument("--graph-id", required=True)
    p.add_argument("--min-hops", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_generate_qa)

    p = sub.add_parser("screen", help="run the committee screen over draft questions")
    p.add_argument("--qa-id", default="")
    p.set_defaults(fn=cmd_screen)

    p = sub.add_parser("review-serve", help="serve the human review API")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8400)
    p.add_argument("--ui", default="", help="serve a built review UI bundle at /ui")
    p.add_argument("--quorum", type=int, default=None, help="accepts needed to verify")
    p.set_defaults(fn=cmd_review_serve)

    p = sub.add_parser("review-decide", help="apply a review decision from the CLI")
    p.add_argument("--qa-id", required=True)
    p.add_argument("--verdict", required=True, choices=["accept", "reject", "edit"])
    p.add_argument("--reviewer", required=True)
    p.add_argument("--question", default=None)
    p.add_argument("--answer", default=None)
    p.add_argument("--note", default="")
    p.add_argument("--quorum", type=int, default=None, help="accepts needed to verify")
    p.set_defaults(fn=cmd_review_decide)

    p = sub.add_parser("export-benchmark", help="export verified questions as a task bundle")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_export_benchmark)

    p = sub.add_parser("synthesize-trajectories", help="guided tree exploration over tasks")
    p.add_argument("--tasks", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--max-depth", type=int, default=12)
    p.add_argument("--per-task", type=int, default=1)
    p.set_defaults(fn=cmd_synthesize)

    p = sub.add_parser("export-training", help="export SFT records or preference pairs")
    p.add_argument("--trajectories", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=["sft", "dpo"], default="sft")
    p.add_argument("--annotations", default="", help="task annotations JSONL (dpo)")
    p.set_defaults(fn=cmd_export_training)

    p = sub.add_parser("evaluate", help="run or rescore tasks and aggregate Pass@1")
    p.add_argument("--tasks", required=True)
    p.add_argument("--trajectories", default="", help="rescore these instead of running")
    p.add_argument("--out", required=True)
    p.add_argument("--csv", default="")
    p.add_argument("--outcomes", default="")
    p.add_argument("--group-by", choices=["both", "category", "difficulty"], default="both")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("analyze-errors", help="label failure causes for failed outcomes")
    p.add_argument("--tasks", required=True)
    p.add_argument("--trajectories", required=True)
    p.add_argument("--outcomes", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--policy", choices=["failed_only", "all_tasks"], default="failed_only")
    p.set_defaults(fn=cmd_analyze_errors)

    p = sub.add_parser("stats", help="tool-call distribution statistics")
    p.add_argument("--trajectories", required=True)
    p.add_argument("--outcomes", default="")
    p.set_defaults(fn=cmd_stats)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        env = _Env(args)
        args.fn(env, args)
    except OmnitirError as exc:
        print(
            json.dumps({"error": {"code": type(exc).__name__, "message": str(exc)}}),
            file=sys.stderr,
        )
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
