from __future__ import annotations

from omnitir.agent_runtime import AgentConfig, Task
from omnitir.backends import RuleBackend, ScriptedBackend
from omnitir.media_store import MediaRef
from omnitir.service.pipeline import (
    agent_registry,
    expansion_registry,
    ConstructionBackends,
    related_audio_candidates,
    run_benchmark,
    synthesize_training_trajectories,
)
from omnitir.signal_miner import MinedSignals, validate_audio_report, validate_image_report
from omnitir.toolbelt import StaticWebClient, SummaryIndex, ToolRegistry, make_web_search_tool

from helpers import (
    ScriptedVerifier,
    TreePolicyBackend,
    audio_report_obj,
    image_report_obj,
    turn_answer,
    turn_call,
)


def _media(media_id, kind):
    extra = {"duration_s": 30.0} if kind == "audio" else {"width": 8, "height": 8}
    return MediaRef(id=media_id, kind=kind, uri=f"store/{media_id}", **extra)


def _image_signals(media_id, summary):
    signals = MinedSignals(source=_media(media_id, "image"))
    signals.image_reports.append(validate_image_report(image_report_obj(summary)))
    return signals


def _audio_signals(media_id, summary):
    signals = MinedSignals(source=_media(media_id, "audio"))
    signals.audio_global_report = validate_audio_report(audio_report_obj(summary))
    return signals


def test_related_audio_candidates_ranks_by_image_summary():
    index = SummaryIndex()
    harbor = _audio_signals("a-harbor", "harbor bells and gulls near the waterfront")
    forest = _audio_signals("a-forest", "wind in pine trees and distant birds")
    image = _image_signals("i-dock", "a harbor dock with bells mounted on posts")
    for signals in (harbor, forest, image):
        index.add_signals(signals)
    candidates = related_audio_candidates(index, [image], top_n=2)
    assert candidates[0] == "a-harbor"
    # image-free groups contribute nothing
    assert related_audio_candidates(index, [harbor]) == []


def test_expansion_registry_names(store):
    backends = ConstructionBackends(
        miner=ScriptedBackend([]),
        builder=ScriptedBackend([]),
        expander=ScriptedBackend([]),
        fuzzifier=ScriptedBackend([]),
        committee=[],
        web=StaticWebClient(),
        vqa=ScriptedBackend([]),
    )
    registry = expansion_registry(store, backends, SummaryIndex())
    assert registry.names() == [
        "code_executor",
        "page_browser",
        "search_related_audio_info",
        "search_related_image_info",
        "search_related_video_info",
        "visual_question_answering",
        "web_image_search",
        "web_search",
    ]


def test_agent_registry_optional_qa_tools(store):
    base = agent_registry(store, StaticWebClient())
    assert "audio_qa" not in base.names()
    with_qa = agent_registry(
        store, StaticWebClient(),
        audio_qa_backend=ScriptedBackend([]), vision_qa_backend=ScriptedBackend([]),
    )
    assert {"audio_qa", "vision_qa"} <= set(with_qa.names())


def test_run_benchmark_scores_every_task():
    tasks = [
        Task(task_id="b0", instruction="q0", label="yes"),
        Task(task_id="b1", instruction="q1", label="yes"),
    ]
    policy = ScriptedBackend([turn_answer("sure", "yes"), turn_answer("hmm", "no")])
    judge = RuleBackend(lambda _r: "Incorrect", "judge")
    registry = ToolRegistry([make_web_search_tool(StaticWebClient())])
    trajectories, outcomes = run_benchmark(
        tasks, policy, registry, AgentConfig(max_steps=2), judge
    )
    assert [t.final_answer for t in trajectories] == ["yes", "no"]
    assert [o.correct for o in outcomes] == [True, False]
    assert outcomes[0].route == "exact"


def test_synthesize_training_trajectories_caps_per_task():
    answer_a = turn_answer("path a", "44")
    answer_b = turn_answer("path b", "44")
    step = turn_call("look", "web_search", {"query": "q"})
    tree = {(): [step, answer_a, answer_b], (step,): [answer_a, answer_b, answer_b]}
    keep = {(step,)}
    task = Task(task_id="syn", instruction="?", label="44")
    registry = ToolRegistry([make_web_search_tool(StaticWebClient())])
    kept = synthesize_training_trajectories(
        [task], TreePolicyBackend(tree), ScriptedVerifier(keep), registry,
        k=3, max_depth=2, per_task=1,
    )
    assert len(kept) == 1
    assert kept[0].final_answer == "44"
