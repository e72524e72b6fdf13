"""End-to-end CLI run under --replay: record once in-process, then every
subcommand replays hermetically from the cassette."""

from __future__ import annotations

import json

from omnitir.backends import CassetteBackend, RuleBackend, ScriptedBackend
from omnitir.cassette import Cassette, LIVE_RECORD
from omnitir.event_graph import build_graph, fuzzify, screen_qa, select_reasoning_path
from omnitir.media_store import MediaStore
from omnitir.service.cli import main as cli_main
from omnitir.signal_miner import mine_all

from helpers import audio_report_obj, fenced, image_report_obj, make_png_bytes, make_wav_bytes

LABELS = ["the poster on the wall", "a brass bell", "the closing announcement"]

PASS_VERDICT = fenced(
    {
        "naturalness_clarity": True,
        "omni_indispensability": True,
        "correctness_uniqueness": True,
        "comments": "ok",
    }
)


def _miner_rule(request) -> str:
    prompt = request.messages[0].parts[0].text
    if prompt.startswith("Please analyze this image"):
        return fenced(image_report_obj("a poster beside a brass bell"))
    if prompt.startswith("You are analyzing a specific audio clip"):
        return fenced(audio_report_obj("a clip with one bell strike"))
    return fenced(audio_report_obj("a recording ending with an announcement"))


def _builder_payload(image_id: str, audio_id: str) -> dict:
    return {
        "nodes": [
            {"id": "n1", "kind": "entity", "label": LABELS[0], "provenance": ["visual"],
             "sources": [{"media_id": image_id}]},
            {"id": "n2", "kind": "entity", "label": LABELS[1], "provenance": ["audio"],
             "sources": [{"media_id": audio_id}]},
            {"id": "n3", "kind": "event", "label": LABELS[2], "provenance": ["audio"],
             "sources": [{"media_id": audio_id}]},
        ],
        "edges": [
            {"src": "n1", "dst": "n2", "relation": "next to"},
            {"src": "n2", "dst": "n3", "relation": "precedes"},
        ],
    }


def _fuzz_payload() -> dict:
    return {
        "question": (
            "A metallic chime rings just before the final event in the recording. Combining "
            "the image and the audio, what is that final event?"
        ),
        "answer": "the closing announcement of the exhibit",
        "fuzzed": [{"id": "n2", "original": LABELS[1], "surrogate": "a metallic chime"}],
        "domain": "Art",
    }


def test_cli_pipeline_replays_hermetically(tmp_path, capsys):
    png = make_png_bytes(32, 32)
    wav = make_wav_bytes(20)
    png_path = tmp_path / "poster.png"
    wav_path = tmp_path / "hall.wav"
    png_path.write_bytes(png)
    wav_path.write_bytes(wav)

    # record phase: run the same operations in-process with recording backends
    record_root = tmp_path / "record"
    cassette_path = tmp_path / "session.jsonl"
    store = MediaStore(record_root / "media")
    image = store.ingest(png, "image")
    audio = store.ingest(wav, "audio")

    def recording(inner):
        return CassetteBackend(Cassette(cassette_path, LIVE_RECORD), inner)

    signals = [
        mine_all(image, store, recording(RuleBackend(_miner_rule, "miner"))),
        mine_all(audio, store, recording(RuleBackend(_miner_rule, "miner"))),
    ]
    graph = build_graph(
        signals, recording(ScriptedBackend([fenced(_builder_payload(image.id, audio.id))]))
    )
    path = select_reasoning_path(graph, min_hops=2, seed=0)
    qa = fuzzify(graph, path, recording(ScriptedBackend([fenced(_fuzz_payload())])))
    screen_qa(qa, [recording(RuleBackend(lambda _r: PASS_VERDICT, "member"))])

    # replay phase: the CLI reruns everything from the cassette, no live backends
    root = tmp_path / "replay"
    base = ["--store", str(root), "--replay", str(cassette_path)]

    assert cli_main(base + ["ingest", "--kind", "image", str(png_path)]) == 0
    assert cli_main(base + ["ingest", "--kind", "audio", str(wav_path)]) == 0
    capsys.readouterr()

    assert cli_main(base + ["mine"]) == 0
    capsys.readouterr()

    assert cli_main(base + ["build-graph", "--media", image.id, audio.id]) == 0
    graph_out = json.loads(capsys.readouterr().out.strip())
    assert graph_out["graph_id"] == graph.graph_id
    assert graph_out["nodes"] == 3

    assert cli_main(base + ["generate-qa", "--graph-id", graph.graph_id, "--seed", "0"]) == 0
    qa_out = json.loads(capsys.readouterr().out.strip())
    assert qa_out["qa_id"] == qa.qa_id
    assert qa_out["hops"] >= 2

    assert cli_main(base + ["screen"]) == 0
    verdict_out = json.loads(capsys.readouterr().out.strip())
    assert verdict_out["pass"] is True

    assert (
        cli_main(
            base
            + ["review-decide", "--qa-id", qa.qa_id, "--verdict", "accept", "--reviewer", "cli"]
        )
        == 0
    )
    capsys.readouterr()

    assert cli_main(base + ["export-benchmark", "--out", str(tmp_path / "bundle")]) == 0
    manifest = json.loads(capsys.readouterr().out.strip())
    assert manifest["total"] == 1
    task = json.loads((tmp_path / "bundle" / "tasks.jsonl").read_text().splitlines()[0])
    assert task["answer"] == "the closing announcement of the exhibit"


def test_cli_evaluate_and_stats_rescore(tmp_path, capsys):
    from omnitir.agent_runtime import AgentConfig, FinalAnswer, Step, Task, Trajectory

    tasks = [
        Task(task_id="e0", instruction="q0", label="alpha",
             annotation={"domain": "Art", "difficulty": "easy"}),
        Task(task_id="e1", instruction="q1", label="beta",
             annotation={"domain": "Food", "difficulty": "hard"}),
    ]
    trajectories = [
        Trajectory(
            task=task,
            steps=[Step(0, f"<answer>{answer}</answer>", FinalAnswer(answer))],
            final_answer=answer,
            termination="answered",
            config=AgentConfig().to_dict(),
        )
        for task, answer in zip(tasks, ["alpha", "wrong..."])  # e1 would need a judge
    ]
    # make both exact so the judge is never consulted and replay stays empty
    trajectories[1] = Trajectory(
        task=tasks[1],
        steps=[Step(0, "<answer>beta</answer>", FinalAnswer("beta"))],
        final_answer="beta",
        termination="answered",
        config=AgentConfig().to_dict(),
    )
    tasks_path = tmp_path / "tasks.jsonl"
    trajs_path = tmp_path / "trajs.jsonl"
    tasks_path.write_text("".join(json.dumps(t.to_dict()) + "\n" for t in tasks))
    trajs_path.write_text("".join(t.to_json() + "\n" for t in trajectories))

    out = tmp_path / "report.json"
    csv_path = tmp_path / "report.csv"
    outcomes_path = tmp_path / "outcomes.jsonl"
    rc = cli_main(
        ["--store", str(tmp_path / "run"), "--replay", str(tmp_path / "none.jsonl"),
         "evaluate", "--tasks", str(tasks_path), "--trajectories", str(trajs_path),
         "--out", str(out), "--csv", str(csv_path), "--outcomes", str(outcomes_path),
         "--group-by", "category"]
    )
    assert rc == 0
    summary = json.loads(capsys.readouterr().out.strip())
    assert summary["overall"]["fraction"] == 1.0
    report = json.loads(out.read_text())
    assert report["per_category"]["Art"]["n"] == 1
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "category,difficulty,value,n"
    assert not any(line.startswith("all,easy") or line.startswith("all,hard") for line in lines)

    rc = cli_main(
        ["--store", str(tmp_path / "run"), "stats",
         "--trajectories", str(trajs_path), "--outcomes", str(outcomes_path)]
    )
    assert rc == 0
    stats = json.loads(capsys.readouterr().out.strip())
    assert stats["n"] == 2 and stats["success"]["n"] == 2


def test_cli_synthesize_and_export_training(tmp_path, capsys):
    from omnitir.agent_runtime import AgentConfig, FinalAnswer, Step, Task, Trajectory
    from omnitir.media_store import MediaStore as _MS
    from omnitir.service.pipeline import agent_registry
    from omnitir.toolbelt import StaticWebClient, ToolCall, ToolResult
    from omnitir.trajectory_forge import ModelBranchVerifier, locate_first_error, explore

    from helpers import turn_answer, turn_call

    cassette_path = tmp_path / "train.jsonl"
    task = Task(task_id="syn0", instruction="what rings before the close?", label="a bell")
    tasks_path = tmp_path / "tasks.jsonl"
    tasks_path.write_text(json.dumps(task.to_dict()) + "\n")

    # record phase: identical registry/tool surface to what the CLI builds
    record_registry = agent_registry(_MS(tmp_path / "rec_media"), StaticWebClient())
    search_turn = turn_call("check the notes", "web_search", {"query": "closing bell"})
    answer_turn = turn_answer("that settles it", "a bell")

    def recording(inner):
        return CassetteBackend(Cassette(cassette_path, LIVE_RECORD), inner)

    result = explore(
        task,
        recording(ScriptedBackend([search_turn, answer_turn])),
        ModelBranchVerifier(recording(ScriptedBackend(["keep"]))),
        k=3,
        max_depth=3,
        registry=record_registry,
        cassette=Cassette(cassette_path, LIVE_RECORD),
    )
    assert len(result.trajectories) == 1

    base = ["--store", str(tmp_path / "run"), "--replay", str(cassette_path)]
    trajs_path = tmp_path / "synth.jsonl"
    rc = cli_main(
        base + ["synthesize-trajectories", "--tasks", str(tasks_path), "--out", str(trajs_path),
                "--k", "3", "--max-depth", "3"]
    )
    assert rc == 0
    summary = json.loads(capsys.readouterr().out.strip())
    assert summary["trajectories"] == 1

    rc = cli_main(
        base + ["export-training", "--trajectories", str(trajs_path),
                "--out", str(tmp_path / "sft.jsonl"), "--kind", "sft"]
    )
    assert rc == 0
    manifest = json.loads(capsys.readouterr().out.strip())
    assert manifest == {"kind": "sft", "count": 1,
                        "sha256": manifest["sha256"], "file": "sft.jsonl"}

    # dpo path: one failed trajectory plus its annotation, locator recorded
    failed = Trajectory(
        task=task,
        steps=[
            Step(0, "guessing blind",
                 ToolCall("c0", "web_search", {"query": "closing whistle"}),
                 ToolResult("c0", "ok", "nothing useful")),
            Step(1, "<answer>a whistle</answer>", FinalAnswer("a whistle")),
        ],
        final_answer="a whistle",
        termination="answered",
        config=AgentConfig().to_dict(),
    )
    failed_path = tmp_path / "failed.jsonl"
    failed_path.write_text(failed.to_json() + "\n")
    annotation = {"task_id": "syn0", "solution": "listen to the last seconds", "answer": "a bell"}
    annotations_path = tmp_path / "annotations.jsonl"
    annotations_path.write_text(json.dumps(annotation) + "\n")

    location_payload = {
        "error_step_index": 0,
        "error_category": "Ineffective Tool Call",
        "rationale": "searched for the wrong sound",
        "corrected_step": {
            "thought": "search for the bell instead",
            "action": {"tool_call": {"name": "web_search", "arguments": {"query": "closing bell"}}},
        },
    }
    locate_first_error(
        failed, annotation,
        recording(ScriptedBackend(["```json\n" + json.dumps(location_payload) + "\n```"])),
    )

    rc = cli_main(
        base + ["export-training", "--trajectories", str(failed_path),
                "--out", str(tmp_path / "dpo.jsonl"), "--kind", "dpo",
                "--annotations", str(annotations_path)]
    )
    assert rc == 0
    manifest = json.loads(capsys.readouterr().out.strip())
    assert manifest["kind"] == "dpo" and manifest["count"] == 1
    pair = json.loads((tmp_path / "dpo.jsonl").read_text().splitlines()[0])
    assert pair["error_step_index"] == 0
    assert pair["error_category"] == "Ineffective Tool Call"


def test_cli_replay_miss_fails_cleanly(tmp_path, capsys):
    empty = tmp_path / "empty.jsonl"
    root = tmp_path / "run"
    png_path = tmp_path / "img.png"
    png_path.write_bytes(make_png_bytes(16, 16))
    assert cli_main(["--store", str(root), "ingest", "--kind", "image", str(png_path)]) == 0
    capsys.readouterr()
    rc = cli_main(["--store", str(root), "--replay", str(empty), "mine"])
    assert rc == 1
    err = json.loads(capsys.readouterr().err.strip())
    assert err["error"]["code"] == "CassetteMiss"
