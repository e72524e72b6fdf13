from __future__ import annotations

import json
from pathlib import Path

import pytest

from omnitir.cassette import Cassette, LIVE_RECORD, REPLAY
from omnitir.errors import CassetteMiss
from omnitir.signal_miner import MinedSignals
from omnitir.toolbelt import (
    PINNED_TOOL_SCHEMAS,
    SandboxConfig,
    StaticWebClient,
    SummaryIndex,
    Tool,
    ToolCall,
    ToolRegistry,
    dispatch,
    make_audio_qa_tool,
    make_code_executor_tool,
    make_page_browser_tool,
    make_read_audio_tool,
    make_read_image_tool,
    make_read_video_tool,
    make_related_media_tool,
    make_web_search_tool,
    ok,
    search_related_media,
)

from helpers import CountingBackend, audio_report_obj, image_report_obj

GOLDEN_SCHEMAS = Path(__file__).parent / "goldens" / "schemas"


def _call(name, arguments, call_id="c0"):
    return ToolCall(call_id=call_id, name=name, arguments=arguments)


def test_tool_schemas_match_goldens():
    for name, builder in PINNED_TOOL_SCHEMAS.items():
        rendered = json.dumps(builder().to_function_schema(), indent=2, ensure_ascii=False) + "\n"
        assert rendered.encode("utf-8") == (GOLDEN_SCHEMAS / f"{name}.json").read_bytes(), name


def test_dispatch_unknown_tool():
    result = dispatch(_call("fly", {}), ToolRegistry())
    assert result.status == "tool_error"
    assert "unknown tool" in result.text


def test_dispatch_schema_violation(store, png_100):
    ref = store.ingest(png_100, "image")
    registry = ToolRegistry([make_read_image_tool(store)])
    result = dispatch(_call("read_image", {"image_ids": [ref.id], "crop_box": [1, 2, 3]}), registry)
    assert result.status == "tool_error"
    assert "invalid arguments" in result.text


def test_code_executor_print():
    registry = ToolRegistry([make_code_executor_tool()])
    result = dispatch(_call("code_executor", {"code": "print(1+1)"}), registry)
    assert result.status == "ok"
    assert result.text == "2"


def test_code_executor_bare_expression():
    # calculator-style usage: a bare arithmetic expression prints its value
    registry = ToolRegistry([make_code_executor_tool()])
    result = dispatch(_call("code_executor", {"code": "1979 - 1935"}), registry)
    assert result.status == "ok"
    assert result.text == "44"


def test_code_executor_timeout():
    registry = ToolRegistry([make_code_executor_tool(SandboxConfig(timeout_s=0.5))])
    result = dispatch(_call("code_executor", {"code": "while True: pass"}), registry)
    assert result.status == "tool_error"
    assert "timeout after 0.5 s" in result.text


def test_code_executor_exception_is_signal():
    registry = ToolRegistry([make_code_executor_tool()])
    result = dispatch(_call("code_executor", {"code": "raise ValueError('boom')"}), registry)
    assert result.status == "ok"
    assert "[stderr]" in result.text and "ValueError: boom" in result.text


def test_code_executor_network_disabled():
    registry = ToolRegistry([make_code_executor_tool()])
    code = "import socket\nsocket.socket()"
    result = dispatch(_call("code_executor", {"code": code}), registry)
    assert result.status == "ok"
    assert "network access is disabled" in result.text


def test_code_executor_memory_limit():
    registry = ToolRegistry([make_code_executor_tool(SandboxConfig(memory_mb=128))])
    result = dispatch(
        _call("code_executor", {"code": "x = bytearray(512 * 1024 * 1024)"}), registry
    )
    assert result.status == "ok"
    assert "MemoryError" in result.text


FIVE_RESULTS = [
    {"title": f"Result {i}", "url": f"https://example.org/{i}", "snippet": f"snippet {i}"}
    for i in range(5)
]


def test_web_search_empty_query():
    registry = ToolRegistry([make_web_search_tool(StaticWebClient())])
    result = dispatch(_call("web_search", {"query": "   "}), registry)
    assert result.status == "tool_error" and "empty query" in result.text


def test_web_search_query_too_long():
    registry = ToolRegistry([make_web_search_tool(StaticWebClient())])
    result = dispatch(_call("web_search", {"query": "q" * 513}), registry)
    assert result.status == "tool_error" and "query too long" in result.text


def test_web_search_recorded_results():
    client = StaticWebClient(search_results={"bridges": FIVE_RESULTS})
    registry = ToolRegistry([make_web_search_tool(client)])
    result = dispatch(_call("web_search", {"query": "bridges"}), registry)
    assert result.status == "ok"
    positions = [result.text.find(f"Result {i}") for i in range(5)]
    assert all(p >= 0 for p in positions) and positions == sorted(positions)


def test_page_browser_malformed_url():
    registry = ToolRegistry([make_page_browser_tool(StaticWebClient())])
    result = dispatch(_call("page_browser", {"url": "not a url"}), registry)
    assert result.status == "tool_error" and "malformed url" in result.text


def test_page_browser_http_error():
    registry = ToolRegistry([make_page_browser_tool(StaticWebClient())])
    result = dispatch(_call("page_browser", {"url": "https://example.org/missing"}), registry)
    assert result.status == "tool_error" and "http error 404" in result.text


def test_page_browser_extracts_and_truncates():
    html = "<html><head><script>junk()</script></head><body><p>" + "word " * 2000 + "</p></body></html>"
    client = StaticWebClient(pages={"https://example.org/long": html})
    registry = ToolRegistry([make_page_browser_tool(client)])
    result = dispatch(_call("page_browser", {"url": "https://example.org/long"}), registry, observation_cap=500)
    assert result.status == "ok"
    assert result.truncated and len(result.text) == 500
    assert "junk" not in result.text


def test_truncation_boundary():
    registry = ToolRegistry(
        [Tool(make_web_search_tool(StaticWebClient()).schema, lambda args: ok("x" * 100))]
    )
    exact = dispatch(_call("web_search", {"query": "q"}), registry, observation_cap=100)
    assert not exact.truncated and len(exact.text) == 100
    clipped = dispatch(_call("web_search", {"query": "q"}), registry, observation_cap=99)
    assert clipped.truncated and len(clipped.text) == 99


def test_read_video_slices(store, avi_150s):
    ref = store.ingest(avi_150s, "video")
    registry = ToolRegistry([make_read_video_tool(store)])
    result = dispatch(
        _call("read_video", {"video_id": ref.id, "t_start": 0, "t_end": 10}), registry
    )
    assert result.status == "ok"
    assert len(result.media) == 1
    assert result.media[0].duration_s == pytest.approx(10, abs=0.1)


def test_read_video_bad_span(store, avi_150s):
    ref = store.ingest(avi_150s, "video")
    registry = ToolRegistry([make_read_video_tool(store)])
    result = dispatch(
        _call("read_video", {"video_id": ref.id, "t_start": 10, "t_end": 10}), registry
    )
    assert result.status == "tool_error" and "degenerate span" in result.text


def test_read_audio_unknown_id(store):
    registry = ToolRegistry([make_read_audio_tool(store)])
    result = dispatch(
        _call("read_audio", {"audio_id": "missing", "t_start": 0, "t_end": 5}), registry
    )
    assert result.status == "tool_error" and "unknown media id" in result.text


def test_read_image_empty_list(store):
    registry = ToolRegistry([make_read_image_tool(store)])
    result = dispatch(_call("read_image", {"image_ids": []}), registry)
    assert result.status == "tool_error" and "empty list" in result.text


def test_read_image_with_crop(store, png_100):
    ref = store.ingest(png_100, "image")
    registry = ToolRegistry([make_read_image_tool(store)])
    result = dispatch(
        _call("read_image", {"image_ids": [ref.id], "crop_box": [10, 10, 60, 60]}), registry
    )
    assert result.status == "ok"
    assert (result.media[0].width, result.media[0].height) == (50, 50)


def test_audio_qa_requires_a_path(store):
    registry = ToolRegistry([make_audio_qa_tool(store, CountingBackend([]))])
    result = dispatch(_call("audio_qa", {"question": "what tone?"}), registry)
    assert result.status == "tool_error" and "one media path required" in result.text


def test_audio_qa_prefers_audio_path(store, wav_150s, avi_150s):
    audio = store.ingest(wav_150s, "audio")
    video = store.ingest(avi_150s, "video")
    backend = CountingBackend(["I cannot determine."])
    registry = ToolRegistry([make_audio_qa_tool(store, backend)])
    result = dispatch(
        _call("audio_qa", {"question": "?", "audio_path": audio.id, "video_path": video.id}),
        registry,
    )
    # abstention text passes through unaltered; the audio stream wins the tie
    assert result.text == "I cannot determine."
    media_part = backend.requests[0].messages[0].parts[1]
    assert media_part.ref.id == audio.id


def test_cassette_replay_determinism(tmp_path):
    client = StaticWebClient(search_results={"q": FIVE_RESULTS})
    registry = ToolRegistry([make_web_search_tool(client)])
    path = tmp_path / "tools.jsonl"
    recorded = dispatch(_call("web_search", {"query": "q"}), registry, Cassette(path, LIVE_RECORD))

    empty_registry = ToolRegistry([make_web_search_tool(StaticWebClient())])
    replay_one = dispatch(_call("web_search", {"query": "q"}), empty_registry, Cassette(path, REPLAY))
    replay_two = dispatch(_call("web_search", {"query": "q"}), empty_registry, Cassette(path, REPLAY))
    assert replay_one.to_dict() == recorded.to_dict()
    assert json.dumps(replay_one.to_dict()) == json.dumps(replay_two.to_dict())


def test_cassette_miss_is_infrastructure(tmp_path):
    registry = ToolRegistry([make_web_search_tool(StaticWebClient())])
    with pytest.raises(CassetteMiss, match="cassette miss"):
        dispatch(
            _call("web_search", {"query": "never recorded"}),
            registry,
            Cassette(tmp_path / "empty.jsonl", REPLAY),
        )


def _signals(store, ref, summary):
    signals = MinedSignals(source=ref)
    if ref.kind == "image":
        from omnitir.signal_miner import validate_image_report

        signals.image_reports.append(validate_image_report(image_report_obj(summary)))
    else:
        from omnitir.signal_miner import validate_audio_report

        signals.audio_global_report = validate_audio_report(audio_report_obj(summary))
    return signals


def test_summary_index_scoring(store, png_100, wav_150s):
    image = store.ingest(png_100, "image")
    audio = store.ingest(wav_150s, "audio")
    index = SummaryIndex()
    index.add_signals(_signals(store, image, "a drawbridge over a river at dusk"))
    index.add_signals(_signals(store, audio, "street noise and a passing train"))

    hits = index.search("drawbridge river", n=5)
    assert hits[0][0] == image.id
    # oracle: recompute tf-idf by hand for the winning document
    doc_tokens = ["a", "drawbridge", "over", "a", "river", "at", "dusk"]
    expected = index.score("drawbridge river", doc_tokens)
    assert hits[0][1] == pytest.approx(expected)

    assert search_related_media("audio", "street noise", index) == [audio.id]
    assert search_related_media("video", "street noise", index) == []


def test_related_media_tool_empty_index():
    registry = ToolRegistry([make_related_media_tool("audio", SummaryIndex())])
    result = dispatch(_call("search_related_audio_info", {"query": "anything"}), registry)
    assert result.status == "ok" and result.text == "no related media found"


def test_registry_rejects_duplicates(store):
    registry = ToolRegistry([make_read_image_tool(store)])
    with pytest.raises(Exception, match="duplicate tool name"):
        registry.register(make_read_image_tool(store))


def test_schema_doc_export(store):
    from omnitir.toolbelt import export_schema_doc

    registry = ToolRegistry([make_read_image_tool(store), make_read_video_tool(store)])
    doc = json.loads(export_schema_doc(registry))
    assert [entry["function"]["name"] for entry in doc] == ["read_image", "read_video"]
    assert all(entry["type"] == "function" for entry in doc)
