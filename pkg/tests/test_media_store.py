from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from omnitir.errors import MediaError
from omnitir.media_store import (
    CommandSliceBackend,
    CropBox,
    MediaRef,
    MediaStore,
    TimeSpan,
    segment_clips,
)

from helpers import make_wav_bytes


def test_ingest_is_content_addressed(store, wav_150s):
    first = store.ingest(wav_150s, "audio")
    second = store.ingest(wav_150s, "audio")
    assert first.id == second.id
    assert first.to_dict() == second.to_dict()
    # one manifest line, not two
    assert len(store.refs()) == 1


def test_ingest_deterministic_serialization(tmp_path, wav_150s):
    ref_a = MediaStore(tmp_path / "a").ingest(wav_150s, "audio")
    ref_b = MediaStore(tmp_path / "b").ingest(wav_150s, "audio")
    assert json.dumps(ref_a.to_dict()) == json.dumps(ref_b.to_dict())


def test_ingest_empty_payload(store):
    with pytest.raises(MediaError, match="empty payload"):
        store.ingest(b"", "video")


def test_ingest_kind_conflict(store, wav_150s):
    store.ingest(wav_150s, "audio")
    with pytest.raises(MediaError, match="already stored"):
        store.ingest(wav_150s, "video")


def test_ingest_video_probes_duration(store, avi_150s):
    # oracle: the fixture was generated with 150 s of frames at a fixed fps
    ref = store.ingest(avi_150s, "video")
    assert ref.kind == "video"
    assert ref.duration_s == pytest.approx(150, abs=0.01)
    assert (ref.width, ref.height) == (64, 48)


def test_ingest_audio_probes_duration(store, wav_150s):
    ref = store.ingest(wav_150s, "audio")
    assert ref.duration_s == pytest.approx(150, abs=0.001)


def test_ingest_corrupt_video(store):
    with pytest.raises(MediaError, match="video"):
        store.ingest(b"not really a video", "video")


def test_unknown_id(store):
    with pytest.raises(MediaError, match="unknown media id"):
        store.get("nope")


def test_slice_video(store, avi_150s):
    ref = store.ingest(avi_150s, "video")
    clip = store.slice_media(ref, TimeSpan(0, 10))
    assert clip.duration_s == pytest.approx(10, abs=0.1)
    assert clip.parent == (ref.id, {"op": "slice", "t_start": 0, "t_end": 10})


def test_slice_clamps_to_duration(store, wav_150s):
    ref = store.ingest(wav_150s, "audio")
    clip = store.slice_media(ref, TimeSpan(140, 200))
    assert clip.duration_s == pytest.approx(10, abs=0.1)
    assert clip.parent[1]["t_end"] == 150


def test_slice_degenerate_span():
    with pytest.raises(MediaError, match="degenerate span"):
        TimeSpan(30, 30)


def test_slice_start_beyond_duration(store, wav_150s):
    ref = store.ingest(wav_150s, "audio")
    with pytest.raises(MediaError, match="beyond duration"):
        store.slice_media(ref, TimeSpan(150, 160))


def test_slice_rejects_images(store, png_100):
    ref = store.ingest(png_100, "image")
    with pytest.raises(MediaError, match="cannot slice"):
        store.slice_media(ref, TimeSpan(0, 1))


def test_slice_composes(store, wav_150s):
    # slicing [20, 40] then [0, 10] matches slicing [20, 30] within tolerance
    ref = store.ingest(wav_150s, "audio")
    outer = store.slice_media(ref, TimeSpan(20, 40))
    inner = store.slice_media(outer, TimeSpan(0, 10))
    direct = store.slice_media(ref, TimeSpan(20, 30))
    assert inner.duration_s == pytest.approx(direct.duration_s, abs=0.1)


def test_crop_image(store, png_100):
    ref = store.ingest(png_100, "image")
    out = store.crop_image(ref, CropBox(10, 10, 60, 60))
    assert (out.width, out.height) == (50, 50)
    assert out.parent == (ref.id, {"op": "crop", "box": [10, 10, 60, 60]})


def test_crop_full_frame_keeps_dims(store, png_100):
    ref = store.ingest(png_100, "image")
    out = store.crop_image(ref, CropBox(0, 0, 100, 100))
    assert (out.width, out.height) == (ref.width, ref.height)


def test_crop_inverted_box():
    with pytest.raises(MediaError, match="left >= right"):
        CropBox(60, 10, 10, 60)


def test_crop_out_of_bounds(store, png_100):
    ref = store.ingest(png_100, "image")
    with pytest.raises(MediaError, match="outside"):
        store.crop_image(ref, CropBox(10, 10, 120, 60))


def test_crop_rejects_non_images(store, wav_150s):
    ref = store.ingest(wav_150s, "audio")
    with pytest.raises(MediaError, match="cannot crop"):
        store.crop_image(ref, CropBox(0, 0, 10, 10))


def _timed_ref(duration: float) -> MediaRef:
    return MediaRef(id="x", kind="audio", uri="store/x", duration_s=duration)


def test_segment_150s():
    spans = segment_clips(_timed_ref(150))
    assert [s.to_list() for s in spans] == [[0, 60], [60, 120], [120, 150]]


def test_segment_45s():
    assert [s.to_list() for s in segment_clips(_timed_ref(45))] == [[0, 45]]


def test_segment_exact_boundary():
    assert [s.to_list() for s in segment_clips(_timed_ref(60))] == [[0, 60]]


def test_segment_zero_duration():
    ref = MediaRef(id="x", kind="audio", uri="store/x", duration_s=0.0)
    with pytest.raises(MediaError, match="zero-duration"):
        segment_clips(ref)


@settings(max_examples=60, deadline=None)
@given(
    duration=st.floats(min_value=0.5, max_value=500),
    max_len=st.floats(min_value=1, max_value=120),
)
def test_segment_invariants(duration, max_len):
    spans = segment_clips(_timed_ref(duration), max_len)
    assert spans[0].t_start == 0
    assert spans[-1].t_end == pytest.approx(duration)
    for a, b in zip(spans, spans[1:]):
        assert a.t_end == b.t_start
    assert all(s.duration <= max_len + 1e-9 for s in spans)
    assert sum(s.duration for s in spans) == pytest.approx(duration)


_WAV_SLICE_CMD = """
import sys, wave
src, dst, t0, t1 = sys.argv[1], sys.argv[2], float(sys.argv[3]), float(sys.argv[4])
with wave.open(src, "rb") as f:
    rate = f.getframerate()
    f.setpos(int(t0 * rate))
    frames = f.readframes(int((t1 - t0) * rate))
    params = f.getparams()
with wave.open(dst, "wb") as o:
    o.setnchannels(params.nchannels)
    o.setsampwidth(params.sampwidth)
    o.setframerate(rate)
    o.writeframes(frames)
"""


def test_command_slicer(tmp_path):
    template = ["python3", "-c", _WAV_SLICE_CMD, "{src}", "{dst}", "{t_start}", "{t_end}"]
    store = MediaStore(tmp_path / "m", slicer=CommandSliceBackend(template, {"audio": ".wav"}))
    ref = store.ingest(make_wav_bytes(5), "audio")
    clip = store.slice_media(ref, TimeSpan(0, 2))
    assert clip.duration_s == pytest.approx(2, abs=0.1)
    assert clip.parent[0] == ref.id


def test_command_slicer_failure(tmp_path):
    template = ["python3", "-c", "import sys; sys.exit(3)"]
    store = MediaStore(tmp_path / "m", slicer=CommandSliceBackend(template, {"audio": ".wav"}))
    ref = store.ingest(make_wav_bytes(2), "audio")
    with pytest.raises(MediaError, match="slice command failed"):
        store.slice_media(ref, TimeSpan(0, 1))


def test_sloppy_slicer_rejected(tmp_path):
    # a backend that just copies the source violates the duration contract
    template = [
        "python3", "-c",
        "import shutil, sys; shutil.copyfile(sys.argv[1], sys.argv[2])",
        "{src}", "{dst}",
    ]
    store = MediaStore(tmp_path / "m", slicer=CommandSliceBackend(template, {"audio": ".wav"}))
    ref = store.ingest(make_wav_bytes(10), "audio")
    with pytest.raises(MediaError, match="for a 2.000s span"):
        store.slice_media(ref, TimeSpan(0, 2))


def test_ref_roundtrip(store, avi_150s):
    ref = store.ingest(avi_150s, "video")
    clip = store.slice_media(ref, TimeSpan(3, 7))
    again = MediaRef.from_dict(json.loads(json.dumps(clip.to_dict())))
    assert again == clip


def test_concurrent_ingest_converges(store, wav_150s):
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=8) as pool:
        refs = list(pool.map(lambda _: store.ingest(wav_150s, "audio"), range(16)))
    assert len({r.id for r in refs}) == 1
    assert len(store.refs()) == 1  # one manifest entry, one stored object
