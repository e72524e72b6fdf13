"""Content-addressed media store with deterministic slicing and segmentation.

Blobs live under ``<root>/store/<hash[:2]>/<hash>`` and a JSONL manifest keeps
one record per :class:`MediaRef`. Derived clips and crops are themselves
ingested content, so every ref id is a pure function of the stored bytes.
"""

from __future__ import annotations

import logging
import math
import os
import subprocess
import tempfile
import threading
import wave
from dataclasses import dataclass
from pathlib import Path

import cv2
from PIL import Image

from .errors import MediaError
from .util import append_jsonl, read_jsonl, sha256_hex

logger = logging.getLogger(__name__)

MEDIA_KINDS = ("video", "audio", "image")
TIMED_KINDS = ("video", "audio")
FRAMED_KINDS = ("image", "video")

# Probe round-off budget for sliced clips, in seconds.
SLICE_TOLERANCE_S = 0.1


@dataclass(frozen=True)
class TimeSpan:
    """Half-open [t_start, t_end) window in seconds.

    Integer seconds at the tool boundary; fractional values are allowed
    internally so segmentation can cover non-integral durations exactly.
    """

    t_start: float
    t_end: float

    def __post_init__(self) -> None:
        if self.t_start < 0:
            raise MediaError(f"negative t_start: {self.t_start}")
        if self.t_start >= self.t_end:
            raise MediaError(f"degenerate span: [{self.t_start}, {self.t_end})")

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start

    def to_list(self) -> list:
        return [_plain_number(self.t_start), _plain_number(self.t_end)]

    @classmethod
    def from_list(cls, value: list) -> "TimeSpan":
        if not isinstance(value, (list, tuple)) or len(value) != 2:
            raise MediaError(f"span must be a [t_start, t_end] pair, got {value!r}")
        return cls(float(value[0]), float(value[1]))


@dataclass(frozen=True)
class CropBox:
    """Pixel rectangle [left, top, right, bottom), PIL convention."""

    left: int
    top: int
    right: int
    bottom: int

    def __post_init__(self) -> None:
        if self.left < 0 or self.top < 0:
            raise MediaError("crop box has negative origin")
        if self.left >= self.right:
            raise MediaError(f"left >= right: {self.left} >= {self.right}")
        if self.top >= self.bottom:
            raise MediaError(f"top >= bottom: {self.top} >= {self.bottom}")

    @property
    def width(self) -> int:
        return self.right - self.left

    @property
    def height(self) -> int:
        return self.bottom - self.top

    def to_list(self) -> list[int]:
        return [self.left, self.top, self.right, self.bottom]

    @classmethod
    def from_list(cls, value: list) -> "CropBox":
        if not isinstance(value, (list, tuple)) or len(value) != 4:
            raise MediaError(f"crop box must have 4 elements, got {value!r}")
        return cls(*(int(v) for v in value))


@dataclass(frozen=True)
class MediaRef:
    """Handle to one stored media object, keyed by content hash."""

    id: str
    kind: str
    uri: str
    duration_s: float | None = None
    width: int | None = None
    height: int | None = None
    parent: tuple[str, dict] | None = None

    def __post_init__(self) -> None:
        if self.kind not in MEDIA_KINDS:
            raise MediaError(f"unknown media kind: {self.kind}")
        if (self.duration_s is not None) != (self.kind in TIMED_KINDS):
            raise MediaError(f"duration_s present iff kind is video/audio (kind={self.kind})")
        if ((self.width is not None) and (self.height is not None)) != (self.kind in FRAMED_KINDS):
            raise MediaError(f"width/height present iff kind is image/video (kind={self.kind})")
        if self.duration_s is not None and self.duration_s < 0:
            raise MediaError("negative duration")

    def to_dict(self) -> dict:
        out: dict = {"id": self.id, "kind": self.kind, "uri": self.uri}
        if self.duration_s is not None:
            out["duration_s"] = _plain_number(self.duration_s)
        if self.width is not None:
            out["width"] = self.width
            out["height"] = self.height
        if self.parent is not None:
            out["parent"] = {"id": self.parent[0], "derivation": self.parent[1]}
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "MediaRef":
        parent = None
        if data.get("parent") is not None:
            parent = (data["parent"]["id"], data["parent"]["derivation"])
        duration = data.get("duration_s")
        return cls(
            id=data["id"],
            kind=data["kind"],
            uri=data["uri"],
            duration_s=float(duration) if duration is not None else None,
            width=data.get("width"),
            height=data.get("height"),
            parent=parent,
        )


def _plain_number(value: float) -> float | int:
    return int(value) if float(value).is_integer() else float(value)


# --- probing ---------------------------------------------------------------


def probe_image(path: Path) -> tuple[int, int]:
    try:
        with Image.open(path) as img:
            return int(img.size[0]), int(img.size[1])
    except Exception as exc:
        raise MediaError(f"unreadable image: {exc}") from exc


def probe_audio(path: Path) -> float:
    try:
        with wave.open(str(path), "rb") as fh:
            rate = fh.getframerate()
            if rate <= 0:
                raise MediaError("audio has zero frame rate")
            return fh.getnframes() / rate
    except MediaError:
        raise
    except Exception as exc:
        raise MediaError(f"unreadable audio: {exc}") from exc


def probe_video(path: Path) -> tuple[float, int, int]:
    cap = cv2.VideoCapture(str(path))
    try:
        if not cap.isOpened():
            raise MediaError(f"unreadable video: {path.name}")
        frames = cap.get(cv2.CAP_PROP_FRAME_COUNT)
        fps = cap.get(cv2.CAP_PROP_FPS)
        width = int(cap.get(cv2.CAP_PROP_FRAME_WIDTH))
        height = int(cap.get(cv2.CAP_PROP_FRAME_HEIGHT))
        if frames <= 0 or fps <= 0 or width <= 0 or height <= 0:
            raise MediaError(f"corrupt video: frames={frames} fps={fps}")
        return frames / fps, width, height
    finally:
        cap.release()


# --- slicing backends ------------------------------------------------------


class NativeSliceBackend:
    """In-process slicer for WAV audio and OpenCV-readable video.

    Covers the synthetic fixtures used throughout the test suite; production
    deployments swap in :class:`CommandSliceBackend` for arbitrary codecs.
    """

    def output_suffix(self, kind: str) -> str:
        return ".avi" if kind == "video" else ".wav"

    def slice(self, src: Path, kind: str, span: TimeSpan, dst: Path) -> None:
        if kind == "audio":
            self._slice_wav(src, span, dst)
        elif kind == "video":
            self._slice_video(src, span, dst)
        else:
            raise MediaError(f"cannot slice kind: {kind}")

    @staticmethod
    def _slice_wav(src: Path, span: TimeSpan, dst: Path) -> None:
        with wave.open(str(src), "rb") as fh:
            rate = fh.getframerate()
            start = int(round(span.t_start * rate))
            end = min(int(round(span.t_end * rate)), fh.getnframes())
            fh.setpos(start)
            frames = fh.readframes(max(end - start, 0))
            params = fh.getparams()
        with wave.open(str(dst), "wb") as out:
            out.setnchannels(params.nchannels)
            out.setsampwidth(params.sampwidth)
            out.setframerate(rate)
            out.writeframes(frames)

    @staticmethod
    def _slice_video(src: Path, span: TimeSpan, dst: Path) -> None:
        cap = cv2.VideoCapture(str(src))
        if not cap.isOpened():
            raise MediaError(f"unreadable video: {src.name}")
        try:
            fps = cap.get(cv2.CAP_PROP_FPS)
            total = int(cap.get(cv2.CAP_PROP_FRAME_COUNT))
            width = int(cap.get(cv2.CAP_PROP_FRAME_WIDTH))
            height = int(cap.get(cv2.CAP_PROP_FRAME_HEIGHT))
            start = int(round(span.t_start * fps))
            end = min(int(round(span.t_end * fps)), total)
            writer = cv2.VideoWriter(
                str(dst), cv2.VideoWriter_fourcc(*"MJPG"), fps, (width, height)
            )
            if not writer.isOpened():
                raise MediaError("video writer unavailable")
            try:
                cap.set(cv2.CAP_PROP_POS_FRAMES, start)
                for _ in range(max(end - start, 0)):
                    ok, frame = cap.read()
                    if not ok:
                        break
                    writer.write(frame)
            finally:
                writer.release()
        finally:
            cap.release()


class CommandSliceBackend:
    """Slice by shelling out to an injectable command template.

    The template is a list of argv parts; ``{src}``, ``{dst}``, ``{t_start}``
    and ``{t_end}`` are substituted per call, e.g. an ffmpeg invocation.
    """

    def __init__(self, template: list[str], suffixes: dict[str, str] | None = None):
        self.template = list(template)
        self.suffixes = suffixes or {"video": ".mp4", "audio": ".wav"}

    def output_suffix(self, kind: str) -> str:
        return self.suffixes.get(kind, "")

    def slice(self, src: Path, kind: str, span: TimeSpan, dst: Path) -> None:
        argv = [
            part.format(src=src, dst=dst, t_start=span.t_start, t_end=span.t_end)
            for part in self.template
        ]
        proc = subprocess.run(argv, capture_output=True, text=True)
        if proc.returncode != 0:
            raise MediaError(f"slice command failed ({proc.returncode}): {proc.stderr.strip()}")


# --- the store ---------------------------------------------------------------


class MediaStore:
    """Content-addressed blobs plus a JSONL manifest of refs.

    Ingesting identical bytes converges on one stored object; concurrent
    callers are serialized by a process-local lock and the blob write itself
    is an atomic rename.
    """

    def __init__(self, root: str | Path, slicer=None):
        self.root = Path(root)
        self.blob_dir = self.root / "store"
        self.manifest_path = self.root / "manifest.jsonl"
        self.slicer = slicer or NativeSliceBackend()
        self._lock = threading.Lock()
        self._index: dict[str, MediaRef] = {}
        self.blob_dir.mkdir(parents=True, exist_ok=True)
        for record in read_jsonl(self.manifest_path):
            ref = MediaRef.from_dict(record)
            self._index[ref.id] = ref

    # -- lookup

    def get(self, media_id: str) -> MediaRef:
        try:
            return self._index[media_id]
        except KeyError:
            raise MediaError(f"unknown media id: {media_id}") from None

    def __contains__(self, media_id: str) -> bool:
        return media_id in self._index

    def refs(self) -> list[MediaRef]:
        return sorted(self._index.values(), key=lambda r: r.id)

    def path_for(self, ref: MediaRef) -> Path:
        return self.root / ref.uri

    def open_bytes(self, ref: MediaRef) -> bytes:
        return self.path_for(ref).read_bytes()

    # -- ingestion

    def ingest(
        self,
        source: bytes | str | Path,
        kind: str,
        parent: tuple[str, dict] | None = None,
    ) -> MediaRef:
        if kind not in MEDIA_KINDS:
            raise MediaError(f"unknown media kind: {kind}")
        payload = source if isinstance(source, bytes) else Path(source).read_bytes()
        if not payload:
            raise MediaError("empty payload")
        media_id = sha256_hex(payload)
        with self._lock:
            existing = self._index.get(media_id)
            if existing is not None:
                if existing.kind != kind:
                    raise MediaError(
                        f"content already stored as kind={existing.kind}, not {kind}"
                    )
                return existing
            blob = self.blob_dir / media_id[:2] / media_id
            if not blob.exists():
                blob.parent.mkdir(parents=True, exist_ok=True)
                tmp = blob.with_name(blob.name + ".tmp")
                tmp.write_bytes(payload)
                os.replace(tmp, blob)
            ref = self._probe_ref(media_id, kind, blob, parent)
            append_jsonl(self.manifest_path, ref.to_dict())
            self._index[media_id] = ref
            return ref

    def _probe_ref(
        self, media_id: str, kind: str, blob: Path, parent: tuple[str, dict] | None
    ) -> MediaRef:
        uri = str(blob.relative_to(self.root))
        if kind == "image":
            width, height = probe_image(blob)
            return MediaRef(media_id, kind, uri, width=width, height=height, parent=parent)
        if kind == "audio":
            return MediaRef(media_id, kind, uri, duration_s=probe_audio(blob), parent=parent)
        duration, width, height = probe_video(blob)
        return MediaRef(
            media_id, kind, uri, duration_s=duration, width=width, height=height, parent=parent
        )

    # -- derivations

    def slice_media(self, ref: MediaRef, span: TimeSpan) -> MediaRef:
        if ref.kind not in TIMED_KINDS:
            raise MediaError(f"cannot slice kind: {ref.kind}")
        assert ref.duration_s is not None
        if span.t_start >= ref.duration_s:
            raise MediaError(
                f"t_start {span.t_start} is at or beyond duration {ref.duration_s}"
            )
        if span.t_end > ref.duration_s:
            logger.warning(
                "clamping span end %s to duration %s for %s",
                span.t_end, ref.duration_s, ref.id[:12],
            )
            span = TimeSpan(span.t_start, ref.duration_s)
        derivation = {"op": "slice", "t_start": _plain_number(span.t_start),
                      "t_end": _plain_number(span.t_end)}
        src = self.path_for(ref)
        with tempfile.TemporaryDirectory() as tmp:
            dst = Path(tmp) / ("clip" + self.slicer.output_suffix(ref.kind))
            self.slicer.slice(src, ref.kind, span, dst)
            if not dst.exists() or dst.stat().st_size == 0:
                raise MediaError("slicing backend produced no output")
            clip = self.ingest(dst.read_bytes(), ref.kind, parent=(ref.id, derivation))
        if clip.duration_s is not None and abs(clip.duration_s - span.duration) > SLICE_TOLERANCE_S:
            raise MediaError(
                f"slicing backend produced a {clip.duration_s:.3f}s clip "
                f"for a {span.duration:.3f}s span"
            )
        return clip

    def crop_image(self, ref: MediaRef, box: CropBox) -> MediaRef:
        if ref.kind != "image":
            raise MediaError(f"cannot crop kind: {ref.kind}")
        assert ref.width is not None and ref.height is not None
        if box.right > ref.width or box.bottom > ref.height:
            raise MediaError(
                f"crop box {box.to_list()} outside {ref.width}x{ref.height} image"
            )
        derivation = {"op": "crop", "box": box.to_list()}
        with Image.open(self.path_for(ref)) as img:
            cropped = img.crop((box.left, box.top, box.right, box.bottom))
            with tempfile.TemporaryDirectory() as tmp:
                dst = Path(tmp) / "crop.png"
                cropped.save(dst, format="PNG")
                return self.ingest(dst.read_bytes(), "image", parent=(ref.id, derivation))


def segment_clips(ref: MediaRef, max_len_s: float = 60) -> list[TimeSpan]:
    """Split [0, duration) into contiguous spans of at most *max_len_s* seconds.

    Only the final span may be shorter; spans tile the duration exactly.
    """
    if ref.kind not in TIMED_KINDS:
        raise MediaError(f"cannot segment kind: {ref.kind}")
    if max_len_s <= 0:
        raise MediaError("max_len_s must be positive")
    duration = ref.duration_s or 0.0
    if duration <= 0:
        raise MediaError("zero-duration media")
    spans = []
    count = math.ceil(duration / max_len_s)
    for i in range(count):
        start = i * max_len_s
        end = min((i + 1) * max_len_s, duration)
        spans.append(TimeSpan(start, end))
    return spans
