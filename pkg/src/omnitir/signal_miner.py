"""Perception-model mining of structured signals from media.

Drives a perception backend with the stored prompt templates and validates
the JSON reports strictly: a missing field is an error, never a default,
because mined signals seed graph construction and silent gaps corrupt
provenance downstream.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Callable

from .backends import MediaPart, ModelBackend, ModelRequest, TextPart, user_message
from .errors import BackendError, MiningError, ReportValidationError
from .media_store import MediaRef, MediaStore, TimeSpan, segment_clips
from .templates import render_template
from .util import last_json_block

EVENT_CATEGORIES = ("environment", "sound_effect", "music", "speech")

# Total attempts per mining call (first try included) before giving up.
DEFAULT_ATTEMPTS = 3


@dataclass(frozen=True)
class OcrEntry:
    text: str
    detailed_features: str


@dataclass(frozen=True)
class DetectedObject:
    label: str
    confidence: float
    detailed_features: str


@dataclass(frozen=True)
class FaceEntry:
    age: str
    gender: str
    expression: str
    visual_attributes: str
    activity: str


@dataclass(frozen=True)
class ImageReport:
    ocr: tuple[OcrEntry, ...]
    objects: tuple[DetectedObject, ...]
    faces: tuple[FaceEntry, ...]
    global_summary: str

    def to_dict(self) -> dict:
        return {
            "ocr": [vars(e) for e in self.ocr],
            "objects": [vars(e) for e in self.objects],
            "faces": [vars(e) for e in self.faces],
            "global_summary": self.global_summary,
        }


@dataclass(frozen=True)
class AsrSegment:
    text: str
    start: float
    end: float
    speaker: str


@dataclass(frozen=True)
class SpeakerProfile:
    gender: str
    age_estimate: str
    accent: str
    tone: str


@dataclass(frozen=True)
class AudioEvent:
    label: str
    category: str
    start: float
    end: float


@dataclass(frozen=True)
class AudioReport:
    asr: tuple[AsrSegment, ...]
    speakers: dict[str, SpeakerProfile]
    events: tuple[AudioEvent, ...]
    nonspeech_information: str
    global_summary: str
    span: TimeSpan | None = None  # clip reports only

    def to_dict(self) -> dict:
        out = {
            "asr": [vars(e) for e in self.asr],
            "speakers": {k: vars(v) for k, v in self.speakers.items()},
            "events": [vars(e) for e in self.events],
            "nonspeech_information": self.nonspeech_information,
            "global_summary": self.global_summary,
        }
        if self.span is not None:
            out["span"] = self.span.to_list()
        return out


@dataclass(frozen=True)
class ClipDescription:
    span: TimeSpan
    text: str

    def to_dict(self) -> dict:
        return {"span": self.span.to_list(), "text": self.text}


@dataclass
class MinedSignals:
    source: MediaRef
    image_reports: list[ImageReport] = field(default_factory=list)
    audio_clip_reports: list[AudioReport] = field(default_factory=list)
    audio_global_report: AudioReport | None = None
    video_clip_descriptions: list[ClipDescription] = field(default_factory=list)
    mined_at: str = ""
    miner_backend_id: str = ""

    def is_empty(self) -> bool:
        return not (
            self.image_reports
            or self.audio_clip_reports
            or self.audio_global_report
            or self.video_clip_descriptions
        )

    def clip_spans(self) -> list[TimeSpan]:
        if self.video_clip_descriptions:
            return [c.span for c in self.video_clip_descriptions]
        return [r.span for r in self.audio_clip_reports if r.span is not None]

    def to_dict(self) -> dict:
        return {
            "source": self.source.to_dict(),
            "image_reports": [r.to_dict() for r in self.image_reports],
            "audio_clip_reports": [r.to_dict() for r in self.audio_clip_reports],
            "audio_global_report": (
                self.audio_global_report.to_dict() if self.audio_global_report else None
            ),
            "video_clip_descriptions": [c.to_dict() for c in self.video_clip_descriptions],
            "mined_at": self.mined_at,
            "miner_backend_id": self.miner_backend_id,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MinedSignals":
        return cls(
            source=MediaRef.from_dict(data["source"]),
            image_reports=[validate_image_report(r) for r in data["image_reports"]],
            audio_clip_reports=[validate_audio_report(r) for r in data["audio_clip_reports"]],
            audio_global_report=(
                validate_audio_report(data["audio_global_report"])
                if data.get("audio_global_report")
                else None
            ),
            video_clip_descriptions=[
                ClipDescription(TimeSpan.from_list(c["span"]), c["text"])
                for c in data["video_clip_descriptions"]
            ],
            mined_at=data.get("mined_at", ""),
            miner_backend_id=data.get("miner_backend_id", ""),
        )


# --- parsing and validation --------------------------------------------------


def parse_model_report(text: str):
    """Parse the last fenced ```json block in a model response."""
    try:
        raw = last_json_block(text)
    except ValueError as exc:
        raise ReportValidationError(str(exc)) from exc
    try:
        return json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ReportValidationError(f"json block failed to parse: {exc}") from exc


def _require_obj(value, context: str) -> dict:
    if not isinstance(value, dict):
        raise ReportValidationError(f"{context} must be an object, got {type(value).__name__}")
    return value


def _require_fields(obj: dict, fields_: tuple[str, ...], context: str) -> None:
    for name in fields_:
        if name not in obj:
            raise ReportValidationError(f"missing field {name} in {context}")
    extra = set(obj) - set(fields_)
    if extra:
        raise ReportValidationError(f"unexpected fields in {context}: {sorted(extra)}")


def _require_str(obj: dict, name: str, context: str) -> str:
    value = obj[name]
    if not isinstance(value, str):
        raise ReportValidationError(f"{context}.{name} must be a string")
    return value


def _require_num(obj: dict, name: str, context: str) -> float:
    value = obj[name]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ReportValidationError(f"{context}.{name} must be a number")
    return float(value)


def validate_image_report(value) -> ImageReport:
    obj = _require_obj(value, "image report")
    _require_fields(obj, ("ocr", "objects", "faces", "global_summary"), "image report")
    for name in ("ocr", "objects", "faces"):
        if not isinstance(obj[name], list):
            raise ReportValidationError(f"image report.{name} must be a list")
    ocr = tuple(
        OcrEntry(
            _require_str(_require_obj(e, "ocr entry"), "text", "ocr entry"),
            _require_str(e, "detailed_features", "ocr entry"),
        )
        for e in obj["ocr"]
    )
    objects = []
    for e in obj["objects"]:
        e = _require_obj(e, "object entry")
        _require_fields(e, ("label", "confidence", "detailed_features"), "object entry")
        confidence = _require_num(e, "confidence", "object entry")
        if not 0.0 <= confidence <= 1.0:
            raise ReportValidationError(f"confidence out of range: {confidence}")
        objects.append(
            DetectedObject(
                _require_str(e, "label", "object entry"),
                confidence,
                _require_str(e, "detailed_features", "object entry"),
            )
        )
    face_fields = ("age", "gender", "expression", "visual_attributes", "activity")
    faces = []
    for e in obj["faces"]:
        e = _require_obj(e, "face entry")
        _require_fields(e, face_fields, "face entry")
        faces.append(FaceEntry(*(_require_str(e, k, "face entry") for k in face_fields)))
    summary = _require_str(obj, "global_summary", "image report")
    if not summary:
        raise ReportValidationError("image report.global_summary must be nonempty")
    return ImageReport(ocr, tuple(objects), tuple(faces), summary)


def validate_audio_report(value, span: TimeSpan | None = None) -> AudioReport:
    obj = _require_obj(value, "audio report")
    fields_ = ("asr", "speakers", "events", "nonspeech_information", "global_summary")
    body = dict(obj)
    embedded_span = body.pop("span", None)
    _require_fields(body, fields_, "audio report")
    if span is None and embedded_span is not None:
        span = TimeSpan.from_list(embedded_span)
    if not isinstance(body["asr"], list) or not isinstance(body["events"], list):
        raise ReportValidationError("audio report asr/events must be lists")
    speaker_fields = ("gender", "age_estimate", "accent", "tone")
    speakers_obj = _require_obj(body["speakers"], "speakers map")
    speakers = {}
    for speaker_id, profile in speakers_obj.items():
        profile = _require_obj(profile, f"speaker {speaker_id}")
        _require_fields(profile, speaker_fields, f"speaker {speaker_id}")
        speakers[speaker_id] = SpeakerProfile(
            *(_require_str(profile, k, f"speaker {speaker_id}") for k in speaker_fields)
        )
    asr = []
    for e in body["asr"]:
        e = _require_obj(e, "asr entry")
        _require_fields(e, ("text", "start", "end", "speaker"), "asr entry")
        start = _require_num(e, "start", "asr entry")
        end = _require_num(e, "end", "asr entry")
        if start < 0 or start > end:
            raise ReportValidationError(f"negative segment: start={start} end={end}")
        speaker = _require_str(e, "speaker", "asr entry")
        if speaker not in speakers:
            raise ReportValidationError(f"asr speaker {speaker} missing from speakers map")
        asr.append(AsrSegment(_require_str(e, "text", "asr entry"), start, end, speaker))
    events = []
    for e in body["events"]:
        e = _require_obj(e, "event entry")
        _require_fields(e, ("label", "category", "start", "end"), "event entry")
        category = _require_str(e, "category", "event entry")
        if category not in EVENT_CATEGORIES:
            raise ReportValidationError(f"unknown category: {category}")
        start = _require_num(e, "start", "event entry")
        end = _require_num(e, "end", "event entry")
        if start < 0 or start > end:
            raise ReportValidationError(f"negative segment: start={start} end={end}")
        events.append(AudioEvent(_require_str(e, "label", "event entry"), category, start, end))
    return AudioReport(
        asr=tuple(asr),
        speakers=speakers,
        events=tuple(events),
        nonspeech_information=_require_str(body, "nonspeech_information", "audio report"),
        global_summary=_require_str(body, "global_summary", "audio report"),
        span=span,
    )


# --- mining ------------------------------------------------------------------


def _mine(
    backend: ModelBackend,
    prompt: str,
    media: MediaRef,
    validate: Callable[[str], object],
    max_attempts: int,
    what: str,
):
    failures: list[str] = []
    for _ in range(max_attempts):
        try:
            text = backend.complete(
                ModelRequest(system=None, messages=(user_message(TextPart(prompt), MediaPart(media)),))
            )
        except BackendError:
            raise
        try:
            return validate(text)
        except ReportValidationError as exc:
            failures.append(str(exc))
    raise MiningError(
        f"mining {what} failed after {max_attempts} attempts: {failures[-1]}"
    )


def mine_image(ref: MediaRef, backend: ModelBackend, max_attempts: int = DEFAULT_ATTEMPTS) -> ImageReport:
    if ref.kind != "image":
        raise ReportValidationError(f"mine_image needs an image, got {ref.kind}")
    prompt = render_template("image_analysis")
    return _mine(
        backend, prompt, ref,
        lambda text: validate_image_report(parse_model_report(text)),
        max_attempts, "image report",
    )


def mine_audio_clip(
    ref: MediaRef,
    span: TimeSpan,
    total_duration: float,
    backend: ModelBackend,
    max_attempts: int = DEFAULT_ATTEMPTS,
) -> AudioReport:
    if ref.kind not in ("audio", "video"):
        raise ReportValidationError(f"mine_audio_clip needs audio/video, got {ref.kind}")
    prompt = render_template(
        "audio_clip_analysis",
        total_duration=total_duration,
        start_time=span.t_start,
        end_time=span.t_end,
    )
    return _mine(
        backend, prompt, ref,
        lambda text: validate_audio_report(parse_model_report(text), span=span),
        max_attempts, "audio clip report",
    )


def mine_audio_global(ref: MediaRef, backend: ModelBackend, max_attempts: int = DEFAULT_ATTEMPTS) -> AudioReport:
    if ref.kind not in ("audio", "video"):
        raise ReportValidationError(f"mine_audio_global needs audio/video, got {ref.kind}")
    prompt = render_template("audio_global_analysis")
    return _mine(
        backend, prompt, ref,
        lambda text: validate_audio_report(parse_model_report(text)),
        max_attempts, "audio global report",
    )


def mine_video_clip(
    ref: MediaRef,
    span: TimeSpan,
    backend: ModelBackend,
    total_duration: float | None = None,
    max_attempts: int = DEFAULT_ATTEMPTS,
) -> ClipDescription:
    if ref.kind != "video":
        raise ReportValidationError(f"mine_video_clip needs video, got {ref.kind}")
    prompt = render_template(
        "video_clip_analysis",
        total_duration=total_duration if total_duration is not None else (ref.duration_s or 0.0),
        start_time=span.t_start,
        end_time=span.t_end,
    )

    def validate(text: str) -> ClipDescription:
        if not text.strip():
            raise ReportValidationError("empty clip description")
        return ClipDescription(span, text.strip())

    return _mine(backend, prompt, ref, validate, max_attempts, "video clip description")


def mine_all(
    ref: MediaRef,
    store: MediaStore,
    backend: ModelBackend,
    max_len_s: float = 60,
    max_attempts: int = DEFAULT_ATTEMPTS,
    now: Callable[[], str] | None = None,
) -> MinedSignals:
    """Segment, mine every clip plus the global report, and assemble the result.

    Clip mining calls are independent and could run in parallel; results are
    assembled in span-start order either way.
    """
    timestamp = now() if now else datetime.now(timezone.utc).isoformat()
    signals = MinedSignals(
        source=ref, mined_at=timestamp, miner_backend_id=getattr(backend, "backend_id", "")
    )
    if ref.kind == "image":
        signals.image_reports.append(mine_image(ref, backend, max_attempts))
        return signals

    total = ref.duration_s or 0.0
    spans = segment_clips(ref, max_len_s)
    for span in spans:
        clip = store.slice_media(ref, span)
        if ref.kind == "video":
            signals.video_clip_descriptions.append(
                mine_video_clip(clip, span, backend, total_duration=total, max_attempts=max_attempts)
            )
        signals.audio_clip_reports.append(
            mine_audio_clip(clip, span, total, backend, max_attempts)
        )
    signals.audio_global_report = mine_audio_global(ref, backend, max_attempts)
    signals.video_clip_descriptions.sort(key=lambda c: c.span.t_start)
    signals.audio_clip_reports.sort(key=lambda r: r.span.t_start if r.span else 0.0)
    mined = [s.to_list() for s in signals.clip_spans()]
    expected = [s.to_list() for s in spans]
    if mined != expected:
        raise MiningError(f"clip spans {mined} do not match segmentation {expected}")
    return signals
