"""HTTP review API consumed by the human-verification UI.

Endpoints:
  GET  /api/health                 liveness probe
  GET  /api/review/queue           paged queue summaries
  GET  /api/qa/{qa_id}             full qa payload (fuzz map, path, media ids)
  GET  /api/media/{media_id}       byte stream with Range support for playback
  POST /api/qa/{qa_id}/decision    apply a review decision

Errors carry machine-readable codes: {"code": ..., "message": ...}.
"""

from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI, Header, Request, Response
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from ..errors import MediaError, ReviewError
from ..media_store import MediaStore
from .review import ReviewDecision, ReviewService

MEDIA_TYPES = {"image": "image/png", "audio": "audio/wav", "video": "video/x-msvideo"}


class DecisionBody(BaseModel):
    verdict: str
    reviewer_id: str = ""
    edited_question: str | None = None
    edited_answer: str | None = None
    note: str = ""


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"code": code, "message": message})


def _summary(qa) -> dict:
    return {
        "qa_id": qa.qa_id,
        "question_preview": qa.question[:160],
        "domain": qa.domain,
        "difficulty": qa.difficulty,
        "media_kinds": sorted({m.kind for m in qa.media}),
        "status": qa.status,
    }


def create_app(
    review: ReviewService, media: MediaStore, ui_dir: str | Path | None = None
) -> FastAPI:
    app = FastAPI(title="omnitir review api")
    if ui_dir is not None:
        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

    @app.get("/api/health")
    def health() -> dict:
        return {"status": "ok"}

    @app.get("/api/review/queue")
    def review_queue(page: int = 1, page_size: int = 20, domain: str = "", difficulty: str = "") -> dict:
        items = review.queue()
        if domain:
            items = [qa for qa in items if qa.domain == domain]
        if difficulty:
            items = [qa for qa in items if qa.difficulty == difficulty]
        total = len(items)
        page = max(page, 1)
        page_size = max(min(page_size, 100), 1)
        start = (page - 1) * page_size
        return {
            "items": [_summary(qa) for qa in items[start : start + page_size]],
            "page": page,
            "page_size": page_size,
            "total": total,
        }

    @app.get("/api/qa/{qa_id}")
    def get_qa(qa_id: str):
        qa = review.qa_store.latest(qa_id)
        if qa is None:
            return _error(404, "unknown_qa", f"no qa with id {qa_id}")
        return qa.to_dict()

    @app.get("/api/media/{media_id}")
    def get_media(media_id: str, request: Request):
        try:
            ref = media.get(media_id)
        except MediaError:
            return _error(404, "unknown_media", f"no media with id {media_id}")
        payload = media.open_bytes(ref)
        content_type = MEDIA_TYPES.get(ref.kind, "application/octet-stream")
        range_header = request.headers.get("range")
        if range_header:
            span = _parse_range(range_header, len(payload))
            if span is None:
                return _error(416, "bad_range", f"unsatisfiable range: {range_header}")
            start, end = span
            return Response(
                content=payload[start : end + 1],
                status_code=206,
                media_type=content_type,
                headers={
                    "Content-Range": f"bytes {start}-{end}/{len(payload)}",
                    "Accept-Ranges": "bytes",
                },
            )
        return Response(
            content=payload,
            media_type=content_type,
            headers={"Accept-Ranges": "bytes"},
        )

    @app.post("/api/qa/{qa_id}/decision")
    def post_decision(
        qa_id: str,
        body: DecisionBody,
        x_reviewer_id: str | None = Header(default=None),
    ):
        reviewer = body.reviewer_id or x_reviewer_id or ""
        try:
            decision = ReviewDecision(
                qa_id=qa_id,
                reviewer_id=reviewer,
                verdict=body.verdict,
                edited_question=body.edited_question,
                edited_answer=body.edited_answer,
                note=body.note,
            )
            status = review.apply_decision(decision)
        except ReviewError as exc:
            message = str(exc)
            if "unknown qa_id" in message:
                return _error(404, "unknown_qa", message)
            if "already verified" in message or "not awaiting review" in message:
                return _error(409, "invalid_transition", message)
            return _error(422, "invalid_decision", message)
        return {"qa_id": qa_id, "status": status}

    return app


def _parse_range(header: str, size: int) -> tuple[int, int] | None:
    """Parse a single-range ``bytes=a-b`` header into inclusive offsets."""
    header = header.strip().lower()
    if not header.startswith("bytes="):
        return None
    spec = header[len("bytes=") :]
    if "," in spec or "-" not in spec:
        return None
    start_s, _, end_s = spec.partition("-")
    try:
        if start_s == "":
            # suffix form: last N bytes
            length = int(end_s)
            if length <= 0:
                return None
            return max(size - length, 0), size - 1
        start = int(start_s)
        end = int(end_s) if end_s else size - 1
    except ValueError:
        return None
    if start >= size or start > end:
        return None
    return start, min(end, size - 1)
