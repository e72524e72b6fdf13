"""Exception hierarchy shared across the toolkit."""

from __future__ import annotations


class OmnitirError(Exception):
    """Base class for all toolkit errors."""


class MediaError(OmnitirError):
    """Invalid media payloads, spans, crops, or probe failures."""


class ReportValidationError(OmnitirError):
    """A mined report or backend JSON payload violates its schema."""


class MiningError(OmnitirError):
    """Mining failed after exhausting its retry budget."""


class BackendError(OmnitirError):
    """Infrastructure fault talking to a model backend."""


class CassetteMiss(BackendError):
    """Replay-mode cassette has no entry for the request."""


class GraphError(OmnitirError):
    """Event-graph construction, expansion, or path selection failure."""


class FuzzificationError(GraphError):
    """Question generation violated a safety post-check."""


class ForgeError(OmnitirError):
    """Training-data synthesis failure (exploration, masking, pairing)."""


class EvalError(OmnitirError):
    """Scoring or error-analysis failure."""


class StoreError(OmnitirError):
    """Persistence-layer failure (stores are append-only)."""


class ReviewError(OmnitirError):
    """Invalid review transition or unknown review target."""


class ConfigError(OmnitirError):
    """Invalid pipeline configuration."""
