"""Pipeline configuration: backend endpoints, budgets, and cassette policy.

Config files are JSON. Secrets are referenced by environment-variable name
only and are read at call time; nothing here ever serializes a key value.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ..backends import CassetteBackend, HttpChatBackend, ModelBackend
from ..cassette import CASSETTE_MODES, LIVE_ONLY, LIVE_RECORD, REPLAY, Cassette
from ..errors import ConfigError

BACKEND_ROLES = (
    "miner",
    "builder",
    "expander",
    "fuzzifier",
    "judge",
    "policy",
    "verifier",
    "locator",
    "analyzer",
    "perception_qa",
)


@dataclass(frozen=True)
class BackendSpec:
    endpoint: str = ""
    model: str = ""
    api_key_env: str = ""

    def is_live(self) -> bool:
        return bool(self.endpoint)


@dataclass
class PipelineConfig:
    store_root: str = "run"
    cassette_path: str = ""
    cassette_mode: str = LIVE_ONLY
    backends: dict[str, BackendSpec] = field(default_factory=dict)
    committee: list[BackendSpec] = field(default_factory=list)
    retries: int = 3
    max_steps: int = 30
    expansion_max_steps: int = 12
    exploration_k: int = 3
    exploration_max_depth: int = 12
    observation_cap: int = 4000
    clip_max_len_s: float = 60.0
    min_hops: int = 2
    path_seed: int = 0
    review_quorum: int = 1
    web_search_endpoint: str = ""
    web_image_search_endpoint: str = ""
    web_api_key_env: str = ""

    def __post_init__(self) -> None:
        if self.cassette_mode not in CASSETTE_MODES:
            raise ConfigError(f"unknown cassette mode: {self.cassette_mode}")
        if self.cassette_mode == REPLAY:
            live = [role for role, spec in self.backends.items() if spec.is_live()]
            live += [f"committee[{i}]" for i, s in enumerate(self.committee) if s.is_live()]
            if self.web_search_endpoint or self.web_image_search_endpoint:
                live.append("web")
            if live:
                raise ConfigError(f"replay mode forbids live endpoints: {live}")
            if not self.cassette_path:
                raise ConfigError("replay mode needs a cassette_path")
        if self.retries < 1:
            raise ConfigError("retries must be >= 1")

    def to_dict(self) -> dict:
        out = asdict(self)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        data = dict(data)
        backends = {
            role: BackendSpec(**spec) for role, spec in data.pop("backends", {}).items()
        }
        committee = [BackendSpec(**spec) for spec in data.pop("committee", [])]
        return cls(backends=backends, committee=committee, **data)

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError, TypeError) as exc:
            raise ConfigError(f"cannot load config {path}: {exc}") from exc

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )

    # -- backend construction

    def open_cassette(self) -> Cassette | None:
        if not self.cassette_path:
            return None
        return Cassette(self.cassette_path, self.cassette_mode)

    def build_backend(self, role: str, cassette: Cassette | None) -> ModelBackend:
        spec = self.backends.get(role, BackendSpec())
        return _assemble(role, spec, self.cassette_mode, cassette)

    def build_committee(self, cassette: Cassette | None) -> list[ModelBackend]:
        specs = self.committee or [BackendSpec(), BackendSpec()]
        return [
            _assemble(f"committee{i}", spec, self.cassette_mode, cassette)
            for i, spec in enumerate(specs)
        ]


def _assemble(
    role: str, spec: BackendSpec, mode: str, cassette: Cassette | None
) -> ModelBackend:
    live = None
    if spec.is_live():
        live = HttpChatBackend(
            endpoint=spec.endpoint,
            model=spec.model or role,
            api_key_env=spec.api_key_env,
            backend_id=f"{role}:{spec.model or spec.endpoint}",
        )
    if cassette is None:
        if live is None:
            raise ConfigError(f"backend role {role} has no endpoint and no cassette")
        return live
    if mode == LIVE_RECORD and live is None:
        raise ConfigError(f"record mode needs a live endpoint for backend role {role}")
    return CassetteBackend(cassette, live)
