"""Prompt template registry.

Templates live as plain text files under ``omnitir/templates/`` and are sent
verbatim apart from placeholder substitution. A checksum test asserts they
match the committed golden copies, so edit the files, not rendered strings.

Placeholders are substituted literally (``{name}`` or ``{name:.2f}``); plain
``str.format`` is unusable because several templates contain JSON braces.
"""

from __future__ import annotations

from functools import lru_cache
from importlib import resources

# Prompts whose exact wording is part of the protocol contract; any edit must
# regenerate the goldens and invalidates recorded cassettes.
PROTOCOL_TEMPLATES = (
    "image_analysis",
    "audio_clip_analysis",
    "audio_global_analysis",
    "error_analysis",
    "judge",
    "system_base",
    "system_active_perception",
    "audio_qa_system",
    "vision_qa_system",
)

# Templates authored for this toolkit; same golden discipline, but the wording
# is ours to evolve.
ARTIFACT_TEMPLATES = (
    "video_clip_analysis",
    "graph_builder",
    "expansion_system",
    "fuzzify",
    "screening",
    "error_locator",
    "branch_verifier",
)

ALL_TEMPLATES = PROTOCOL_TEMPLATES + ARTIFACT_TEMPLATES


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    if name not in ALL_TEMPLATES:
        raise KeyError(f"unknown template: {name}")
    return (
        resources.files("omnitir") / "templates" / f"{name}.txt"
    ).read_text(encoding="utf-8")


def render(template: str, **values: object) -> str:
    """Substitute ``{key}`` and ``{key:.2f}`` tokens, leaving other braces alone."""
    out = template
    for key, value in values.items():
        fixed = "{" + key + ":.2f}"
        if fixed in out:
            out = out.replace(fixed, f"{float(value):.2f}")  # type: ignore[arg-type]
        out = out.replace("{" + key + "}", str(value))
    return out


def render_template(name: str, **values: object) -> str:
    return render(load_template(name), **values)
