"""The tool-integrated reasoning loop.

One episode alternates model generation with tool execution: generate, parse
out delimiter-wrapped tool calls, pause, dispatch, append observations, and
resume until the model emits an answer span or the step budget runs out.
Every step is persisted incrementally so a crash loses at most the step in
flight.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

from .backends import (
    MediaPart,
    Message,
    ModelBackend,
    ModelRequest,
    TextPart,
)
from .cassette import Cassette
from .errors import BackendError, ConfigError, OmnitirError
from .media_store import MediaRef
from .templates import load_template
from .toolbelt import ToolCall, ToolRegistry, ToolResult, dispatch
from .util import append_jsonl

# Tool-call delimiters follow the common trace convention; the strings are a
# per-backend-family constant with this one canonical default.
TOOL_CALL_OPEN = "<tool_call>"
TOOL_CALL_CLOSE = "</tool_call>"
TOOL_RESPONSE_OPEN = "<tool_response>"
TOOL_RESPONSE_CLOSE = "</tool_response>"

_TOOL_CALL_RE = re.compile(
    re.escape(TOOL_CALL_OPEN) + r"(.*?)" + re.escape(TOOL_CALL_CLOSE), re.DOTALL
)
_ANSWER_RE = re.compile(r"<answer>(.*?)</answer>", re.DOTALL)

SYSTEM_PROMPT_TEMPLATES = {
    "base": "system_base",
    "active_perception": "system_active_perception",
}

PERCEPTION_MODES = ("native", "audio_as_tool", "visual_as_tool", "both_as_tools")
PERCEPTION_QA_TOOLS = ("audio_qa", "vision_qa")

TERMINATION_ANSWERED = "answered"
TERMINATION_STEP_LIMIT = "step_limit"
TERMINATION_BACKEND_ERROR = "backend_error"


@dataclass(frozen=True)
class FinalAnswer:
    text: str


@dataclass(frozen=True)
class InvalidAction:
    """Marker for an unparseable tool block or a turn with no action at all."""

    raw: str
    reason: str


Action = ToolCall | FinalAnswer | InvalidAction


@dataclass(frozen=True)
class Task:
    task_id: str
    instruction: str
    media: tuple[MediaRef, ...] = ()
    label: str | None = None
    annotation: dict | None = None

    def to_dict(self) -> dict:
        out: dict = {
            "task_id": self.task_id,
            "instruction": self.instruction,
            "media": [m.to_dict() for m in self.media],
        }
        if self.label is not None:
            out["label"] = self.label
        if self.annotation is not None:
            out["annotation"] = self.annotation
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Task":
        return cls(
            task_id=data["task_id"],
            instruction=data["instruction"],
            media=tuple(MediaRef.from_dict(m) for m in data.get("media", [])),
            label=data.get("label"),
            annotation=data.get("annotation"),
        )


@dataclass(frozen=True)
class Step:
    index: int
    thought: str
    action: Action
    observation: ToolResult | None = None

    def __post_init__(self) -> None:
        if isinstance(self.action, FinalAnswer) and self.observation is not None:
            raise OmnitirError("final-answer steps carry no observation")

    def to_dict(self) -> dict:
        if isinstance(self.action, ToolCall):
            action: dict = {"tool_call": self.action.to_dict()}
        elif isinstance(self.action, FinalAnswer):
            action = {"final_answer": self.action.text}
        else:
            action = {"invalid": {"raw": self.action.raw, "reason": self.action.reason}}
        return {
            "index": self.index,
            "thought": self.thought,
            "action": action,
            "observation": self.observation.to_dict() if self.observation else None,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Step":
        raw_action = data["action"]
        action: Action
        if "tool_call" in raw_action:
            action = ToolCall.from_dict(raw_action["tool_call"])
        elif "final_answer" in raw_action:
            action = FinalAnswer(raw_action["final_answer"])
        else:
            action = InvalidAction(raw_action["invalid"]["raw"], raw_action["invalid"]["reason"])
        obs = data.get("observation")
        return cls(
            index=data["index"],
            thought=data["thought"],
            action=action,
            observation=ToolResult.from_dict(obs) if obs else None,
        )


@dataclass
class Trajectory:
    task: Task
    steps: list[Step] = field(default_factory=list)
    final_answer: str | None = None
    termination: str = TERMINATION_STEP_LIMIT
    backend_id: str = ""
    config: dict = field(default_factory=dict)

    def tool_call_count(self) -> int:
        return sum(1 for s in self.steps if isinstance(s.action, ToolCall))

    def to_dict(self) -> dict:
        return {
            "task": self.task.to_dict(),
            "steps": [s.to_dict() for s in self.steps],
            "final_answer": self.final_answer,
            "termination": self.termination,
            "backend_id": self.backend_id,
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False)

    @classmethod
    def from_dict(cls, data: dict) -> "Trajectory":
        return cls(
            task=Task.from_dict(data["task"]),
            steps=[Step.from_dict(s) for s in data["steps"]],
            final_answer=data.get("final_answer"),
            termination=data["termination"],
            backend_id=data.get("backend_id", ""),
            config=data.get("config", {}),
        )


@dataclass(frozen=True)
class AgentConfig:
    max_steps: int = 30
    system_prompt: str = "base"
    perception_mode: str = "native"
    tools: tuple[str, ...] | None = None
    decoding: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.max_steps <= 0:
            raise ConfigError("max_steps must be positive")
        if self.system_prompt not in SYSTEM_PROMPT_TEMPLATES:
            raise ConfigError(f"unknown system prompt: {self.system_prompt}")
        if self.perception_mode not in PERCEPTION_MODES:
            raise ConfigError(f"unknown perception mode: {self.perception_mode}")

    def to_dict(self) -> dict:
        return {
            "max_steps": self.max_steps,
            "system_prompt": self.system_prompt,
            "perception_mode": self.perception_mode,
            "tools": list(self.tools) if self.tools is not None else None,
            "decoding": dict(self.decoding),
        }


# --- parsing -------------------------------------------------------------------


def parse_tool_calls(text: str) -> tuple[list[ToolCall | InvalidAction], str]:
    """Extract delimiter-wrapped tool calls in order; the rest is the thought.

    Total: malformed JSON inside delimiters becomes an :class:`InvalidAction`
    marker rather than an exception.
    """
    actions: list[ToolCall | InvalidAction] = []
    thought_parts: list[str] = []
    cursor = 0
    for i, match in enumerate(_TOOL_CALL_RE.finditer(text)):
        thought_parts.append(text[cursor : match.start()])
        cursor = match.end()
        raw = match.group(1).strip()
        try:
            payload = json.loads(raw)
        except json.JSONDecodeError as exc:
            actions.append(InvalidAction(raw, f"tool call could not be parsed: {exc.msg}"))
            continue
        name = payload.get("name") if isinstance(payload, dict) else None
        arguments = payload.get("arguments", {}) if isinstance(payload, dict) else None
        if not isinstance(name, str) or not isinstance(arguments, dict):
            actions.append(InvalidAction(raw, "tool call could not be parsed: bad shape"))
            continue
        actions.append(ToolCall(call_id=f"call_{i}", name=name, arguments=arguments))
    thought_parts.append(text[cursor:])
    return actions, "".join(thought_parts).strip()


def extract_answer(text: str) -> str | None:
    """Inner text of the last ``<answer>...</answer>`` span, trimmed."""
    matches = _ANSWER_RE.findall(text)
    if not matches:
        return None
    return matches[-1].strip()


# --- rendering -------------------------------------------------------------------


def render_call(call: ToolCall) -> str:
    payload = {"name": call.name, "arguments": call.arguments}
    return f"{TOOL_CALL_OPEN}\n{json.dumps(payload, ensure_ascii=False)}\n{TOOL_CALL_CLOSE}"


def render_step_model_text(step: Step) -> str:
    """The model-authored text of a step, as conditioned on in later turns."""
    if isinstance(step.action, FinalAnswer):
        return step.thought
    if isinstance(step.action, ToolCall):
        block = render_call(step.action)
    else:
        block = f"{TOOL_CALL_OPEN}\n{step.action.raw}\n{TOOL_CALL_CLOSE}" if step.action.raw else ""
    if step.thought and block:
        return f"{step.thought}\n{block}"
    return step.thought or block


def render_observation_text(observation: ToolResult) -> str:
    return f"{TOOL_RESPONSE_OPEN}\n{observation.text}\n{TOOL_RESPONSE_CLOSE}"


# --- perception shaping ---------------------------------------------------------


def shape_perception(config: AgentConfig, task: Task) -> tuple[tuple[MediaRef, ...], tuple[str, ...]]:
    """Which media attach to the prompt and which perception tools register."""
    visual = tuple(m for m in task.media if m.kind in ("video", "image"))
    audio = tuple(m for m in task.media if m.kind == "audio")
    mode = config.perception_mode
    if mode == "native":
        return task.media, ()
    if mode == "audio_as_tool":
        if not visual:
            raise ConfigError("no visual stream to attach")
        return visual, ("audio_qa",)
    if mode == "visual_as_tool":
        if not audio:
            raise ConfigError("no audio stream to attach")
        return audio, ("vision_qa",)
    return (), ("audio_qa", "vision_qa")


def effective_registry(config: AgentConfig, task: Task, registry: ToolRegistry) -> ToolRegistry:
    """Apply the tool selector, then force perception tools per the mode."""
    _, extra = shape_perception(config, task)
    base = list(config.tools) if config.tools is not None else registry.names()
    names = [n for n in base if n not in PERCEPTION_QA_TOOLS]
    for name in extra:
        if registry.get(name) is None:
            raise ConfigError(f"perception mode needs tool {name} but it is not registered")
        names.append(name)
    return registry.subset(names)


# --- prompt assembly --------------------------------------------------------------


def assemble_prompt(
    config: AgentConfig,
    task: Task,
    history: Sequence[Step],
    tool_schemas: tuple[dict, ...] = (),
) -> ModelRequest:
    attached, _ = shape_perception(config, task)
    system = load_template(SYSTEM_PROMPT_TEMPLATES[config.system_prompt])
    first_parts: list = [TextPart(task.instruction)]
    first_parts.extend(MediaPart(m) for m in attached)
    messages: list[Message] = [Message("user", tuple(first_parts))]
    for step in history:
        messages.append(Message("assistant", (TextPart(render_step_model_text(step)),)))
        if step.observation is not None:
            parts: list = [TextPart(render_observation_text(step.observation))]
            parts.extend(MediaPart(m) for m in step.observation.media)
            messages.append(Message("tool", tuple(parts)))
    return ModelRequest(
        system=system,
        messages=tuple(messages),
        tools=tool_schemas,
        options=dict(config.decoding),
    )


# --- the episode loop --------------------------------------------------------------


def run_episode(
    task: Task,
    backend: ModelBackend,
    registry: ToolRegistry,
    config: AgentConfig | None = None,
    cassette: Cassette | None = None,
    persist_path: str | Path | None = None,
) -> Trajectory:
    config = config or AgentConfig()
    active = effective_registry(config, task, registry)
    schemas = tuple(active.schemas())
    trajectory = Trajectory(
        task=task,
        backend_id=getattr(backend, "backend_id", ""),
        config=config.to_dict(),
    )

    def persist_step(step: Step) -> None:
        trajectory.steps.append(step)
        if persist_path is not None:
            append_jsonl(persist_path, {"type": "step", "task_id": task.task_id, **step.to_dict()})

    while len(trajectory.steps) < config.max_steps:
        request = assemble_prompt(config, task, trajectory.steps, schemas)
        try:
            text = backend.complete(request)
        except BackendError:
            trajectory.termination = TERMINATION_BACKEND_ERROR
            break

        actions, thought = parse_tool_calls(text)
        answer = extract_answer(text)
        if answer is not None:
            persist_step(Step(len(trajectory.steps), text, FinalAnswer(answer)))
            trajectory.final_answer = answer
            trajectory.termination = TERMINATION_ANSWERED
            break

        if not actions:
            step = Step(
                len(trajectory.steps),
                text,
                InvalidAction("", "no action"),
                observation=ToolResult("", "tool_error", "model turn contained no tool call or final answer"),
            )
            persist_step(step)
            continue

        turn_thought = thought
        for action in actions:
            if len(trajectory.steps) >= config.max_steps:
                break
            index = len(trajectory.steps)
            if isinstance(action, ToolCall):
                call = replace(action, call_id=f"step{index}_{action.call_id}")
                observation = dispatch(call, active, cassette)
                persist_step(Step(index, turn_thought, call, observation))
            else:
                observation = ToolResult("", "tool_error", action.reason)
                persist_step(Step(index, turn_thought, action, observation))
            turn_thought = ""  # the turn's thought belongs to its first step

    if trajectory.termination not in (TERMINATION_ANSWERED, TERMINATION_BACKEND_ERROR):
        trajectory.termination = TERMINATION_STEP_LIMIT
    if persist_path is not None:
        append_jsonl(
            persist_path,
            {"type": "trajectory", "task_id": task.task_id, **trajectory.to_dict()},
        )
    return trajectory


# --- conditioning fidelity ------------------------------------------------------------


def verify_conditioning(
    trajectory: Trajectory,
    requests: Sequence[ModelRequest] | None = None,
    config: AgentConfig | None = None,
) -> None:
    """Check the factorization: the request at step t contains every prior
    thought, action, and observation, in order. Raises on violation.

    With *requests* (the sequence actually sent to the backend), each request
    must extend coverage of the recorded steps monotonically and the final
    turn's steps must appear in no request. Without it, only reconstruction
    fidelity is checked: re-assembled prompts must contain the conditioning
    set in order.
    """
    config = config or AgentConfig(**{
        k: (tuple(v) if k == "tools" and v is not None else v)
        for k, v in trajectory.config.items()
    })
    for t in range(len(trajectory.steps) + 1):
        request = assemble_prompt(config, trajectory.task, trajectory.steps[:t])
        flat = "\n".join(m.text() for m in request.messages)
        if _max_step_prefix(trajectory.steps[:t], flat) < t:
            raise OmnitirError(f"conditioning violation: reassembly at t={t} loses a step")

    if requests is None:
        return
    coverage = [
        _max_step_prefix(trajectory.steps, "\n".join(m.text() for m in r.messages))
        for r in requests
    ]
    if not coverage:
        raise OmnitirError("conditioning violation: episode issued no requests")
    if coverage[0] != 0:
        raise OmnitirError("conditioning violation: first request already carries steps")
    for i in range(1, len(coverage)):
        final_failed_turn = (
            i == len(coverage) - 1 and trajectory.termination == TERMINATION_BACKEND_ERROR
        )
        if coverage[i] <= coverage[i - 1] and not final_failed_turn:
            raise OmnitirError(
                f"conditioning violation: request {i} covers {coverage[i]} steps, "
                f"not more than the {coverage[i - 1]} already seen"
            )
    if coverage[-1] >= len(trajectory.steps) and trajectory.steps:
        raise OmnitirError("conditioning violation: final request already contains the last step")


def _max_step_prefix(steps: Sequence[Step], flat: str) -> int:
    """Longest step prefix whose rendered pieces appear in *flat*, in order."""
    cursor = 0
    count = 0
    for step in steps:
        for piece in _conditioning_pieces(step):
            found = flat.find(piece, cursor)
            if found < 0:
                return count
            cursor = found + len(piece)
        count += 1
    return count


def _conditioning_pieces(step: Step) -> list[str]:
    # A final-answer step's thought is the whole model turn, answer included.
    pieces = []
    if step.thought:
        pieces.append(step.thought)
    if isinstance(step.action, ToolCall):
        pieces.append(render_call(step.action))
    if step.observation is not None:
        pieces.append(render_observation_text(step.observation))
    return pieces
