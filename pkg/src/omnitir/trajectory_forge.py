"""Training-data synthesis: guided tree exploration, masked-SFT export,
preference-pair construction, and the reference loss formulas.

This module produces the records a trainer consumes; it never updates model
parameters. Masks are defined at segment granularity: a trainer projects the
role map onto tokens (supervise exactly the agent-role characters).
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

from .agent_runtime import (
    AgentConfig,
    FinalAnswer,
    InvalidAction,
    Step,
    Task,
    Trajectory,
    extract_answer,
    parse_tool_calls,
    render_observation_text,
    render_step_model_text,
    shape_perception,
    assemble_prompt,
)
from .backends import ModelBackend, ModelRequest, TextPart, user_message
from .cassette import Cassette
from .errors import ForgeError, ReportValidationError
from .signal_miner import parse_model_report
from .templates import load_template, render_template
from .toolbelt import ToolCall, ToolRegistry, ToolResult, dispatch
from .util import hash_json, sha256_hex

ERROR_TAXONOMY = (
    "Visual Perception Error",
    "Audio Perception Error",
    "Ineffective Tool Call",
    "Reasoning Error",
    "Instruction Following Error",
    "No Answer",
)

ROLE_PROMPT = "prompt"
ROLE_AGENT = "agent"
ROLE_OBSERVATION = "observation"
ROLE_MASK = {ROLE_PROMPT: 0, ROLE_AGENT: 1, ROLE_OBSERVATION: 0}


# --- episode rendering and segments -------------------------------------------


@dataclass(frozen=True)
class Segment:
    role: str
    text: str

    def to_dict(self) -> dict:
        return {"role": self.role, "text": self.text}


def render_prompt_text(trajectory: Trajectory) -> str:
    config = AgentConfig(**{
        k: (tuple(v) if k == "tools" and v is not None else v)
        for k, v in trajectory.config.items()
    }) if trajectory.config else AgentConfig()
    system = load_template(
        {"base": "system_base", "active_perception": "system_active_perception"}[
            config.system_prompt
        ]
    )
    attached, _ = shape_perception(config, trajectory.task)
    stubs = "".join(f"\n[attached {m.kind} {m.id[:12]}]" for m in attached)
    return f"{system}\n{trajectory.task.instruction}{stubs}\n"


def trajectory_segments(trajectory: Trajectory) -> list[Segment]:
    """Role-tagged segments whose concatenation is the rendered episode text."""
    if not trajectory.steps:
        raise ForgeError("empty trajectory")
    segments = [Segment(ROLE_PROMPT, render_prompt_text(trajectory))]
    for step in trajectory.steps:
        agent_text = render_step_model_text(step)
        if not agent_text.strip():
            raise ForgeError(f"step {step.index} renders no agent text")
        segments.append(Segment(ROLE_AGENT, agent_text + "\n"))
        if step.observation is not None:
            segments.append(
                Segment(ROLE_OBSERVATION, render_observation_text(step.observation) + "\n")
            )
    return segments


def render_episode_text(trajectory: Trajectory) -> str:
    return "".join(s.text for s in trajectory_segments(trajectory))


@dataclass(frozen=True)
class SftRecord:
    record_id: str
    source_task_id: str
    segments: tuple[Segment, ...]
    mask: dict[str, int] = field(default_factory=lambda: dict(ROLE_MASK))

    def rendered(self) -> str:
        return "".join(s.text for s in self.segments)

    def supervised_chars(self) -> int:
        return sum(len(s.text) for s in self.segments if self.mask[s.role])

    def to_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "segments": [s.to_dict() for s in self.segments],
            "meta": {"source_task_id": self.source_task_id, "mask": dict(self.mask)},
        }


def to_sft_record(trajectory: Trajectory) -> SftRecord:
    segments = tuple(trajectory_segments(trajectory))
    record_id = "sft_" + hash_json([s.to_dict() for s in segments])[:16]
    return SftRecord(record_id, trajectory.task.task_id, segments)


# --- reference losses -----------------------------------------------------------


def _check_finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ForgeError(f"non-finite input: {name}={value}")
    return value


def masked_nll(token_logprobs: Sequence[float], mask: Sequence[int]) -> float:
    """Average negative log-likelihood over supervised positions only."""
    if len(token_logprobs) != len(mask):
        raise ForgeError(
            f"length mismatch: {len(token_logprobs)} logprobs vs {len(mask)} mask bits"
        )
    total = 0.0
    count = 0
    for i, (logprob, bit) in enumerate(zip(token_logprobs, mask)):
        if bit not in (0, 1):
            raise ForgeError(f"mask bits must be 0 or 1, got {bit!r} at {i}")
        if bit:
            total += _check_finite(f"logprob[{i}]", logprob)
            count += 1
    if count == 0:
        raise ForgeError("empty supervision: mask selects no tokens")
    return -total / count


def masked_nll_grad(token_logprobs: Sequence[float], mask: Sequence[int]) -> list[float]:
    """d(masked_nll)/d(logprob_i) = -m_i / sum(m)."""
    masked_nll(token_logprobs, mask)  # validates
    denom = sum(mask)
    return [-bit / denom for bit in mask]


def _softplus(x: float) -> float:
    if x > 0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def dpo_loss(
    logp_theta_win: float,
    logp_ref_win: float,
    logp_theta_lose: float,
    logp_ref_lose: float,
    beta: float,
) -> float:
    """-log sigmoid(beta * ((win margin) - (lose margin))).

    The log-probabilities are masked sums over agent tokens only; beta = 0 is
    permitted for the analytic test path (loss pins to ln 2).
    """
    values = [
        _check_finite("logp_theta_win", logp_theta_win),
        _check_finite("logp_ref_win", logp_ref_win),
        _check_finite("logp_theta_lose", logp_theta_lose),
        _check_finite("logp_ref_lose", logp_ref_lose),
    ]
    beta = _check_finite("beta", beta)
    if beta < 0:
        raise ForgeError(f"beta must be positive, got {beta}")
    z = beta * ((values[0] - values[1]) - (values[2] - values[3]))
    return _softplus(-z)


def dpo_loss_grad(
    logp_theta_win: float,
    logp_ref_win: float,
    logp_theta_lose: float,
    logp_ref_lose: float,
    beta: float,
) -> tuple[float, float, float, float]:
    """Gradient wrt the four log-probability arguments, in call order."""
    z = beta * (
        (float(logp_theta_win) - float(logp_ref_win))
        - (float(logp_theta_lose) - float(logp_ref_lose))
    )
    scale = beta * _sigmoid(-z)
    return (-scale, scale, scale, -scale)


# --- first-error location and preference pairs ------------------------------------


def render_trace(trajectory: Trajectory) -> str:
    lines = []
    for step in trajectory.steps:
        lines.append(f"Step {step.index}:")
        lines.append(render_step_model_text(step))
        if step.observation is not None:
            lines.append(render_observation_text(step.observation))
    if trajectory.final_answer is not None:
        lines.append(f"Final Answer: {trajectory.final_answer}")
    return "\n".join(lines)


@dataclass(frozen=True)
class CorrectedStep:
    thought: str
    action: ToolCall | FinalAnswer

    def to_step(self, index: int) -> Step:
        return Step(index=index, thought=self.thought, action=self.action)


@dataclass(frozen=True)
class ErrorLocation:
    error_step_index: int
    error_category: str
    corrected_step: CorrectedStep
    rationale: str = ""


def locate_first_error(
    failed_trajectory: Trajectory,
    task_annotation: dict,
    locator_backend: ModelBackend,
    max_attempts: int = 3,
) -> ErrorLocation:
    if not failed_trajectory.steps:
        raise ForgeError("empty trajectory")
    for key in ("solution", "answer"):
        if not task_annotation.get(key):
            raise ForgeError(f"task annotation missing {key}")
    prompt = render_template(
        "error_locator",
        question=failed_trajectory.task.instruction,
        annotated_solution=task_annotation["solution"],
        answer=task_annotation["answer"],
        trace_str=render_trace(failed_trajectory),
    )
    failures: list[str] = []
    for _ in range(max_attempts):
        text = locator_backend.complete(
            ModelRequest(system=None, messages=(user_message(TextPart(prompt)),))
        )
        try:
            payload = parse_model_report(text)
            location = _parse_location(payload)
            break
        except ReportValidationError as exc:
            failures.append(str(exc))
    else:
        raise ForgeError(
            f"locator output unparseable after {max_attempts} attempts: {failures[-1]}"
        )

    if location.error_category not in ERROR_TAXONOMY:
        raise ForgeError(f"unknown category: {location.error_category}")
    if not 0 <= location.error_step_index < len(failed_trajectory.steps):
        raise ForgeError(
            f"error step index out of bounds: {location.error_step_index} "
            f"of {len(failed_trajectory.steps)} steps"
        )
    return location


def _parse_location(payload) -> ErrorLocation:
    if not isinstance(payload, dict):
        raise ReportValidationError("locator output must be an object")
    index = payload.get("error_step_index")
    if not isinstance(index, int) or isinstance(index, bool):
        raise ReportValidationError("error_step_index must be an integer")
    category = payload.get("error_category")
    if not isinstance(category, str):
        raise ReportValidationError("error_category must be a string")
    corrected = payload.get("corrected_step")
    if not isinstance(corrected, dict):
        raise ReportValidationError("corrected_step must be an object")
    thought = corrected.get("thought")
    if not isinstance(thought, str):
        raise ReportValidationError("corrected_step.thought must be a string")
    action_raw = corrected.get("action")
    if not isinstance(action_raw, dict):
        raise ReportValidationError("corrected_step.action must be an object")
    if "final_answer" in action_raw:
        action: ToolCall | FinalAnswer = FinalAnswer(str(action_raw["final_answer"]))
    elif "tool_call" in action_raw:
        call = action_raw["tool_call"]
        if not isinstance(call, dict) or not isinstance(call.get("name"), str):
            raise ReportValidationError("corrected tool_call needs a name")
        arguments = call.get("arguments", {})
        if not isinstance(arguments, dict):
            raise ReportValidationError("corrected tool_call arguments must be an object")
        action = ToolCall(call_id="corrected", name=call["name"], arguments=arguments)
    else:
        raise ReportValidationError("corrected action needs final_answer or tool_call")
    return ErrorLocation(
        error_step_index=index,
        error_category=category,
        corrected_step=CorrectedStep(thought, action),
        rationale=str(payload.get("rationale", "")),
    )


@dataclass(frozen=True)
class PreferencePair:
    pair_id: str
    shared_context: tuple[Segment, ...]
    win_prefix: tuple[Segment, ...]
    lose_prefix: tuple[Segment, ...]
    error_step_index: int
    error_category: str
    rationale: str = ""
    mask: dict[str, int] = field(default_factory=lambda: dict(ROLE_MASK))

    def __post_init__(self) -> None:
        shared = len(self.shared_context)
        if (
            self.win_prefix[:shared] != self.shared_context
            or self.lose_prefix[:shared] != self.shared_context
        ):
            raise ForgeError("prefixes must start with the shared context")
        if len(self.win_prefix) <= shared or len(self.lose_prefix) <= shared:
            raise ForgeError("degenerate pair: prefixes do not extend the context")
        if self.win_prefix[shared] == self.lose_prefix[shared]:
            raise ForgeError("degenerate pair: prefixes do not diverge after the context")

    def to_dict(self) -> dict:
        return {
            "pair_id": self.pair_id,
            "shared_context": [s.to_dict() for s in self.shared_context],
            "win": [s.to_dict() for s in self.win_prefix],
            "lose": [s.to_dict() for s in self.lose_prefix],
            "error_step_index": self.error_step_index,
            "error_category": self.error_category,
            "rationale": self.rationale,
            "mask": dict(self.mask),
        }


def build_preference_pair(
    failed_trajectory: Trajectory, location: ErrorLocation
) -> PreferencePair:
    steps = failed_trajectory.steps
    idx = location.error_step_index
    if not 0 <= idx < len(steps):
        raise ForgeError(f"error step index out of bounds: {idx}")
    shared: list[Segment] = [Segment(ROLE_PROMPT, render_prompt_text(failed_trajectory))]
    for step in steps[:idx]:
        shared.append(Segment(ROLE_AGENT, render_step_model_text(step) + "\n"))
        if step.observation is not None:
            shared.append(
                Segment(ROLE_OBSERVATION, render_observation_text(step.observation) + "\n")
            )
    original_text = render_step_model_text(steps[idx]) + "\n"
    corrected_text = render_step_model_text(location.corrected_step.to_step(idx)) + "\n"
    if corrected_text == original_text:
        raise ForgeError("degenerate pair: corrected step is identical to the original")
    shared_t = tuple(shared)
    pair_id = "dpo_" + hash_json(
        {
            "task": failed_trajectory.task.task_id,
            "index": idx,
            "win": corrected_text,
            "lose": original_text,
        }
    )[:16]
    return PreferencePair(
        pair_id=pair_id,
        shared_context=shared_t,
        win_prefix=shared_t + (Segment(ROLE_AGENT, corrected_text),),
        lose_prefix=shared_t + (Segment(ROLE_AGENT, original_text),),
        error_step_index=idx,
        error_category=location.error_category,
        rationale=location.rationale,
    )


# --- hindsight-guided tree exploration ----------------------------------------------


class BranchVerifier(Protocol):
    def assess(self, task: Task, steps: list[Step]) -> bool: ...


class AnswerJudge(Protocol):
    def accept(self, task: Task, answer: str) -> bool: ...


class ExactAnswerJudge:
    def accept(self, task: Task, answer: str) -> bool:
        return task.label is not None and answer.strip() == task.label.strip()


class ModelBranchVerifier:
    """Prunes branches by asking a backend, conditioned on the ground truth."""

    def __init__(self, backend: ModelBackend, max_attempts: int = 3):
        self.backend = backend
        self.max_attempts = max_attempts

    def assess(self, task: Task, steps: list[Step]) -> bool:
        stub = Trajectory(task=task, steps=list(steps))
        prompt = render_template(
            "branch_verifier",
            question=task.instruction,
            answer=task.label or "",
            trace_str=render_trace(stub),
        )
        for _ in range(self.max_attempts):
            text = self.backend.complete(
                ModelRequest(system=None, messages=(user_message(TextPart(prompt)),))
            )
            verdict = text.strip().strip(".!\"'").lower()
            if verdict in ("keep", "prune"):
                return verdict == "keep"
        raise ForgeError(f"verifier returned no keep/prune verdict after {self.max_attempts} attempts")


@dataclass
class ExplorationNode:
    node_id: int
    parent: int | None
    depth: int
    steps: list[Step]
    children: list[int] = field(default_factory=list)
    verdict: str = "open"  # open | pruned | success


@dataclass
class ExplorationResult:
    trajectories: list[Trajectory]
    expanded_nodes: int
    nodes: list[ExplorationNode]


def geometric_node_bound(k: int, max_depth: int) -> int:
    """Node count of a full k-ary tree of the given depth, root included."""
    if k == 1:
        return max_depth + 1
    return (k ** (max_depth + 1) - 1) // (k - 1)


def explore(
    task: Task,
    policy_backend: ModelBackend,
    verifier: BranchVerifier,
    k: int = 3,
    max_depth: int = 12,
    judge: AnswerJudge | None = None,
    registry: ToolRegistry | None = None,
    config: AgentConfig | None = None,
    cassette: Cassette | None = None,
) -> ExplorationResult:
    """Breadth-limited tree search returning the judge-accepted trajectories.

    At each open node, sample k candidate continuations; the verifier (which
    knows the ground truth) prunes wrong or redundant branches. Exhausting the
    budget with zero successes returns an empty list, not an error.
    """
    if k < 1:
        raise ForgeError("k must be >= 1")
    if task.label is None:
        raise ForgeError("exploration needs a task with a ground-truth answer")
    judge = judge or ExactAnswerJudge()
    registry = registry or ToolRegistry()
    config = config or AgentConfig(max_steps=max(max_depth, 1))
    schemas = tuple(registry.schemas())

    root = ExplorationNode(node_id=0, parent=None, depth=0, steps=[])
    nodes = [root]
    successes: list[Trajectory] = []
    queue: deque[ExplorationNode] = deque([root])
    while queue:
        node = queue.popleft()
        if node.depth >= max_depth:
            node.verdict = "pruned"
            continue
        sibling_actions: set[str] = set()
        for _ in range(k):
            request = assemble_prompt(config, task, node.steps, schemas)
            text = policy_backend.complete(request)
            turn_steps, answer = _turn_steps(text, len(node.steps), registry, cassette)
            if not turn_steps:
                continue
            action_signature = "\n".join(render_step_model_text(s) for s in turn_steps)
            if action_signature in sibling_actions:
                continue  # exact-duplicate sibling: redundant branch
            sibling_actions.add(action_signature)
            child = ExplorationNode(
                node_id=len(nodes),
                parent=node.node_id,
                depth=node.depth + 1,
                steps=node.steps + turn_steps,
            )
            nodes.append(child)
            node.children.append(child.node_id)
            if answer is not None:
                if judge.accept(task, answer):
                    child.verdict = "success"
                    successes.append(
                        Trajectory(
                            task=task,
                            steps=list(child.steps),
                            final_answer=answer,
                            termination="answered",
                            backend_id=getattr(policy_backend, "backend_id", ""),
                            config=config.to_dict(),
                        )
                    )
                else:
                    child.verdict = "pruned"
            elif verifier.assess(task, child.steps):
                queue.append(child)
            else:
                child.verdict = "pruned"
    return ExplorationResult(
        trajectories=_dedup_trajectories(successes),
        expanded_nodes=len(nodes),
        nodes=nodes,
    )


def _turn_steps(
    text: str, base_index: int, registry: ToolRegistry, cassette: Cassette | None
) -> tuple[list[Step], str | None]:
    actions, thought = parse_tool_calls(text)
    answer = extract_answer(text)
    if answer is not None:
        return [Step(base_index, text, FinalAnswer(answer))], answer
    if not actions:
        return (
            [
                Step(
                    base_index,
                    text,
                    InvalidAction("", "no action"),
                    observation=ToolResult(
                        "", "tool_error", "model turn contained no tool call or final answer"
                    ),
                )
            ],
            None,
        )
    steps: list[Step] = []
    turn_thought = thought
    for offset, action in enumerate(actions):
        index = base_index + offset
        if isinstance(action, ToolCall):
            observation = dispatch(action, registry, cassette)
            steps.append(Step(index, turn_thought, action, observation))
        else:
            steps.append(
                Step(
                    index,
                    turn_thought,
                    action,
                    observation=ToolResult("", "tool_error", action.reason),
                )
            )
        turn_thought = ""
    return steps, None


def _trajectory_signature(trajectory: Trajectory) -> str:
    calls = sorted(
        hash_json({"name": s.action.name, "arguments": s.action.arguments})
        for s in trajectory.steps
        if isinstance(s.action, ToolCall)
    )
    return hash_json({"answer": trajectory.final_answer, "calls": calls})


def _dedup_trajectories(trajectories: list[Trajectory]) -> list[Trajectory]:
    seen: set[str] = set()
    out = []
    for trajectory in trajectories:
        signature = _trajectory_signature(trajectory)
        if signature not in seen:
            seen.add(signature)
            out.append(trajectory)
    return out


def select_for_training(
    trajectories: Sequence[Trajectory], per_task: int = 1
) -> list[Trajectory]:
    """Keep at most *per_task* successes per task id, in arrival order."""
    kept: dict[str, int] = {}
    out = []
    for trajectory in trajectories:
        count = kept.get(trajectory.task.task_id, 0)
        if count < per_task:
            kept[trajectory.task.task_id] = count + 1
            out.append(trajectory)
    return out


# --- export --------------------------------------------------------------------------


def export_training_set(
    items: Sequence[SftRecord] | Sequence[PreferencePair], path: str | Path
) -> dict:
    """Write a JSONL training file plus a manifest; re-export is byte-identical."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ids = [
        item.record_id if isinstance(item, SftRecord) else item.pair_id for item in items
    ]
    dupes = {i for i in ids if ids.count(i) > 1}
    if dupes:
        raise ForgeError(f"duplicate record ids: {sorted(dupes)}")
    kinds = {type(item).__name__ for item in items}
    if len(kinds) > 1:
        raise ForgeError(f"mixed record kinds in one export: {sorted(kinds)}")
    kind = {"SftRecord": "sft", "PreferencePair": "dpo"}.get(next(iter(kinds), "SftRecord"), "sft")
    body = "".join(json.dumps(item.to_dict(), ensure_ascii=False) + "\n" for item in items)
    path.write_text(body, encoding="utf-8")
    manifest = {
        "kind": kind,
        "count": len(ids),
        "sha256": sha256_hex(body.encode("utf-8")),
        "file": path.name,
    }
    manifest_path = path.with_name(path.stem + ".manifest.json")
    manifest_path.write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return manifest
