"""Two-stage answer scoring, Pass@1 aggregation, error taxonomy, tool stats.

Stage one is exact match on the extracted answer span (byte equality after
trimming, case-sensitive); anything looser is the judge's job: the last 20
words of the output go to an equivalence judge constrained to a one-word
Correct/Incorrect verdict.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Sequence

from .agent_runtime import Trajectory, extract_answer
from .backends import ModelBackend, ModelRequest, TextPart, user_message
from .errors import EvalError, ReportValidationError
from .signal_miner import parse_model_report
from .templates import render_template
from .toolbelt import ToolCall
from .trajectory_forge import ERROR_TAXONOMY, render_trace

ROUTE_EXACT = "exact"
ROUTE_JUDGE = "judge"
ROUTE_JUDGE_FALLBACK = "judge_fallback_last20"

DENOMINATOR_POLICIES = ("failed_only", "all_tasks")


@dataclass(frozen=True)
class EvalOutcome:
    task_id: str
    predicted: str
    route: str
    correct: bool
    judge_raw: str | None = None
    trajectory_ref: str | None = None

    def __post_init__(self) -> None:
        if self.route == ROUTE_EXACT and self.judge_raw is not None:
            raise EvalError("exact-match outcomes must not carry judge output")

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "predicted": self.predicted,
            "route": self.route,
            "correct": self.correct,
            "judge_raw": self.judge_raw,
            "trajectory_ref": self.trajectory_ref,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EvalOutcome":
        return cls(
            task_id=data["task_id"],
            predicted=data["predicted"],
            route=data["route"],
            correct=data["correct"],
            judge_raw=data.get("judge_raw"),
            trajectory_ref=data.get("trajectory_ref"),
        )


def last_n_words(text: str, n: int = 20) -> str:
    """Final *n* words, splitting on single spaces and dropping empty tokens."""
    tokens = [t for t in text.split(" ") if t]
    return " ".join(tokens[-n:]) if tokens else ""


def _parse_verdict(text: str) -> bool | None:
    word = text.strip().strip(".,!?:;\"'`").lower()
    if word == "correct":
        return True
    if word == "incorrect":
        return False
    return None


def score_answer(
    question: str,
    output_text: str,
    label: str,
    judge_backend: ModelBackend,
    task_id: str = "",
    trajectory_ref: str | None = None,
    max_attempts: int = 3,
) -> EvalOutcome:
    if not label.strip():
        raise EvalError("label must be nonempty")
    span = extract_answer(output_text)
    if span is not None and span == label.strip():
        return EvalOutcome(
            task_id=task_id,
            predicted=span,
            route=ROUTE_EXACT,
            correct=True,
            trajectory_ref=trajectory_ref,
        )
    predicted = last_n_words(output_text, 20)
    route = ROUTE_JUDGE if span is not None else ROUTE_JUDGE_FALLBACK
    prompt = render_template(
        "judge", question=question, predicted=predicted, standard=label
    )
    raw = ""
    for _ in range(max_attempts):
        raw = judge_backend.complete(
            ModelRequest(system=None, messages=(user_message(TextPart(prompt)),))
        )
        verdict = _parse_verdict(raw)
        if verdict is not None:
            return EvalOutcome(
                task_id=task_id,
                predicted=predicted,
                route=route,
                correct=verdict,
                judge_raw=raw,
                trajectory_ref=trajectory_ref,
            )
    raise EvalError(
        f"judge returned neither Correct nor Incorrect after {max_attempts} attempts: {raw[:80]!r}"
    )


# --- aggregation -------------------------------------------------------------------


@dataclass(frozen=True)
class ReportCell:
    n: int
    correct: int

    @property
    def fraction(self) -> float | None:
        """Pass rate, or None for empty cells (never a fake 0.0)."""
        return self.correct / self.n if self.n else None

    def to_dict(self) -> dict:
        return {"n": self.n, "correct": self.correct, "fraction": self.fraction}


@dataclass
class EvalReport:
    overall: ReportCell
    per_category: dict[str, ReportCell] = field(default_factory=dict)
    per_difficulty: dict[str, ReportCell] = field(default_factory=dict)
    tool_calls: dict | None = None

    def to_dict(self) -> dict:
        return {
            "overall": self.overall.to_dict(),
            "per_category": {k: v.to_dict() for k, v in sorted(self.per_category.items())},
            "per_difficulty": {k: v.to_dict() for k, v in sorted(self.per_difficulty.items())},
            "tool_calls": self.tool_calls,
        }

    def to_csv(self, groups: tuple[str, ...] = ("category", "difficulty")) -> str:
        """Plot-ready rows: (category, difficulty, value, n)."""
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["category", "difficulty", "value", "n"])
        overall = self.overall
        writer.writerow(["all", "all", _csv_value(overall.fraction), overall.n])
        if "category" in groups:
            for name, cell in sorted(self.per_category.items()):
                writer.writerow([name, "all", _csv_value(cell.fraction), cell.n])
        if "difficulty" in groups:
            for name, cell in sorted(self.per_difficulty.items()):
                writer.writerow(["all", name, _csv_value(cell.fraction), cell.n])
        return buffer.getvalue()


def _csv_value(fraction: float | None) -> str:
    return "" if fraction is None else f"{fraction:.6f}"


def pass_at_1(
    outcomes: Sequence[EvalOutcome],
    task_meta: dict[str, dict] | None = None,
    trajectories: Sequence[Trajectory] | None = None,
) -> EvalReport:
    """Per-cell pass fractions with explicit n; cells partition the task set.

    *task_meta* maps task_id to {"category": ..., "difficulty": ...}; tasks
    missing from the map land in an "unknown" cell rather than vanishing.
    """
    task_meta = task_meta or {}
    seen: set[str] = set()
    for outcome in outcomes:
        if outcome.task_id in seen:
            raise EvalError(f"duplicate outcome for task {outcome.task_id}")
        seen.add(outcome.task_id)

    def cell(group: Sequence[EvalOutcome]) -> ReportCell:
        return ReportCell(n=len(group), correct=sum(1 for o in group if o.correct))

    by_category: dict[str, list[EvalOutcome]] = {}
    by_difficulty: dict[str, list[EvalOutcome]] = {}
    for outcome in outcomes:
        meta = task_meta.get(outcome.task_id, {})
        by_category.setdefault(meta.get("category", "unknown"), []).append(outcome)
        by_difficulty.setdefault(meta.get("difficulty", "unknown"), []).append(outcome)
    # Declared-but-empty cells stay visible with n=0.
    for meta in task_meta.values():
        by_category.setdefault(meta.get("category", "unknown"), [])
        by_difficulty.setdefault(meta.get("difficulty", "unknown"), [])

    report = EvalReport(
        overall=cell(list(outcomes)),
        per_category={k: cell(v) for k, v in by_category.items()},
        per_difficulty={k: cell(v) for k, v in by_difficulty.items()},
    )
    if trajectories is not None:
        correct_ids = {o.task_id for o in outcomes if o.correct}
        report.tool_calls = tool_call_stats(trajectories, correct_ids)
    return report


# --- error taxonomy -------------------------------------------------------------------


@dataclass(frozen=True)
class ErrorLabelSet:
    task_id: str
    categories: tuple[str, ...]
    explanation: str

    def __post_init__(self) -> None:
        if not self.categories:
            raise EvalError("empty categories")
        unknown = [c for c in self.categories if c not in ERROR_TAXONOMY]
        if unknown:
            raise EvalError(f"unknown error categories: {unknown}")

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "categories": list(self.categories),
            "explanation": self.explanation,
        }


def analyze_errors(
    failed_outcome: EvalOutcome,
    trajectory: Trajectory,
    task_annotation: dict,
    analyzer_backend: ModelBackend,
    max_attempts: int = 3,
) -> ErrorLabelSet:
    if failed_outcome.correct:
        raise EvalError("error analysis applies to failed outcomes only")
    prompt = render_template(
        "error_analysis",
        question=trajectory.task.instruction,
        omni_modal_input=", ".join(sorted({m.kind for m in trajectory.task.media})) or "none",
        annotated_solution=task_annotation.get("solution", ""),
        answer=task_annotation.get("answer", trajectory.task.label or ""),
        trace_str=render_trace(trajectory),
    )
    failures: list[str] = []
    for _ in range(max_attempts):
        text = analyzer_backend.complete(
            ModelRequest(system=None, messages=(user_message(TextPart(prompt)),))
        )
        try:
            payload = parse_model_report(text)
            if not isinstance(payload, dict) or not isinstance(payload.get("categories"), list):
                raise ReportValidationError("analysis must be an object with a categories list")
            return ErrorLabelSet(
                task_id=failed_outcome.task_id,
                categories=tuple(payload["categories"]),
                explanation=str(payload.get("explanation", "")),
            )
        except ReportValidationError as exc:
            failures.append(str(exc))
    raise EvalError(f"error analysis unparseable after {max_attempts} attempts: {failures[-1]}")


def aggregate_error_rates(
    label_sets: Sequence[ErrorLabelSet],
    denominator_policy: str = "failed_only",
    total_tasks: int | None = None,
) -> dict:
    """Per-category frequency table; the denominator policy is explicit output."""
    if denominator_policy not in DENOMINATOR_POLICIES:
        raise EvalError(f"unknown denominator policy: {denominator_policy}")
    if denominator_policy == "failed_only":
        denominator = len(label_sets)
    else:
        if total_tasks is None:
            raise EvalError("all_tasks policy needs total_tasks")
        denominator = total_tasks
    rates = {}
    if denominator:
        for category in ERROR_TAXONOMY:
            hits = sum(1 for ls in label_sets if category in ls.categories)
            rates[category] = hits / denominator
    return {
        "policy": denominator_policy,
        "denominator": denominator,
        "rates": rates,
    }


# --- tool-call statistics ----------------------------------------------------------------


def tool_call_stats(
    trajectories: Sequence[Trajectory], correct_task_ids: set[str] | None = None
) -> dict:
    """Histogram and mean of tool calls per run, split by success when known."""
    if not trajectories:
        raise EvalError("tool_call_stats needs at least one trajectory")
    counts = [
        sum(1 for s in t.steps if isinstance(s.action, ToolCall)) for t in trajectories
    ]
    histogram: dict[int, int] = {}
    for count in counts:
        histogram[count] = histogram.get(count, 0) + 1
    out: dict = {
        "n": len(counts),
        "mean": sum(counts) / len(counts),
        "histogram": {str(k): v for k, v in sorted(histogram.items())},
    }
    if correct_task_ids is not None:
        success = [c for t, c in zip(trajectories, counts) if t.task.task_id in correct_task_ids]
        failure = [c for t, c in zip(trajectories, counts) if t.task.task_id not in correct_task_ids]
        out["success"] = {
            "n": len(success),
            "mean": sum(success) / len(success) if success else None,
        }
        out["failure"] = {
            "n": len(failure),
            "mean": sum(failure) / len(failure) if failure else None,
        }
    return out


def report_to_json(report: EvalReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
