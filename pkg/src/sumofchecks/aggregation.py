"""Criterion scores from check verdicts, the decision rule, and the LLM-aggregation ablation."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import TYPE_CHECKING, Sequence

from .parsing import CheckVerdict, FailureSink, parse_agg_score
from .registry import Criterion

if TYPE_CHECKING:
    from .backend import Backend, ModelConfig
    from .prompting import Method, Templates


class AggregationError(ValueError):
    pass


class ArityMismatchError(AggregationError):
    pass


class OrderMismatchError(AggregationError):
    pass


@dataclass(frozen=True)
class CriterionScore:
    frame_id: str
    criterion_id: int
    method: "Method"
    run_index: int
    score: float
    prediction: int
    verdicts: tuple[CheckVerdict, ...] = field(default=())


def _exact(w: float) -> Fraction:
    # Weights are authored as decimals: read 0.2 as 1/5 so three of five sum to exactly 0.6.
    return Fraction(repr(w))


def aggregate(verdicts: Sequence[CheckVerdict], criterion: Criterion) -> float:
    """Weighted sum of binarized verdicts, computed exactly and rounded once."""
    if len(verdicts) != len(criterion.checks):
        raise ArityMismatchError(
            f"criterion {criterion.criterion_id}: {len(verdicts)} verdicts "
            f"for {len(criterion.checks)} checks"
        )
    got = tuple(v.check_id for v in verdicts)
    if got != criterion.check_ids:
        raise OrderMismatchError(
            f"criterion {criterion.criterion_id}: verdict order {got} != check order {criterion.check_ids}"
        )
    total = sum(
        (_exact(chk.weight) for chk, v in zip(criterion.checks, verdicts) if v.binary),
        Fraction(0),
    )
    return min(1.0, max(0.0, float(total)))


def decide(score: float, criterion: Criterion) -> int:
    # strict: a score equal to the threshold is not enough evidence
    return 1 if score > criterion.decision_threshold else 0


def llm_aggregate(
    verdicts: Sequence[CheckVerdict],
    criterion: Criterion,
    backend: "Backend",
    config: "ModelConfig",
    templates: "Templates | None" = None,
    frame_id: str = "",
    failures: FailureSink | None = None,
) -> float:
    """Ask the model for the criterion score given the check verdicts."""
    from .prompting import build_llm_agg_prompt

    payload = build_llm_agg_prompt(criterion, verdicts, templates=templates, frame_id=frame_id)
    response = backend.complete(payload, config)
    return parse_agg_score(response.text, failures)
