"""Average precision, run-level mAP summaries, and per-check reliability."""

from __future__ import annotations

import statistics
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .parsing import VERDICTS
from .prompting import Method


class MetricsError(ValueError):
    pass


class NoPositivesError(MetricsError):
    pass


class LengthMismatchError(MetricsError):
    pass


class InsufficientRunsError(MetricsError):
    pass


@dataclass(frozen=True)
class APResult:
    criterion_id: int
    method: Method
    run_index: int
    ap: float
    n_frames: int
    n_positives: int


def average_precision(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Step-wise AP, sum over thresholds of (R_n - R_{n-1}) * P_n.

    Thresholds are the distinct scores in descending order; tied scores are
    admitted together, so the result does not depend on input order.
    """
    if len(scores) != len(labels):
        raise LengthMismatchError(f"{len(scores)} scores vs {len(labels)} labels")
    n_pos = sum(1 for y in labels if y)
    if n_pos == 0:
        raise NoPositivesError("average precision needs at least one positive label")
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    ap = 0.0
    tp = fp = 0
    prev_recall = 0.0
    i = 0
    while i < len(order):
        s = scores[order[i]]
        while i < len(order) and scores[order[i]] == s:
            if labels[order[i]]:
                tp += 1
            else:
                fp += 1
            i += 1
        recall = tp / n_pos
        ap += (recall - prev_recall) * (tp / (tp + fp))
        prev_recall = recall
    return ap


def ap_result(
    criterion_id: int, method: Method, run_index: int, scores: Sequence[float], labels: Sequence[int]
) -> APResult:
    return APResult(
        criterion_id,
        method,
        run_index,
        average_precision(scores, labels),
        len(labels),
        sum(1 for y in labels if y),
    )


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    """Mean and sample standard deviation (n - 1); needs at least two values."""
    if len(values) < 2:
        raise InsufficientRunsError(f"need at least 2 runs for a standard deviation, got {len(values)}")
    return statistics.fmean(values), statistics.stdev(values)


def map_over_runs(results: Iterable[APResult]) -> dict[tuple[Method, int], tuple[float, float]]:
    """(mean, sample std) of AP over runs for each (method, criterion) group."""
    groups: dict[tuple[Method, int], dict[int, float]] = defaultdict(dict)
    for r in results:
        groups[(r.method, r.criterion_id)][r.run_index] = r.ap
    out = {}
    for key in sorted(groups, key=lambda k: (k[0].key, k[1])):
        runs = groups[key]
        out[key] = mean_std([runs[i] for i in sorted(runs)])
    return out


def average_over_criteria(results: Iterable[APResult], method: Method) -> tuple[float, float]:
    """The "Avg" column: per run, mean AP over criteria; then mean and std over runs.

    Only runs that have an AP for every criterion seen for this method count.
    """
    by_run: dict[int, dict[int, float]] = defaultdict(dict)
    criteria: set[int] = set()
    for r in results:
        if r.method == method:
            by_run[r.run_index][r.criterion_id] = r.ap
            criteria.add(r.criterion_id)
    per_run = [
        statistics.fmean(aps[c] for c in sorted(criteria))
        for run, aps in sorted(by_run.items())
        if set(aps) == criteria
    ]
    return mean_std(per_run)


@dataclass(frozen=True)
class VerdictRecord:
    frame_id: str
    check_id: str
    run_index: int
    verdict: str

    @property
    def binary(self) -> int:
        return 1 if self.verdict == "yes" else 0


@dataclass(frozen=True)
class CheckReliability:
    check_id: str
    category: str
    flip_rate_across_runs: float
    verdict_distribution: dict[str, float]
    accuracy_vs_labels: float | None
    n_frames: int


def per_check_reliability(
    verdicts: Iterable[VerdictRecord],
    categories: Mapping[str, str],
    check_labels: Mapping[tuple[str, str], int] | None = None,
) -> list[CheckReliability]:
    """Flip rate across runs, verdict distribution and optional accuracy for each check.

    A frame counts as flipped when its binary verdict is not the same in every
    run. ``check_labels`` maps (frame_id, check_id) to a reference 0/1 answer.
    """
    per_check: dict[str, dict[str, dict[int, str]]] = defaultdict(lambda: defaultdict(dict))
    for v in verdicts:
        per_check[v.check_id][v.frame_id][v.run_index] = v.verdict

    out = []
    for check_id in sorted(per_check, key=lambda c: (list(categories).index(c) if c in categories else len(categories), c)):
        frames = per_check[check_id]
        flips = sum(1 for runs in frames.values() if len({1 if x == "yes" else 0 for x in runs.values()}) > 1)
        all_verdicts = [x for runs in frames.values() for x in runs.values()]
        dist = {k: all_verdicts.count(k) / len(all_verdicts) for k in VERDICTS}
        accuracy = None
        if check_labels:
            hits = [
                (1 if x == "yes" else 0) == check_labels[(f, check_id)]
                for f, runs in frames.items()
                if (f, check_id) in check_labels
                for x in runs.values()
            ]
            if hits:
                accuracy = sum(hits) / len(hits)
        out.append(
            CheckReliability(
                check_id,
                categories.get(check_id, "unknown"),
                flips / len(frames),
                dist,
                accuracy,
                len(frames),
            )
        )
    return out


def summarize_by_category(rows: Sequence[CheckReliability]) -> dict[str, float]:
    """Mean flip rate per check category."""
    acc: dict[str, list[float]] = defaultdict(list)
    for r in rows:
        acc[r.category].append(r.flip_rate_across_runs)
    return {cat: statistics.fmean(v) for cat, v in acc.items()}
