"""Independent reference computations used to check the package.

Nothing here imports the code under test.
"""

from __future__ import annotations

from fractions import Fraction
from statistics import fmean, stdev


def brute_force_ap(scores, labels) -> Fraction:
    """AP from the explicit precision-recall step function, in exact rationals.

    For every distinct score t (descending) the predicted-positive set is
    rebuilt from scratch as {i : s_i >= t}; AP = sum (R_t - R_prev) * P_t.
    """
    positives = sum(1 for y in labels if y)
    assert positives > 0
    ap = Fraction(0)
    prev_recall = Fraction(0)
    for t in sorted(set(scores), reverse=True):
        chosen = [i for i, s in enumerate(scores) if s >= t]
        tp = sum(1 for i in chosen if labels[i])
        precision = Fraction(tp, len(chosen))
        recall = Fraction(tp, positives)
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return ap


def precision_at_positives_ap(scores, labels) -> Fraction:
    """Mean of precision@k at each positive, for score vectors without ties."""
    assert len(set(scores)) == len(scores), "only valid without ties"
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    hits = 0
    total = Fraction(0)
    for k, i in enumerate(order, start=1):
        if labels[i]:
            hits += 1
            total += Fraction(hits, k)
    return total / hits


def exact_weighted_sum(weights, binaries) -> Fraction:
    """Sum of w_j * r_j over the exact binary values of the float weights."""
    return sum((Fraction(w) * r for w, r in zip(weights, binaries)), Fraction(0))


def mean_and_sample_std(values):
    return fmean(values), stdev(values)
