"""Rank correlation, error and chance-corrected agreement statistics."""

from __future__ import annotations

import itertools
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Callable, Hashable, Iterable, Mapping, Optional, Sequence

import numpy as np

from ebrkit.data_model import Judgment, LikertLabel

SIGNIFICANCE = 0.05


class TauUndefined(ValueError):
    """Kendall's tau-b has a zero denominator (one margin is entirely tied)."""


@dataclass(frozen=True)
class TauResult:
    tau: float
    p_value: float
    n: int

    @property
    def significant(self) -> bool:
        return self.p_value < SIGNIFICANCE


def mae(x: Sequence[float], y: Sequence[float]) -> float:
    """Mean absolute error between paired sequences."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    if x.size == 0:
        raise ValueError("mae of empty input")
    return float(np.mean(np.abs(x - y)))


def _tie_sums(values: np.ndarray) -> tuple[int, int, int]:
    """Return sums over tie groups of t(t-1)/2, t(t-1)(t-2), t(t-1)(2t+5)."""
    _, counts = np.unique(values, return_counts=True)
    t = counts.astype(np.int64)
    return (
        int(np.sum(t * (t - 1) // 2)),
        int(np.sum(t * (t - 1) * (t - 2))),
        int(np.sum(t * (t - 1) * (2 * t + 5))),
    )


def _count_inversions(seq: list) -> int:
    """Number of pairs i<j with seq[i] > seq[j], by bottom-up merge sort."""
    n = len(seq)
    src = list(seq)
    dst = [None] * n
    inversions = 0
    width = 1
    while width < n:
        for lo in range(0, n, 2 * width):
            mid = min(lo + width, n)
            hi = min(lo + 2 * width, n)
            i, j, k = lo, mid, lo
            while i < mid and j < hi:
                if src[j] < src[i]:
                    dst[k] = src[j]
                    inversions += mid - i
                    j += 1
                else:
                    dst[k] = src[i]
                    i += 1
                k += 1
            dst[k:hi] = src[i:mid] + src[j:hi]
        src, dst = dst, src
        width *= 2
    return inversions


def kendall_tau_b(x: Sequence[float], y: Sequence[float]) -> TauResult:
    """Kendall's tau-b with a two-sided, tie-adjusted normal-approximation p-value.

    Runs in O(n log n). Raises ``TauUndefined`` when either margin is constant
    and ``ValueError`` for fewer than two pairs. The p-value is approximate for
    small n (roughly n < 10).
    """
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-d sequences of equal length")
    n = x.size
    if n < 2:
        raise ValueError(f"kendall_tau_b needs at least 2 pairs, got {n}")

    order = np.lexsort((y, x))
    xs, ys = x[order], y[order]
    n0 = n * (n - 1) // 2
    n1, vx1, vx2 = _tie_sums(xs)
    n2, vy1, vy2 = _tie_sums(ys)
    joint = np.stack([xs, ys], axis=1)
    _, joint_counts = np.unique(joint, axis=0, return_counts=True)
    n3 = int(np.sum(joint_counts * (joint_counts - 1) // 2))
    if n0 == n1 or n0 == n2:
        raise TauUndefined("one margin is entirely tied")

    discordant = _count_inversions(ys.tolist())
    s = n0 - n1 - n2 + n3 - 2 * discordant  # concordant minus discordant
    tau = s / math.sqrt((n0 - n1) * (n0 - n2))
    tau = max(-1.0, min(1.0, tau))

    var_s = (n * (n - 1) * (2 * n + 5) - vx2 - vy2) / 18.0
    var_s += (2.0 * n1) * (2.0 * n2) / (2.0 * n * (n - 1))
    if n > 2:
        var_s += vx1 * vy1 / (9.0 * n * (n - 1) * (n - 2))
    if var_s <= 0:
        p = 1.0
    else:
        z = s / math.sqrt(var_s)
        p = min(1.0, math.erfc(abs(z) / math.sqrt(2.0)))
    return TauResult(tau=tau, p_value=p, n=n)


# -- Fleiss' kappa -------------------------------------------------------------


def collapse_binary(label: LikertLabel) -> int:
    """1 for ``complete``, 0 for every other label."""
    return 1 if label is LikertLabel.COMPLETE else 0


def fleiss_kappa(matrix) -> float:
    """Fleiss' kappa from an items x categories matrix of rater counts."""
    m = np.asarray(matrix)
    if m.ndim != 2:
        raise ValueError("rating matrix must be 2-d (items x categories)")
    if not np.issubdtype(m.dtype, np.integer):
        if not np.all(np.equal(np.mod(m, 1), 0)):
            raise ValueError("rating matrix must hold integer counts")
        m = m.astype(np.int64)
    if (m < 0).any():
        raise ValueError("rating counts must be non-negative")
    n_items = m.shape[0]
    if n_items < 2:
        raise ValueError("fleiss_kappa needs at least 2 items")
    raters = m.sum(axis=1)
    if not np.all(raters == raters[0]):
        raise ValueError("every item must have the same number of raters")
    r = int(raters[0])
    if r < 2:
        raise ValueError("fleiss_kappa needs at least 2 raters per item")

    p_item = (np.sum(m * m, axis=1) - r) / (r * (r - 1))
    p_bar = float(np.mean(p_item))
    p_cat = m.sum(axis=0) / (n_items * r)
    p_e = float(np.sum(p_cat**2))
    if math.isclose(p_e, 1.0):
        raise ValueError("expected agreement is 1 (a single category used); kappa undefined")
    if math.isclose(p_bar, 1.0):
        return 1.0
    return (p_bar - p_e) / (1.0 - p_e)


def rating_matrix(
    judgments: Iterable[Judgment],
    categorize: Callable[[LikertLabel], Hashable] = lambda label: label,
    categories: Optional[Sequence[Hashable]] = None,
    n_raters: Optional[int] = None,
) -> tuple[np.ndarray, list[str]]:
    """Build an items x categories count matrix from judgments.

    Items whose rater count differs from ``n_raters`` are dropped when it is
    given; otherwise unequal counts raise ``ValueError``.
    """
    by_item: dict[str, list] = defaultdict(list)
    for j in judgments:
        by_item[j.item.id].append(categorize(j.label))
    if categories is None:
        categories = sorted({c for cs in by_item.values() for c in cs})
    col = {c: i for i, c in enumerate(categories)}
    kept = sorted(k for k, v in by_item.items() if n_raters is None or len(v) == n_raters)
    m = np.zeros((len(kept), len(categories)), dtype=np.int64)
    for row, item_id in enumerate(kept):
        for c in by_item[item_id]:
            m[row, col[c]] += 1
    if n_raters is None and len(set(m.sum(axis=1).tolist())) > 1:
        raise ValueError("items have differing rater counts; pass n_raters to select a subset")
    return m, kept


# -- pairwise agreement --------------------------------------------------------


@dataclass(frozen=True)
class PairTau:
    a: str
    b: str
    n: int
    tau: Optional[TauResult]
    status: str  # "ok" | "undefined" | "low_overlap"


@dataclass
class AggregateTau:
    aggregate: float
    pairs: list[PairTau] = field(default_factory=list)

    @property
    def included(self) -> list[PairTau]:
        return [p for p in self.pairs if p.status == "ok"]

    @property
    def excluded(self) -> list[PairTau]:
        return [p for p in self.pairs if p.status != "ok"]

    @property
    def aggregate_undefined_as_zero(self) -> float:
        """Alternative aggregate counting undefined (but overlapping) pairs as 0."""
        vals = [p.tau.tau if p.tau else 0.0 for p in self.pairs if p.status != "low_overlap"]
        return float(np.mean(vals)) if vals else float("nan")


def pairwise_aggregate_tau(
    scores_by_annotator: Mapping[str, Mapping[str, float]], min_overlap: int = 10
) -> AggregateTau:
    """Unweighted mean of tau-b over annotator pairs, each on co-rated items.

    Pairs with fewer than ``min_overlap`` shared items or an undefined tau are
    left out of the mean and listed with their status.
    """
    annotators = sorted(scores_by_annotator)
    if len(annotators) < 2:
        raise ValueError("pairwise_aggregate_tau needs at least 2 annotators")
    pairs = []
    for a, b in itertools.combinations(annotators, 2):
        sa, sb = scores_by_annotator[a], scores_by_annotator[b]
        shared = sorted(set(sa) & set(sb))
        if len(shared) < max(min_overlap, 2):
            pairs.append(PairTau(a, b, len(shared), None, "low_overlap"))
            continue
        try:
            res = kendall_tau_b([sa[k] for k in shared], [sb[k] for k in shared])
        except TauUndefined:
            pairs.append(PairTau(a, b, len(shared), None, "undefined"))
            continue
        pairs.append(PairTau(a, b, len(shared), res, "ok"))
    ok = [p.tau.tau for p in pairs if p.status == "ok"]
    if not ok:
        raise ValueError("no annotator pair has a defined tau with sufficient overlap")
    return AggregateTau(aggregate=float(np.mean(ok)), pairs=pairs)


def scores_by_annotator(
    keyed_scores: Iterable[tuple[tuple[str, str], float]]
) -> dict[str, dict[str, float]]:
    """Regroup ``((item_id, annotator), score)`` pairs as annotator -> item -> score."""
    out: dict[str, dict[str, float]] = defaultdict(dict)
    for (item_id, annotator), score in keyed_scores:
        out[annotator][item_id] = score
    return dict(out)


# -- label distribution --------------------------------------------------------


def round_half_up(value: float, digits: int = 0) -> float:
    q = Decimal(1).scaleb(-digits)
    return float(Decimal(repr(value)).quantize(q, rounding=ROUND_HALF_UP))


def label_distribution(
    judgments: Iterable[Judgment], group_by: str = "overall"
) -> dict[str, dict[LikertLabel, float]]:
    """Percentage of each label per group (``overall``, ``system`` or ``annotator``)."""
    keyfn = {
        "overall": lambda j: "overall",
        "system": lambda j: j.item.answer_system,
        "annotator": lambda j: j.annotator_id,
    }.get(group_by)
    if keyfn is None:
        raise ValueError(f"unknown group_by {group_by!r}")
    groups: dict[str, Counter] = defaultdict(Counter)
    for j in judgments:
        groups[keyfn(j)][j.label] += 1
    if not groups:
        raise ValueError("label_distribution of empty input")
    out = {}
    for g in sorted(groups):
        total = sum(groups[g].values())
        out[g] = {label: 100.0 * groups[g][label] / total for label in LikertLabel.ordered()}
    return out
