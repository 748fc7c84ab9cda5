"""Label-only and missing-sentence baselines on the 0-100 scale."""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from ebrkit.data_model import (
    Judgment,
    LikertLabel,
    Method,
    ReferenceScore,
    ScoredJudgment,
)

log = logging.getLogger(__name__)

STATIC_MAPPING = {
    LikertLabel.MISSING_ALL: 0,
    LikertLabel.MISSING_MAJOR: 30,
    LikertLabel.MISSING_MINOR: 70,
    LikertLabel.COMPLETE: 100,
}


class MissingLabel(ValueError):
    pass


class NonMonotoneMapping(ValueError):
    def __init__(self, values: Mapping[LikertLabel, float]):
        self.values = dict(values)
        shown = ", ".join(f"{k.value}={v:.2f}" for k, v in sorted(self.values.items()))
        super().__init__(f"per-label scores are not ordered by label: {shown}")


@dataclass(frozen=True)
class LabelMapping:
    """Score per Likert label. ``strict`` enforces label-order monotonicity."""

    values: Mapping[LikertLabel, float]
    scale: tuple[int, int] = (0, 100)
    strict: bool = True

    def __post_init__(self):
        vals = {LikertLabel(k): float(v) for k, v in self.values.items()}
        missing = [lab.value for lab in LikertLabel if lab not in vals]
        if missing:
            raise MissingLabel(f"mapping has no value for: {', '.join(missing)}")
        lo, hi = self.scale
        for lab, v in vals.items():
            if not lo <= v <= hi:
                raise ValueError(f"{lab.value} -> {v} outside scale {self.scale}")
        object.__setattr__(self, "values", vals)
        if self.strict and not self.is_monotone:
            raise NonMonotoneMapping(vals)

    @property
    def is_monotone(self) -> bool:
        ordered = [self.values[lab] for lab in LikertLabel.ordered()]
        return all(a <= b for a, b in zip(ordered, ordered[1:]))

    def __getitem__(self, label: LikertLabel) -> float:
        return self.values[label]

    def rounded(self, digits: int = 1) -> dict[str, float]:
        return {lab.value: round(self.values[lab], digits) for lab in LikertLabel.ordered()}


def static_rescale(label: LikertLabel) -> int:
    return STATIC_MAPPING[LikertLabel(label)]


STATIC = LabelMapping(STATIC_MAPPING)


def fit_avg_ebr_mapping(ebr_scores: Iterable[ScoredJudgment], strict: bool = True) -> LabelMapping:
    """Mean EBR score per label.

    With ``strict`` a mapping whose means are out of label order raises
    ``NonMonotoneMapping``; otherwise it is returned with a logged warning.
    """
    by_label: dict[LikertLabel, list[float]] = defaultdict(list)
    for s in ebr_scores:
        by_label[s.label].append(s.score)
    missing = [lab.value for lab in LikertLabel if not by_label.get(lab)]
    if missing:
        raise MissingLabel(f"no EBR scores for label(s): {', '.join(missing)}")
    means = {lab: float(np.mean(v)) for lab, v in by_label.items()}
    mapping = LabelMapping(means, strict=False)
    if not mapping.is_monotone:
        if strict:
            raise NonMonotoneMapping(means)
        log.warning("Avg-EBR mapping is not monotone in label order: %s", mapping.rounded(2))
    return mapping


def apply_mapping(
    mapping: LabelMapping, judgment: Judgment, method: str = Method.AVG_EBR.value, run_id: str = ""
) -> ScoredJudgment:
    return ScoredJudgment(judgment, mapping[judgment.label], method, "label-mapping", run_id)


def msh_score(judgment: Judgment, deduction: int) -> int:
    """100 minus ``deduction`` per marked missing sentence, clamped to 0..100."""
    return max(0, min(100, 100 - deduction * judgment.n_missing))


def _msh_grid(counts: np.ndarray, refs: np.ndarray, search: Sequence[int]) -> np.ndarray:
    d = np.asarray(search, dtype=float)[:, None]
    preds = np.clip(100.0 - d * counts[None, :], 0.0, 100.0)
    return np.mean(np.abs(preds - refs[None, :]), axis=1)


def optimize_msh_deduction(
    judgments: Iterable[Judgment],
    references: Iterable[ReferenceScore],
    search: Sequence[int] = range(0, 101),
) -> tuple[int, float]:
    """Exhaustive search for the per-sentence deduction with the lowest MAE.

    Only judgments that have a reference are scored. Ties go to the smaller
    deduction.
    """
    search = sorted(search)
    if not search:
        raise ValueError("empty deduction search range")
    ref_by_key = {r.judgment_id: r.mean_score for r in references}
    pairs = [(j.n_missing, ref_by_key[j.key]) for j in judgments if j.key in ref_by_key]
    if not pairs:
        raise ValueError("no judgments with reference scores")
    counts = np.array([p[0] for p in pairs], dtype=float)
    refs = np.array([p[1] for p in pairs], dtype=float)
    maes = _msh_grid(counts, refs, search)
    best = 0
    for i in range(1, len(search)):
        if maes[i] < maes[best] - 1e-12:
            best = i
    return int(search[best]), float(maes[best])


def score_static(judgments: Iterable[Judgment], run_id: str = "") -> list[ScoredJudgment]:
    return [
        ScoredJudgment(j, static_rescale(j.label), Method.STATIC.value, "label-mapping", run_id)
        for j in judgments
    ]


def score_msh(judgments: Iterable[Judgment], deduction: int, run_id: str = "") -> list[ScoredJudgment]:
    return [
        ScoredJudgment(j, msh_score(j, deduction), Method.MSH.value, f"msh-d{deduction}", run_id)
        for j in judgments
    ]
