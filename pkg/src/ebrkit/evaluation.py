"""Report assembly: method vs reference, expert agreement, annotator alignment,
per-label averages and run-to-run stability."""

from __future__ import annotations

import itertools
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from ebrkit.data_model import Judgment, JudgmentKey, LikertLabel, ReferenceScore, Rubric, ScoredJudgment
from ebrkit.metrics import (
    AggregateTau,
    TauResult,
    TauUndefined,
    kendall_tau_b,
    mae,
    pairwise_aggregate_tau,
    scores_by_annotator,
)
from ebrkit.rescaling import PromptVariant, RescalePolicy, ScoringBackend, rescale_bundle

OVERALL = "overall"
DEFAULT_SLICES = (OVERALL, LikertLabel.MISSING_MINOR.value, LikertLabel.MISSING_MAJOR.value)
DAGGER = "†"


class EmptySlice(ValueError):
    pass


def _in_slice(label: LikertLabel, slice_name: str) -> bool:
    return slice_name == OVERALL or label.value == slice_name


def _check_slices(slices: Sequence[str]) -> None:
    valid = {OVERALL} | {lab.value for lab in LikertLabel}
    bad = [s for s in slices if s not in valid]
    if bad:
        raise ValueError(f"unknown slice(s): {', '.join(bad)}")


@dataclass(frozen=True)
class SliceResult:
    n: int
    mae: float
    tau: Optional[TauResult]  # None when tau is undefined (constant margin)


def _compare(xs, ys) -> SliceResult:
    try:
        tau = kendall_tau_b(xs, ys) if len(xs) >= 2 else None
    except TauUndefined:
        tau = None
    return SliceResult(n=len(xs), mae=mae(xs, ys), tau=tau)


@dataclass
class EvalReport:
    method: str
    slices: dict[str, SliceResult] = field(default_factory=dict)

    def records(self) -> list[dict]:
        out = []
        for name, r in self.slices.items():
            tau_rec = {"method": self.method, "metric": "tau_b", "slice": name, "n": r.n}
            if r.tau is None:
                tau_rec.update(value=None, undefined=True)
            else:
                tau_rec.update(value=r.tau.tau, p_value=r.tau.p_value)
            out.append(tau_rec)
            out.append({"method": self.method, "metric": "mae", "slice": name, "value": r.mae, "n": r.n})
        return out


def evaluate_against_reference(
    method_scores: Iterable[ScoredJudgment],
    references: Iterable[ReferenceScore],
    slices: Sequence[str] = DEFAULT_SLICES,
    method: Optional[str] = None,
) -> EvalReport:
    """Kendall tau-b and MAE of a method's scores against mean reference scores, per slice."""
    _check_slices(slices)
    method_scores = list(method_scores)
    methods = sorted({s.method for s in method_scores})
    if method is None:
        if len(methods) != 1:
            raise ValueError(f"expected scores from one method, got {methods}")
        method = methods[0]
    ref = {r.judgment_id: r.mean_score for r in references}
    paired = [(s.label, float(s.score), ref[s.key]) for s in method_scores if s.key in ref]
    report = EvalReport(method)
    for name in slices:
        rows = [(x, y) for lab, x, y in paired if _in_slice(lab, name)]
        if not rows:
            raise EmptySlice(f"slice {name!r} has no judgments with both a {method} and a reference score")
        xs, ys = zip(*rows)
        report.slices[name] = _compare(list(xs), list(ys))
    return report


@dataclass(frozen=True)
class ExpertPairResult:
    expert_a: int
    expert_b: int
    slice: str
    result: SliceResult


def expert_agreement(
    references: Iterable[ReferenceScore],
    judgments: Mapping[JudgmentKey, Judgment] | Iterable[Judgment],
    slices: Sequence[str] = DEFAULT_SLICES,
) -> list[ExpertPairResult]:
    """Tau-b and MAE between every pair of experts (numbered from 1), per slice."""
    _check_slices(slices)
    if not isinstance(judgments, Mapping):
        judgments = {j.key: j for j in judgments}
    references = list(references)
    n_experts = max((len(r.expert_scores) for r in references), default=0)
    if n_experts < 2:
        raise ValueError("expert_agreement needs at least 2 expert score columns")
    out = []
    for a, b in itertools.combinations(range(n_experts), 2):
        for name in slices:
            rows = [
                (r.expert_scores[a], r.expert_scores[b])
                for r in references
                if len(r.expert_scores) > b and _in_slice(judgments[r.judgment_id].label, name)
            ]
            if not rows:
                raise EmptySlice(f"no shared instances for experts {a + 1},{b + 1} in slice {name!r}")
            xs, ys = zip(*rows)
            out.append(ExpertPairResult(a + 1, b + 1, name, _compare(list(xs), list(ys))))
    return out


@dataclass
class AgreementShift:
    pre: AggregateTau
    post: AggregateTau

    @property
    def deltas(self) -> list[tuple[str, str, Optional[float], Optional[float], Optional[float]]]:
        """(annotator_a, annotator_b, tau_pre, tau_post, post - pre) per pair."""
        post = {(p.a, p.b): p for p in self.post.pairs}
        out = []
        for p in self.pre.pairs:
            q = post.get((p.a, p.b))
            t0 = p.tau.tau if p.tau else None
            t1 = q.tau.tau if q is not None and q.tau else None
            out.append((p.a, p.b, t0, t1, None if t0 is None or t1 is None else t1 - t0))
        return out


def label_rank_scores(judgments: Iterable[Judgment]) -> dict[str, dict[str, float]]:
    return scores_by_annotator((j.key, float(j.label.rank)) for j in judgments)


def agreement_shift(
    judgments: Iterable[Judgment], rescaled_scores: Iterable[ScoredJudgment], min_overlap: int = 10
) -> AgreementShift:
    """Pairwise aggregate tau on label ranks (pre) and on rescaled scores (post)."""
    judgments = list(judgments)
    rescaled_scores = list(rescaled_scores)
    jk = {j.key for j in judgments}
    sk = {s.key for s in rescaled_scores}
    if jk != sk:
        raise ValueError(
            f"labels and scores cover different judgments ({len(jk - sk)} only labelled, "
            f"{len(sk - jk)} only scored)"
        )
    pre = pairwise_aggregate_tau(label_rank_scores(judgments), min_overlap)
    post = pairwise_aggregate_tau(
        scores_by_annotator((s.key, float(s.score)) for s in rescaled_scores), min_overlap
    )
    return AgreementShift(pre, post)


@dataclass
class PerLabelMeans:
    means: dict[LikertLabel, float]
    counts: dict[LikertLabel, int]
    violations: list[tuple[LikertLabel, LikertLabel]]

    @property
    def monotone(self) -> Optional[bool]:
        """None when fewer than two labels are present."""
        return None if len(self.means) < 2 else not self.violations


def avg_score_per_label(scored: Iterable[ScoredJudgment]) -> PerLabelMeans:
    by_label: dict[LikertLabel, list[float]] = defaultdict(list)
    for s in scored:
        by_label[s.label].append(float(s.score))
    present = [lab for lab in LikertLabel.ordered() if by_label.get(lab)]
    means = {lab: float(np.mean(by_label[lab])) for lab in present}
    violations = [(lo, hi) for lo, hi in zip(present, present[1:]) if not means[lo] < means[hi]]
    return PerLabelMeans(means, {lab: len(by_label[lab]) for lab in present}, violations)


@dataclass(frozen=True)
class StabilityRow:
    run_id: str
    n_scored: int
    n_failed: int
    avg_score: float
    tau: Optional[TauResult]
    mae: float


@dataclass
class StabilityReport:
    rows: list[StabilityRow]

    @property
    def spread(self) -> dict[str, float]:
        """max - min across runs for avg score, tau and MAE."""

        def rng(vals):
            vals = [v for v in vals if v is not None and not np.isnan(v)]
            return float(max(vals) - min(vals)) if vals else float("nan")

        return {
            "avg_score": rng([r.avg_score for r in self.rows]),
            "tau": rng([r.tau.tau if r.tau else None for r in self.rows]),
            "mae": rng([r.mae for r in self.rows]),
        }

    def records(self) -> list[dict]:
        out = []
        for r in self.rows:
            out.append(
                {
                    "run_id": r.run_id,
                    "n_scored": r.n_scored,
                    "n_failed": r.n_failed,
                    "avg_score": r.avg_score,
                    "tau": r.tau.tau if r.tau else None,
                    "p_value": r.tau.p_value if r.tau else None,
                    "mae": r.mae,
                }
            )
        out.append({"run_id": "spread", **self.spread})
        return out


def stability_run(
    backend: ScoringBackend,
    judgments,
    rubric: Rubric,
    n_runs: int,
    references: Iterable[ReferenceScore],
    variant: PromptVariant = PromptVariant.WITH_RUBRIC,
    policy: RescalePolicy = RescalePolicy(),
    run_prefix: str = "stability",
    concurrency: int = 1,
) -> StabilityReport:
    """Rescale the referenced judgments ``n_runs`` times without reusing cached replies."""
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    if hasattr(judgments, "judgments"):
        judgments = judgments.judgments
    references = list(references)
    ref_keys = {r.judgment_id for r in references}
    subset = [j for j in judgments if j.key in ref_keys]
    if not subset:
        raise ValueError("no judgments have reference scores")
    rows = []
    for i in range(n_runs):
        run_id = f"{run_prefix}-{i + 1}"
        result = rescale_bundle(
            backend.isolated(run_id), subset, rubric, variant, policy, run_id, concurrency
        )
        if result.scores:
            overall = evaluate_against_reference(result.scores, references, (OVERALL,)).slices[OVERALL]
            avg = float(np.mean([s.score for s in result.scores]))
            rows.append(StabilityRow(run_id, len(result.scores), len(result.failures), avg, overall.tau, overall.mae))
        else:
            rows.append(StabilityRow(run_id, 0, len(result.failures), float("nan"), None, float("nan")))
    return StabilityReport(rows)


# -- figure data and text tables ----------------------------------------------------


def scatter_records(method_scores: Iterable[ScoredJudgment], references: Iterable[ReferenceScore]) -> list[dict]:
    """(reference, score) points per judgment, the data behind score-vs-reference plots."""
    ref = {r.judgment_id: r for r in references}
    out = []
    for s in method_scores:
        r = ref.get(s.key)
        if r is None:
            continue
        out.append(
            {
                "item_id": s.key[0],
                "annotator": s.key[1],
                "label": s.label.value,
                "method": s.method,
                "score": s.score,
                "reference": r.mean_score,
                "expert_scores": list(r.expert_scores),
            }
        )
    return sorted(out, key=lambda d: (d["item_id"], d["annotator"], d["method"]))


def fmt_tau(t: Optional[TauResult]) -> str:
    if t is None:
        return "-"
    return f"{t.tau:.2f}{DAGGER if t.significant else ''}"


def render_eval_table(reports: Sequence[EvalReport]) -> str:
    if not reports:
        return ""
    slices = list(reports[0].slices)
    width = max(12, *(len(r.method) for r in reports))
    head = f"{'':<{width}}" + "".join(f" | {s:^17}" for s in slices)
    sub = f"{'':<{width}}" + "".join(f" | {'tau':>8} {'MAE':>8}" for _ in slices)
    lines = [head, sub, "-" * len(sub)]
    for rep in reports:
        cells = "".join(
            f" | {fmt_tau(rep.slices[s].tau):>8} {rep.slices[s].mae:>8.1f}" for s in slices
        )
        lines.append(f"{rep.method:<{width}}{cells}")
    return "\n".join(lines)


def render_expert_table(results: Sequence[ExpertPairResult]) -> str:
    slices = list(dict.fromkeys(r.slice for r in results))
    pairs = list(dict.fromkeys((r.expert_a, r.expert_b) for r in results))
    cell = {(r.expert_a, r.expert_b, r.slice): r.result for r in results}
    lines = [f"{'':<10}" + "".join(f" | {s:>14}" for s in slices)]
    for metric in ("tau", "MAE"):
        for a, b in pairs:
            vals = []
            for s in slices:
                res = cell[(a, b, s)]
                vals.append(fmt_tau(res.tau) if metric == "tau" else f"{res.mae:.2f}")
            lines.append(f"{metric + f' ({a},{b})':<10}" + "".join(f" | {v:>14}" for v in vals))
    return "\n".join(lines)


def render_stability_table(report: StabilityReport) -> str:
    lines = [f"{'run':<14} | {'avg score':>9} | {'tau':>6} | {'MAE':>6} | {'failed':>6}"]
    for r in report.rows:
        lines.append(f"{r.run_id:<14} | {r.avg_score:>9.2f} | {fmt_tau(r.tau):>6} | {r.mae:>6.2f} | {r.n_failed:>6}")
    sp = report.spread
    lines.append(f"{'spread':<14} | {sp['avg_score']:>9.2f} | {sp['tau']:>6.2f} | {sp['mae']:>6.2f} |")
    return "\n".join(lines)
