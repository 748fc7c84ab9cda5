import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import brute_mae_grid

from conftest import make_judgment
from ebrkit.baselines import (
    STATIC,
    STATIC_MAPPING,
    LabelMapping,
    MissingLabel,
    NonMonotoneMapping,
    apply_mapping,
    fit_avg_ebr_mapping,
    msh_score,
    optimize_msh_deduction,
    score_msh,
    score_static,
    static_rescale,
)
from ebrkit.data_model import LikertLabel, Method, ReferenceScore, ScoredJudgment

L = LikertLabel


def _scored(item, pairs):
    return [
        ScoredJudgment(make_judgment(item, f"a{k}", label), score, Method.EBR.value)
        for k, (label, score) in enumerate(pairs)
    ]


# -- static --------------------------------------------------------------------------


@pytest.mark.parametrize(
    "label, expected",
    [(L.MISSING_ALL, 0), (L.MISSING_MAJOR, 30), (L.MISSING_MINOR, 70), (L.COMPLETE, 100)],
)
def test_static_mapping(label, expected):
    assert static_rescale(label) == expected
    assert static_rescale(label.value) == expected
    assert STATIC[label] == expected


def test_score_static_records(tiny_bundle):
    out = score_static(tiny_bundle.judgments, run_id="r")
    assert [s.score for s in out] == [100, 70, 30, 0, 70]
    assert all(isinstance(s.score, int) and s.method == "static" for s in out)


# -- avg-ebr ---------------------------------------------------------------------------


def test_avg_ebr_means(item):
    scores = _scored(
        item,
        [(L.COMPLETE, 100), (L.MISSING_MINOR, 80), (L.MISSING_MINOR, 60), (L.MISSING_MAJOR, 40), (L.MISSING_ALL, 0)],
    )
    m = fit_avg_ebr_mapping(scores)
    assert m[L.MISSING_MINOR] == 70.0
    assert m.rounded() == {"missing_all": 0.0, "missing_major": 40.0, "missing_minor": 70.0, "complete": 100.0}


def test_avg_ebr_constant_scores(item):
    scores = _scored(item, [(lab, 50) for lab in LikertLabel.ordered()] * 3)
    m = fit_avg_ebr_mapping(scores)
    assert all(m[lab] == 50.0 for lab in LikertLabel)


def test_avg_ebr_missing_label(item):
    scores = _scored(item, [(L.COMPLETE, 100), (L.MISSING_MINOR, 70), (L.MISSING_ALL, 0)])
    with pytest.raises(MissingLabel, match="missing_major"):
        fit_avg_ebr_mapping(scores)


def test_avg_ebr_nonmonotone(item, caplog):
    pairs = [(L.COMPLETE, 100), (L.MISSING_MINOR, 40), (L.MISSING_MAJOR, 60), (L.MISSING_ALL, 0)]
    with pytest.raises(NonMonotoneMapping) as exc:
        fit_avg_ebr_mapping(_scored(item, pairs))
    assert exc.value.values[L.MISSING_MAJOR] == 60
    with caplog.at_level("WARNING"):
        m = fit_avg_ebr_mapping(_scored(item, pairs), strict=False)
    assert not m.is_monotone and "not monotone" in caplog.text


def test_label_mapping_validation():
    with pytest.raises(MissingLabel):
        LabelMapping({L.COMPLETE: 100})
    with pytest.raises(ValueError):
        LabelMapping({**STATIC_MAPPING, L.COMPLETE: 120})
    with pytest.raises(NonMonotoneMapping):
        LabelMapping({**STATIC_MAPPING, L.MISSING_MAJOR: 90})


def test_static_is_a_label_mapping(tiny_bundle):
    for j in tiny_bundle.judgments:
        assert apply_mapping(STATIC, j).score == score_static([j])[0].score


@given(st.lists(st.tuples(st.sampled_from(list(LikertLabel)), st.integers(0, 100)), min_size=1, max_size=40))
def test_avg_ebr_means_match_groupby(pairs):
    from golden_cases import ITEM

    present = {lab for lab, _ in pairs}
    scores = _scored(ITEM, pairs)
    if present != set(LikertLabel):
        with pytest.raises(MissingLabel):
            fit_avg_ebr_mapping(scores, strict=False)
        return
    m = fit_avg_ebr_mapping(scores, strict=False)
    for lab in LikertLabel:
        vals = [s for l2, s in pairs if l2 is lab]
        assert m[lab] == pytest.approx(sum(vals) / len(vals), abs=1e-12)
        assert min(vals) <= m[lab] <= max(vals)


# -- MSH ---------------------------------------------------------------------------------


@pytest.mark.parametrize("m, d, expected", [(0, 16, 100), (1, 16, 84), (2, 16, 68), (6, 16, 4), (7, 16, 0), (20, 16, 0), (3, 0, 100)])
def test_msh_examples(item, m, d, expected):
    assert msh_score(make_judgment(item, missing=range(1, m + 1)), d) == expected


def test_score_msh_records(tiny_bundle):
    out = score_msh(tiny_bundle.judgments, 16)
    assert [s.score for s in out] == [100, 84, 52, 4, 68]
    assert {s.backend_id for s in out} == {"msh-d16"}


def _planted(n, d_star, seed):
    from golden_cases import ITEM

    rng = np.random.default_rng(seed)
    js, refs = [], []
    for k in range(n):
        m = int(rng.integers(0, 8))
        j = make_judgment(ITEM, f"p{k}", missing=range(1, m + 1))
        js.append(j)
        refs.append(ReferenceScore(j.key, (max(0, 100 - d_star * m),)))
    return js, refs


@pytest.mark.parametrize("d_star", [5, 16, 25])
def test_optimizer_recovers_planted_deduction(d_star):
    js, refs = _planted(200, d_star, seed=d_star)
    d, err = optimize_msh_deduction(js, refs)
    assert (d, err) == (d_star, 0.0)


def test_optimizer_all_zero_missing_ties_to_smallest(item):
    js = [make_judgment(item, f"z{k}") for k in range(5)]
    refs = [ReferenceScore(j.key, (90,)) for j in js]
    assert optimize_msh_deduction(js, refs) == (0, 10.0)
    assert optimize_msh_deduction(js, refs, search=range(3, 9)) == (3, 10.0)


def test_optimizer_ignores_unreferenced(item):
    js, refs = _planted(30, 12, seed=1)
    extra = make_judgment(item, "noref", missing=range(1, 4))
    assert optimize_msh_deduction(js + [extra], refs) == (12, 0.0)
    with pytest.raises(ValueError):
        optimize_msh_deduction([extra], refs)
    with pytest.raises(ValueError):
        optimize_msh_deduction(js, refs, search=[])


@given(
    st.lists(st.tuples(st.integers(0, 9), st.floats(0, 100, allow_nan=False)), min_size=1, max_size=25),
    st.integers(0, 30),
    st.integers(0, 30),
)
def test_optimizer_matches_brute_scan(pairs, lo, width):
    from golden_cases import ITEM

    search = range(lo, lo + width + 1)
    js = [make_judgment(ITEM, f"b{k}", missing=range(1, m + 1)) for k, (m, _) in enumerate(pairs)]
    refs = [ReferenceScore(j.key, (r,)) for j, (_, r) in zip(js, pairs)]
    d, err = optimize_msh_deduction(js, refs, search)
    grid = brute_mae_grid([m for m, _ in pairs], [r for _, r in pairs], search)
    best = min(grid.values())
    assert err == pytest.approx(best, abs=1e-9)
    assert d == min(k for k, v in grid.items() if v <= best + 1e-9)
