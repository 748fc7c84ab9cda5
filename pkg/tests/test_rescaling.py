import os
import threading
from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

import golden_cases as gc
from conftest import make_judgment
from ebrkit.data_model import LikertLabel, Method
from ebrkit.rescaling import (
    NONE_MARKER,
    NoScoreFound,
    PromptVariant,
    RescaleError,
    RescalePolicy,
    RubricOracleBackend,
    ScoringBackend,
    build_rescale_prompt,
    load_templates,
    parse_score,
    quantize,
    rescale_bundle,
    rescale_judgment,
    rubric_oracle_score,
)

GOLDEN = Path(__file__).parent / "golden"


class CountingBackend(ScoringBackend):
    id = "counting"
    deterministic = True

    def __init__(self, reply="Score: 63"):
        self.reply = reply
        self.calls = 0
        self.prompts = []
        self._lock = threading.Lock()

    def respond(self, prompt, judgment, rubric):
        with self._lock:
            self.calls += 1
            self.prompts.append(prompt)
        return self.reply(judgment) if callable(self.reply) else self.reply


class FailingBackend(ScoringBackend):
    id = "failing"

    def respond(self, prompt, judgment, rubric):
        if judgment.annotator_id == "w2":
            raise ConnectionError("backend down")
        return "Score: 42"


# -- prompt ---------------------------------------------------------------------


@pytest.mark.parametrize("variant", ["with_rubric", "without_rubric"])
def test_prompt_matches_golden(variant):
    prompt = build_rescale_prompt(gc.JUDGMENT, gc.RUBRIC, variant)
    path = GOLDEN / f"prompt_{variant}.txt"
    if os.environ.get("EBRKIT_UPDATE_GOLDEN"):
        path.write_text(prompt, encoding="utf-8")
    assert prompt == path.read_text(encoding="utf-8")


def test_prompt_section_order():
    prompt = build_rescale_prompt(gc.JUDGMENT, gc.RUBRIC, "with_rubric")
    anchors = [
        gc.RUBRIC.aspect_definition,
        "Scores range from 0",
        "1. " + gc.DOC.sentences[0],
        gc.ITEM.question_text,
        gc.ITEM.answer_text,
        gc.JUDGMENT.explanation,
        "marked as missing from the response: 3",
        load_templates().label_definitions[LikertLabel.MISSING_MAJOR],
        "deduct 40 points",
        "Give a number.",
    ]
    positions = [prompt.index(a) for a in anchors]
    assert positions == sorted(positions)
    assert prompt.endswith("Give a number.")


def test_variants_share_prefix_and_differ_by_rubric():
    with_r = build_rescale_prompt(gc.JUDGMENT, gc.RUBRIC, PromptVariant.WITH_RUBRIC)
    without = build_rescale_prompt(gc.JUDGMENT, gc.RUBRIC, PromptVariant.WITHOUT_RUBRIC)
    template_opening = load_templates().without_rubric.split(" Scoring is")[0]
    assert without.startswith(template_opening)
    cut = with_r.index("Scoring rubric:")
    assert without.startswith(with_r[:cut])
    for rule in gc.RUBRIC.deduction_rules:
        assert rule.description in with_r
        assert rule.description not in without
    assert "deduct" not in without


def test_empty_missing_rendered_as_none():
    prompt = build_rescale_prompt(gc.EMPTY_MISSING, gc.RUBRIC)
    assert f"marked as missing from the response: {NONE_MARKER}\n" in prompt


@given(st.text(min_size=0, max_size=60), st.text(min_size=0, max_size=60))
def test_prompt_injective_in_explanation(a, b):
    ja = make_judgment(gc.ITEM, explanation=a)
    jb = make_judgment(gc.ITEM, explanation=b)
    pa, pb = build_rescale_prompt(ja, gc.RUBRIC), build_rescale_prompt(jb, gc.RUBRIC)
    assert (pa == pb) == (a == b)


def test_explanation_with_braces_is_verbatim():
    j = make_judgment(gc.ITEM, explanation="Uses {article} and {} literally")
    assert "'Uses {article} and {} literally'" in build_rescale_prompt(j, gc.RUBRIC)


def test_custom_template_dir(tmp_path):
    src = load_templates()
    (tmp_path / "ebr_with_rubric.txt").write_text("R {feedback} {rubric}")
    (tmp_path / "ebr_without_rubric.txt").write_text("N {feedback}")
    (tmp_path / "label_definitions.yaml").write_text(
        "\n".join(f"{k.value}: def {k.value}" for k in src.label_definitions)
    )
    t = load_templates(tmp_path)
    assert build_rescale_prompt(gc.JUDGMENT, gc.RUBRIC, "without_rubric", t) == f"N {gc.JUDGMENT.explanation}"


# -- parse ------------------------------------------------------------------------


@pytest.mark.parametrize(
    "text, expected",
    [
        ("Score: 85", 85),
        ("Deducting 30 points, final score is 70.", 70),
        ("70", 70),
        ("I'd say 75/100", 75),
        ("Final: 60 out of 100.", 60),
        ("Sentence 12 missing, so 80. Note: 250 is not a score", 80),
        ("Score: 100", 100),
        ("0", 0),
    ],
)
def test_parse_score(text, expected):
    assert parse_score(text, (0, 100)) == expected


def test_parse_score_failures():
    with pytest.raises(NoScoreFound) as exc:
        parse_score("I cannot evaluate this.", (0, 100))
    assert exc.value.text == "I cannot evaluate this."
    with pytest.raises(NoScoreFound):
        parse_score("Score: 250", (0, 100))


@given(st.lists(st.integers(0, 1000), min_size=1, max_size=6))
def test_parse_score_last_in_range(nums):
    text = " then ".join(f"value {n}" for n in nums)
    in_range = [n for n in nums if n <= 100]
    if in_range:
        assert parse_score(text, (0, 100)) == in_range[-1]
    else:
        with pytest.raises(NoScoreFound):
            parse_score(text, (0, 100))


# -- quantize / oracle ---------------------------------------------------------------


@pytest.mark.parametrize("score, step, expected", [(72, 5, 70), (73, 5, 75), (5, 10, 10), (4, 10, 0), (100, 5, 100), (88, 1, 88)])
def test_quantize(score, step, expected):
    assert quantize(score, step) == expected


@pytest.mark.parametrize("n_missing, deduction, expected", [(0, 16, 100), (7, 16, 0), (3, 10, 70), (2, 16, 68)])
def test_oracle_score(n_missing, deduction, expected, rubric):
    from dataclasses import replace

    r = replace(rubric, per_sentence_deduction=deduction)
    j = make_judgment(gc.ITEM, missing=range(1, n_missing + 1))
    assert rubric_oracle_score(j, r) == expected


def test_oracle_requires_deduction():
    with pytest.raises(ValueError):
        rubric_oracle_score(gc.JUDGMENT, gc.RUBRIC)


@given(st.sets(st.integers(1, 5), max_size=4), st.integers(1, 5), st.integers(0, 40))
def test_oracle_antitone_in_missing(missing, extra, deduction):
    from dataclasses import replace

    r = replace(gc.RUBRIC, per_sentence_deduction=deduction)
    small = rubric_oracle_score(make_judgment(gc.ITEM, missing=missing), r)
    large = rubric_oracle_score(make_judgment(gc.ITEM, missing=missing | {extra}), r)
    assert 0 <= large <= small <= 100


# -- rescale_judgment ------------------------------------------------------------------


@pytest.mark.parametrize("label, expected", [(LikertLabel.COMPLETE, 100), (LikertLabel.MISSING_ALL, 0)])
def test_extremes_skip_backend(label, expected, item, rubric):
    b = CountingBackend()
    s = rescale_judgment(b, make_judgment(item, label=label, missing=(1, 2)), rubric)
    assert s.score == expected and b.calls == 0
    assert s.method == Method.EBR.value


def test_extremes_rescaled_when_enabled(item, rubric):
    b = CountingBackend("Score: 97")
    s = rescale_judgment(b, make_judgment(item, label=LikertLabel.COMPLETE), rubric, policy=RescalePolicy(rescale_extremes=True))
    assert s.score == 97 and b.calls == 1


def test_oracle_path(item, rubric):
    j = make_judgment(item, label=LikertLabel.MISSING_MINOR, missing=(4, 9))
    s = rescale_judgment(RubricOracleBackend(), j, rubric, "without_rubric", run_id="r7")
    assert s.score == 68
    assert s.method == Method.EBR_NO_RUBRIC.value
    assert s.backend_id == "rubric-oracle" and s.run_id == "r7" and s.raw_response == "Score: 68"


def test_quantized_backend_scores(item, rubric):
    s = rescale_judgment(CountingBackend("Score: 63"), make_judgment(item), rubric, policy=RescalePolicy(quantize_to=5))
    assert s.score == 65


def test_errors_are_tagged(item, rubric):
    with pytest.raises(RescaleError) as exc:
        rescale_judgment(CountingBackend("no idea"), make_judgment(item, "w9"), rubric)
    assert (exc.value.item_id, exc.value.annotator_id) == ("q1", "w9")
    assert isinstance(exc.value.cause, NoScoreFound)
    assert exc.value.raw_response == "no idea"


def test_policy_bounds(rubric):
    with pytest.raises(ValueError):
        RescalePolicy(complete_score=120).check(rubric)
    with pytest.raises(ValueError):
        RescalePolicy(quantize_to=0)


# -- rescale_bundle --------------------------------------------------------------------


def test_bundle_all_complete(item, rubric):
    js = [make_judgment(item, f"w{i}", LikertLabel.COMPLETE) for i in range(5)]
    b = CountingBackend()
    res = rescale_bundle(b, js, rubric)
    assert [s.score for s in res.scores] == [100] * 5 and b.calls == 0


def test_bundle_routing(item, rubric):
    js = [
        make_judgment(item, "a", LikertLabel.MISSING_MINOR, (1,)),
        make_judgment(item, "b", LikertLabel.MISSING_MAJOR, (1, 2, 3)),
        make_judgment(item, "c", LikertLabel.COMPLETE),
    ]
    b = CountingBackend(lambda j: f"Score: {rubric_oracle_score(j, rubric)}")
    res = rescale_bundle(b, js, rubric)
    assert b.calls == 2
    assert [s.score for s in res.scores] == [84, 52, 100]
    assert [s.backend_id for s in res.scores] == ["counting", "counting", "policy-endpoint"]


def test_bundle_deterministic_across_run_ids(tiny_bundle, rubric):
    a = rescale_bundle(RubricOracleBackend(), tiny_bundle, rubric, run_id="one")
    b = rescale_bundle(RubricOracleBackend(), tiny_bundle, rubric, run_id="two")
    assert [s.score for s in a.scores] == [s.score for s in b.scores]
    assert {s.run_id for s in a.scores} == {"one"}


def test_bundle_collects_failures(tiny_bundle, rubric):
    res = rescale_bundle(FailingBackend(), tiny_bundle, rubric, concurrency=3)
    assert not res.ok
    assert [(f.item_id, f.annotator_id) for f in res.failures] == [("q1", "w2")]
    assert len(res.scores) == 4
    assert [s.key[1] for s in res.scores] == ["w0", "w1", "w3", "w4"]


def test_bundle_concurrency_preserves_order(synth, rubric):
    serial = rescale_bundle(RubricOracleBackend(), synth, rubric, concurrency=1)
    parallel = rescale_bundle(RubricOracleBackend(), synth, rubric, concurrency=8)
    assert serial.scores == parallel.scores


@given(st.integers(1, 20), st.booleans(), st.sampled_from([None, 1, 5, 7]))
def test_scores_in_range_and_extremes_fixed(deduction, extremes, q):
    from dataclasses import replace

    from ebrkit.synthetic import make_synthetic_bundle

    bundle = make_synthetic_bundle(n_docs=1, items_per_doc=3, seed=deduction)
    rubric = replace(gc.RUBRIC, per_sentence_deduction=deduction)
    res = rescale_bundle(RubricOracleBackend(), bundle, rubric, policy=RescalePolicy(extremes, quantize_to=q))
    for s in res.scores:
        assert 0 <= s.score <= 100
        if not extremes and s.label is LikertLabel.COMPLETE:
            assert s.score == 100
        if not extremes and s.label is LikertLabel.MISSING_ALL:
            assert s.score == 0
        if q and s.backend_id != "policy-endpoint" and s.score not in (0, 100):
            assert s.score % q == 0
