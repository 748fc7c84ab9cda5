"""Explanation-based rescaling: prompt construction, score parsing, dispatch.

A judgment (Likert label + explanation + missing sentences) is rendered into a
prompt, sent to a ``ScoringBackend``, and the reply is parsed into an integer
on the rubric scale. Judgments with extreme labels are by default assigned
fixed endpoint scores without calling the backend.
"""

from __future__ import annotations

import enum
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Union

import yaml

from ebrkit.data_model import Judgment, LikertLabel, Method, Rubric, ScoredJudgment

log = logging.getLogger(__name__)

NONE_MARKER = "none"


class PromptVariant(str, enum.Enum):
    WITH_RUBRIC = "with_rubric"
    WITHOUT_RUBRIC = "without_rubric"

    @property
    def method(self) -> str:
        return Method.EBR.value if self is PromptVariant.WITH_RUBRIC else Method.EBR_NO_RUBRIC.value


@dataclass(frozen=True)
class RescalePolicy:
    rescale_extremes: bool = False
    complete_score: int = 100
    missing_all_score: int = 0
    quantize_to: Optional[int] = None

    def __post_init__(self):
        if self.quantize_to is not None and self.quantize_to <= 0:
            raise ValueError("quantize_to must be a positive integer")

    def check(self, rubric: Rubric) -> None:
        for name in ("complete_score", "missing_all_score"):
            v = getattr(self, name)
            if not rubric.scale_min <= v <= rubric.scale_max:
                raise ValueError(f"{name}={v} outside rubric scale {rubric.scale}")


# -- templates ----------------------------------------------------------------


@dataclass(frozen=True)
class PromptTemplates:
    with_rubric: str
    without_rubric: str
    label_definitions: dict

    def template(self, variant: PromptVariant) -> str:
        return self.with_rubric if variant is PromptVariant.WITH_RUBRIC else self.without_rubric


TEMPLATE_FILES = {
    "with_rubric": "ebr_with_rubric.txt",
    "without_rubric": "ebr_without_rubric.txt",
    "label_definitions": "label_definitions.yaml",
}


def load_templates(directory: Optional[Union[str, Path]] = None) -> PromptTemplates:
    """Load prompt templates from ``directory`` or from the packaged defaults."""
    if directory is None:
        root = resources.files("ebrkit") / "templates"
    else:
        root = Path(directory)

    def read(name):
        return (root / TEMPLATE_FILES[name]).read_text(encoding="utf-8")

    defs = yaml.safe_load(read("label_definitions"))
    missing = [lab.value for lab in LikertLabel if lab.value not in defs]
    if missing:
        raise ValueError(f"label definitions missing for: {', '.join(missing)}")
    return PromptTemplates(
        with_rubric=read("with_rubric").rstrip("\n"),
        without_rubric=read("without_rubric").rstrip("\n"),
        label_definitions={LikertLabel(k): str(v).strip() for k, v in defs.items()},
    )


_DEFAULT_TEMPLATES: Optional[PromptTemplates] = None


def default_templates() -> PromptTemplates:
    global _DEFAULT_TEMPLATES
    if _DEFAULT_TEMPLATES is None:
        _DEFAULT_TEMPLATES = load_templates()
    return _DEFAULT_TEMPLATES


def render_article(sentences: Iterable[str]) -> str:
    return "\n".join(f"{i}. {s}" for i, s in enumerate(sentences, start=1))


def render_rubric(rubric: Rubric) -> str:
    lines = [f"Scoring rubric: start from {rubric.scale_max} points and apply these deductions."]
    lines += [f"- {r.description}: deduct {r.points} points" for r in rubric.deduction_rules]
    return "\n".join(lines)


def render_missing(missing: Iterable[int]) -> str:
    missing = sorted(missing)
    return ", ".join(map(str, missing)) if missing else NONE_MARKER


def build_rescale_prompt(
    judgment: Judgment,
    rubric: Rubric,
    variant: PromptVariant = PromptVariant.WITH_RUBRIC,
    templates: Optional[PromptTemplates] = None,
) -> str:
    templates = templates or default_templates()
    variant = PromptVariant(variant)
    item = judgment.item
    fields = {
        "aspect": rubric.aspect_name,
        "aspect_definition": rubric.aspect_definition,
        "scale_min": rubric.scale_min,
        "scale_max": rubric.scale_max,
        "article": render_article(item.document.sentences),
        "question": item.question_text,
        "answer": item.answer_text,
        "feedback": judgment.explanation,
        "missing_sentences": render_missing(judgment.missing_sentences),
        "label_definition": templates.label_definitions[judgment.label],
        "rubric": render_rubric(rubric) if variant is PromptVariant.WITH_RUBRIC else "",
    }
    return templates.template(variant).format_map(fields)


# -- parsing ------------------------------------------------------------------


class NoScoreFound(ValueError):
    def __init__(self, text: str, scale: tuple[int, int]):
        self.text = text
        self.scale = scale
        super().__init__(f"no integer within {scale[0]}..{scale[1]} in backend response")


_INT = re.compile(r"(?<!\d)\d+(?!\d)")


def parse_score(response_text: str, scale: tuple[int, int] = (0, 100)) -> int:
    """Return the last standalone integer in ``response_text`` inside ``scale``.

    A denominator restating the scale maximum ("70/100", "70 out of 100") is
    not taken as the score.
    """
    lo, hi = scale
    denominator = re.compile(rf"(?:/|\bout\s+of)\s*{hi}(?!\d)", re.IGNORECASE)
    text = denominator.sub(" ", response_text)
    for m in reversed(list(_INT.finditer(text))):
        v = int(m.group())
        if lo <= v <= hi:
            return v
    raise NoScoreFound(response_text, scale)


def quantize(score: int, step: int) -> int:
    """Round to the nearest multiple of ``step``; exact halves round up."""
    return (2 * score + step) // (2 * step) * step


# -- backends -----------------------------------------------------------------


class ScoringBackend:
    """Something that turns a rescaling prompt into response text.

    ``judgment`` and ``rubric`` are passed alongside the prompt so offline
    stand-ins can score without an LLM; live backends only use ``prompt``.
    """

    id: str = "backend"
    deterministic: bool = False

    def respond(self, prompt: str, judgment: Judgment, rubric: Rubric) -> str:
        raise NotImplementedError

    def isolated(self, run_id: str) -> "ScoringBackend":
        """A backend for one stability run: no cached replies are reused."""
        return self


def rubric_oracle_score(judgment: Judgment, rubric: Rubric) -> int:
    """Deterministic stand-in: deduct a fixed amount per missing sentence."""
    if rubric.per_sentence_deduction is None:
        raise ValueError("rubric has no per_sentence_deduction; the oracle backend needs one")
    raw = rubric.scale_max - rubric.per_sentence_deduction * judgment.n_missing
    return max(rubric.scale_min, min(rubric.scale_max, raw))


class RubricOracleBackend(ScoringBackend):
    id = "rubric-oracle"
    deterministic = True

    def respond(self, prompt, judgment, rubric):
        return f"Score: {rubric_oracle_score(judgment, rubric)}"


# -- dispatch -----------------------------------------------------------------


class RescaleError(Exception):
    """A single judgment could not be rescaled."""

    def __init__(self, item_id: str, annotator_id: str, cause: BaseException, raw_response=None):
        self.item_id = item_id
        self.annotator_id = annotator_id
        self.cause = cause
        self.raw_response = raw_response
        super().__init__(f"({item_id}, {annotator_id}): {type(cause).__name__}: {cause}")


def rescale_judgment(
    backend: ScoringBackend,
    judgment: Judgment,
    rubric: Rubric,
    variant: PromptVariant = PromptVariant.WITH_RUBRIC,
    policy: RescalePolicy = RescalePolicy(),
    run_id: str = "",
    templates: Optional[PromptTemplates] = None,
) -> ScoredJudgment:
    variant = PromptVariant(variant)
    policy.check(rubric)
    if not policy.rescale_extremes and judgment.label.is_extreme:
        score = (
            policy.complete_score
            if judgment.label is LikertLabel.COMPLETE
            else policy.missing_all_score
        )
        return ScoredJudgment(judgment, score, variant.method, "policy-endpoint", run_id, None)

    prompt = build_rescale_prompt(judgment, rubric, variant, templates)
    try:
        text = backend.respond(prompt, judgment, rubric)
    except Exception as e:
        raise RescaleError(judgment.item.id, judgment.annotator_id, e) from e
    try:
        score = parse_score(text, rubric.scale)
    except NoScoreFound as e:
        raise RescaleError(judgment.item.id, judgment.annotator_id, e, raw_response=text) from e
    if policy.quantize_to:
        score = max(rubric.scale_min, min(rubric.scale_max, quantize(score, policy.quantize_to)))
    return ScoredJudgment(judgment, score, variant.method, backend.id, run_id, text)


@dataclass
class RescaleResult:
    scores: list[ScoredJudgment] = field(default_factory=list)
    failures: list[RescaleError] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def rescale_bundle(
    backend: ScoringBackend,
    judgments,
    rubric: Rubric,
    variant: PromptVariant = PromptVariant.WITH_RUBRIC,
    policy: RescalePolicy = RescalePolicy(),
    run_id: str = "",
    concurrency: int = 1,
    templates: Optional[PromptTemplates] = None,
) -> RescaleResult:
    """Rescale every judgment; failures are collected rather than raised.

    ``judgments`` may be a ``DatasetBundle`` or any iterable of judgments.
    Scores come back in input order regardless of ``concurrency``.
    """
    if hasattr(judgments, "judgments"):
        judgments = judgments.judgments
    judgments = list(judgments)
    policy.check(rubric)
    templates = templates or default_templates()

    def one(j):
        try:
            return rescale_judgment(backend, j, rubric, variant, policy, run_id, templates)
        except RescaleError as e:
            return e

    if concurrency > 1:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            outcomes = list(pool.map(one, judgments))
    else:
        outcomes = [one(j) for j in judgments]

    result = RescaleResult()
    for o in outcomes:
        (result.failures if isinstance(o, RescaleError) else result.scores).append(o)
    if result.failures:
        log.warning("%d of %d judgments failed to rescale", len(result.failures), len(judgments))
    return result
