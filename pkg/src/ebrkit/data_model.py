"""Typed records for documents, QA items, judgments, rubrics and scores.

All records are frozen dataclasses. Cross-object invariants (sentence bounds,
uniqueness of annotator/item pairs) are not enforced at construction time;
``validate_dataset`` reports them so a whole dataset can be checked in one pass.
Sentence indices are 1-based everywhere outside ``SentenceDocument.sentence``.
"""

from __future__ import annotations

import enum
import functools
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional

KNOWN_SYSTEMS = ("davinci", "davinci_003", "gpt4", "expert_human")
SPLITS = ("inquisitive", "extended")

JudgmentKey = tuple[str, str]  # (item_id, annotator_id)


@functools.total_ordering
class LikertLabel(enum.Enum):
    MISSING_ALL = "missing_all"
    MISSING_MAJOR = "missing_major"
    MISSING_MINOR = "missing_minor"
    COMPLETE = "complete"

    @property
    def rank(self) -> int:
        """Position in the completeness order, 0 (missing_all) to 3 (complete)."""
        return _LABEL_RANK[self]

    def __lt__(self, other):
        if not isinstance(other, LikertLabel):
            return NotImplemented
        return self.rank < other.rank

    @property
    def is_extreme(self) -> bool:
        return self in (LikertLabel.COMPLETE, LikertLabel.MISSING_ALL)

    @classmethod
    def ordered(cls) -> list["LikertLabel"]:
        return sorted(cls)


_LABEL_RANK = {
    LikertLabel.MISSING_ALL: 0,
    LikertLabel.MISSING_MAJOR: 1,
    LikertLabel.MISSING_MINOR: 2,
    LikertLabel.COMPLETE: 3,
}


class Method(str, enum.Enum):
    EBR = "ebr"
    EBR_NO_RUBRIC = "ebr_no_rubric"
    STATIC = "static"
    AVG_EBR = "avg_ebr"
    MSH = "msh"
    REFERENCE = "reference"
    ORACLE = "oracle"


@dataclass(frozen=True)
class SentenceDocument:
    id: str
    sentences: tuple[str, ...]
    source_split: str = "inquisitive"

    def __post_init__(self):
        object.__setattr__(self, "sentences", tuple(self.sentences))

    def __len__(self):
        return len(self.sentences)

    def sentence(self, index: int) -> str:
        """Return sentence ``index`` (1-based)."""
        if not 1 <= index <= len(self.sentences):
            raise IndexError(f"sentence {index} out of range 1..{len(self.sentences)}")
        return self.sentences[index - 1]


@dataclass(frozen=True)
class QAItem:
    id: str
    document: SentenceDocument
    question_text: str
    anchor_sentence: int
    answer_text: str
    answer_system: str = "other"


@dataclass(frozen=True)
class Judgment:
    item: QAItem
    annotator_id: str
    label: LikertLabel
    correctness: bool
    explanation: str
    missing_sentences: frozenset[int] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "missing_sentences", frozenset(self.missing_sentences))
        if not isinstance(self.label, LikertLabel):
            object.__setattr__(self, "label", LikertLabel(self.label))

    @property
    def key(self) -> JudgmentKey:
        return (self.item.id, self.annotator_id)

    @property
    def n_missing(self) -> int:
        return len(self.missing_sentences)


@dataclass(frozen=True)
class DeductionRule:
    description: str
    points: int


@dataclass(frozen=True)
class Rubric:
    aspect_name: str
    aspect_definition: str
    deduction_rules: tuple[DeductionRule, ...] = ()
    scale_min: int = 0
    scale_max: int = 100
    per_sentence_deduction: Optional[int] = None

    def __post_init__(self):
        rules = tuple(
            r if isinstance(r, DeductionRule) else DeductionRule(*r) for r in self.deduction_rules
        )
        object.__setattr__(self, "deduction_rules", rules)
        if self.scale_min >= self.scale_max:
            raise ValueError(f"scale_min {self.scale_min} must be < scale_max {self.scale_max}")
        span = self.scale_max - self.scale_min
        for rule in rules:
            if not 0 <= rule.points <= span:
                raise ValueError(f"deduction {rule.points} for {rule.description!r} outside 0..{span}")
        if self.per_sentence_deduction is not None and self.per_sentence_deduction < 0:
            raise ValueError("per_sentence_deduction must be non-negative")

    @property
    def scale(self) -> tuple[int, int]:
        return (self.scale_min, self.scale_max)


@dataclass(frozen=True)
class ScoredJudgment:
    """A judgment mapped onto the rubric scale.

    ``score`` is an integer for LLM/oracle/static/MSH methods and a real number
    for label-mean mappings (Avg-EBR) and reference means.
    """

    judgment: Judgment
    score: float
    method: str
    backend_id: str = "none"
    run_id: str = ""
    raw_response: Optional[str] = None

    @property
    def key(self) -> JudgmentKey:
        return self.judgment.key

    @property
    def label(self) -> LikertLabel:
        return self.judgment.label


@dataclass(frozen=True)
class ReferenceScore:
    judgment_id: JudgmentKey
    expert_scores: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "judgment_id", tuple(self.judgment_id))
        object.__setattr__(self, "expert_scores", tuple(self.expert_scores))
        if not self.expert_scores:
            raise ValueError(f"reference {self.judgment_id} has no expert scores")

    @property
    def mean_score(self) -> float:
        return sum(self.expert_scores) / len(self.expert_scores)


@dataclass(frozen=True)
class Issue:
    severity: str  # "error" | "warning"
    location: str
    message: str

    def __str__(self):
        return f"{self.severity}: {self.location}: {self.message}"


@dataclass
class ValidationReport:
    issues: list[Issue] = field(default_factory=list)

    @property
    def errors(self) -> list[Issue]:
        return [i for i in self.issues if i.severity == "error"]

    @property
    def warnings(self) -> list[Issue]:
        return [i for i in self.issues if i.severity == "warning"]

    @property
    def ok(self) -> bool:
        return not self.errors

    def error(self, location, message):
        self.issues.append(Issue("error", location, message))

    def warn(self, location, message):
        self.issues.append(Issue("warning", location, message))


def validate_dataset(
    documents: Iterable[SentenceDocument],
    items: Iterable[QAItem],
    judgments: Iterable[Judgment],
) -> ValidationReport:
    """Check every type invariant and return the violations as report entries."""
    report = ValidationReport()
    documents, items, judgments = list(documents), list(items), list(judgments)

    for doc_id, n in Counter(d.id for d in documents).items():
        if n > 1:
            report.error(f"document {doc_id}", "duplicate document id")
    for doc in documents:
        loc = f"document {doc.id}"
        if not doc.sentences:
            report.error(loc, "document has no sentences")
        for i, s in enumerate(doc.sentences, start=1):
            if not s.strip():
                report.error(loc, f"sentence {i} is empty")
        if doc.source_split not in SPLITS:
            report.warn(loc, f"unknown split {doc.source_split!r}")

    for item_id, n in Counter(it.id for it in items).items():
        if n > 1:
            report.error(f"item {item_id}", "duplicate item id")
    for item in items:
        loc = f"item {item.id}"
        n_sent = len(item.document.sentences)
        if not 1 <= item.anchor_sentence <= n_sent:
            report.error(loc, f"anchor sentence {item.anchor_sentence} out of bounds 1..{n_sent}")
        if not item.answer_text.strip():
            report.error(loc, "answer text is empty")

    if not judgments:
        report.warn("dataset", "no judgments")
    seen: set[JudgmentKey] = set()
    for j in judgments:
        loc = f"judgment ({j.item.id}, {j.annotator_id})"
        if j.key in seen:
            report.error(loc, "duplicate judgment")
        seen.add(j.key)
        n_sent = len(j.item.document.sentences)
        bad = sorted(i for i in j.missing_sentences if not 1 <= i <= n_sent)
        for i in bad:
            report.error(loc, f"missing sentence index {i} out of bounds 1..{n_sent}")
        if j.label is LikertLabel.COMPLETE and j.missing_sentences:
            report.warn(loc, "label 'complete' but missing sentences listed")
    return report
