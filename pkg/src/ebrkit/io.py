"""Line-delimited JSON storage for bundles and scores; YAML/JSON rubric files.

A bundle directory holds one entity kind per file::

    documents.jsonl   {id, split, sentences: [str]}
    items.jsonl       {id, doc_id, question, anchor, answer, system}
    judgments.jsonl   {item_id, annotator, label, correct, explanation, missing_sentences}
    references.jsonl  {item_id, annotator, expert_scores: [int]}      (optional)

Unknown extra fields are ignored; missing required fields are parse errors.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Iterator, Optional

import yaml

from ebrkit.data_model import (
    DeductionRule,
    Judgment,
    JudgmentKey,
    LikertLabel,
    QAItem,
    ReferenceScore,
    Rubric,
    ScoredJudgment,
    SentenceDocument,
    ValidationReport,
    validate_dataset,
)

log = logging.getLogger(__name__)

DOCUMENTS = "documents.jsonl"
ITEMS = "items.jsonl"
JUDGMENTS = "judgments.jsonl"
REFERENCES = "references.jsonl"


class BundleError(Exception):
    pass


class ParseError(BundleError):
    def __init__(self, path, line, message):
        self.path, self.line = Path(path), line
        super().__init__(f"{path}:{line}: {message}")


class DanglingReference(BundleError):
    """A record points at an id that does not exist."""

    def __init__(self, path, line, kind, ref_id):
        self.path, self.line, self.kind, self.ref_id = Path(path), line, kind, ref_id
        super().__init__(f"{path}:{line}: unknown {kind} id {ref_id!r}")


class ValidationError(BundleError):
    def __init__(self, report: ValidationReport):
        self.report = report
        lines = "\n".join(str(e) for e in report.errors)
        super().__init__(f"{len(report.errors)} validation error(s):\n{lines}")


@dataclass(frozen=True)
class DatasetBundle:
    documents: tuple[SentenceDocument, ...]
    items: tuple[QAItem, ...]
    judgments: tuple[Judgment, ...]
    references: Optional[tuple[ReferenceScore, ...]] = None

    def judgment_index(self) -> dict[JudgmentKey, Judgment]:
        return {j.key: j for j in self.judgments}

    def validate(self) -> ValidationReport:
        return validate_dataset(self.documents, self.items, self.judgments)

    def with_judgments(self, judgments: Iterable[Judgment]) -> "DatasetBundle":
        return DatasetBundle(self.documents, self.items, tuple(judgments), self.references)


def iter_jsonl(path) -> Iterator[tuple[int, dict[str, Any]]]:
    """Yield ``(line_number, record)``; blank lines are skipped."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as f:
        for ln, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(path, ln, f"invalid JSON: {e.msg}") from e
            if not isinstance(obj, dict):
                raise ParseError(path, ln, "record is not a JSON object")
            yield ln, obj


def write_jsonl(path, records: Iterable[dict[str, Any]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as f:
        for rec in records:
            f.write(json.dumps(rec, ensure_ascii=False, sort_keys=True))
            f.write("\n")


def _require(rec, keys, path, ln):
    missing = [k for k in keys if k not in rec]
    if missing:
        raise ParseError(path, ln, f"missing required field(s): {', '.join(missing)}")


def _typed(value, typ, name, path, ln):
    if typ is int and isinstance(value, bool) or not isinstance(value, typ):
        raise ParseError(path, ln, f"field {name!r} has wrong type {type(value).__name__}")
    return value


def _int_list(value, name, path, ln) -> list[int]:
    _typed(value, list, name, path, ln)
    return [_typed(v, int, name, path, ln) for v in value]


def load_bundle(path, format: str = "jsonl_dir", validate: bool = True) -> DatasetBundle:
    """Load a bundle directory, resolve every cross-reference and validate it.

    Raises ParseError (with line number), DanglingReference, or ValidationError.
    """
    if format != "jsonl_dir":
        raise ValueError(f"unsupported bundle format {format!r}")
    root = Path(path)
    if not root.is_dir():
        raise BundleError(f"bundle directory not found: {root}")

    docs: dict[str, SentenceDocument] = {}
    doc_list: list[SentenceDocument] = []
    p = root / DOCUMENTS
    for ln, rec in iter_jsonl(p):
        _require(rec, ("id", "sentences"), p, ln)
        sents = _typed(rec["sentences"], list, "sentences", p, ln)
        doc = SentenceDocument(
            id=str(rec["id"]),
            sentences=tuple(_typed(s, str, "sentences", p, ln) for s in sents),
            source_split=rec.get("split", "inquisitive"),
        )
        docs.setdefault(doc.id, doc)
        doc_list.append(doc)

    items: dict[str, QAItem] = {}
    item_list: list[QAItem] = []
    p = root / ITEMS
    for ln, rec in iter_jsonl(p):
        _require(rec, ("id", "doc_id", "question", "anchor", "answer"), p, ln)
        doc_id = str(rec["doc_id"])
        if doc_id not in docs:
            raise DanglingReference(p, ln, "document", doc_id)
        item = QAItem(
            id=str(rec["id"]),
            document=docs[doc_id],
            question_text=_typed(rec["question"], str, "question", p, ln),
            anchor_sentence=_typed(rec["anchor"], int, "anchor", p, ln),
            answer_text=_typed(rec["answer"], str, "answer", p, ln),
            answer_system=str(rec.get("system", "other")),
        )
        items.setdefault(item.id, item)
        item_list.append(item)

    judgments: list[Judgment] = []
    p = root / JUDGMENTS
    for ln, rec in iter_jsonl(p):
        _require(rec, ("item_id", "annotator", "label", "correct", "explanation"), p, ln)
        item_id = str(rec["item_id"])
        if item_id not in items:
            raise DanglingReference(p, ln, "item", item_id)
        try:
            label = LikertLabel(rec["label"])
        except ValueError:
            raise ParseError(p, ln, f"unknown label {rec['label']!r}") from None
        judgments.append(
            Judgment(
                item=items[item_id],
                annotator_id=str(rec["annotator"]),
                label=label,
                correctness=_typed(rec["correct"], bool, "correct", p, ln),
                explanation=_typed(rec["explanation"], str, "explanation", p, ln),
                missing_sentences=frozenset(
                    _int_list(rec.get("missing_sentences", []), "missing_sentences", p, ln)
                ),
            )
        )

    references = None
    p = root / REFERENCES
    if p.exists():
        keys = {j.key for j in judgments}
        references = []
        for ln, rec in iter_jsonl(p):
            _require(rec, ("item_id", "annotator", "expert_scores"), p, ln)
            key = (str(rec["item_id"]), str(rec["annotator"]))
            if key not in keys:
                raise DanglingReference(p, ln, "judgment", f"{key[0]}/{key[1]}")
            scores = _int_list(rec["expert_scores"], "expert_scores", p, ln)
            if not scores:
                raise ParseError(p, ln, "expert_scores is empty")
            references.append(ReferenceScore(key, tuple(scores)))
        references = tuple(references)

    bundle = DatasetBundle(
        tuple(doc_list), tuple(item_list), tuple(judgments), references
    )
    if validate:
        report = bundle.validate()
        for w in report.warnings:
            log.debug("%s", w)
        if not report.ok:
            raise ValidationError(report)
    return bundle


def document_record(doc: SentenceDocument) -> dict:
    return {"id": doc.id, "split": doc.source_split, "sentences": list(doc.sentences)}


def item_record(item: QAItem) -> dict:
    return {
        "id": item.id,
        "doc_id": item.document.id,
        "question": item.question_text,
        "anchor": item.anchor_sentence,
        "answer": item.answer_text,
        "system": item.answer_system,
    }


def judgment_record(j: Judgment) -> dict:
    return {
        "item_id": j.item.id,
        "annotator": j.annotator_id,
        "label": j.label.value,
        "correct": j.correctness,
        "explanation": j.explanation,
        "missing_sentences": sorted(j.missing_sentences),
    }


def reference_record(r: ReferenceScore) -> dict:
    return {
        "item_id": r.judgment_id[0],
        "annotator": r.judgment_id[1],
        "expert_scores": list(r.expert_scores),
    }


def save_bundle(bundle: DatasetBundle, path) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    write_jsonl(root / DOCUMENTS, map(document_record, bundle.documents))
    write_jsonl(root / ITEMS, map(item_record, bundle.items))
    write_jsonl(root / JUDGMENTS, map(judgment_record, bundle.judgments))
    if bundle.references is not None:
        write_jsonl(root / REFERENCES, map(reference_record, bundle.references))


def load_references(path, bundle: DatasetBundle) -> tuple[ReferenceScore, ...]:
    """Load a standalone references.jsonl against ``bundle``'s judgments."""
    keys = {j.key for j in bundle.judgments}
    refs = []
    for ln, rec in iter_jsonl(path):
        _require(rec, ("item_id", "annotator", "expert_scores"), path, ln)
        key = (str(rec["item_id"]), str(rec["annotator"]))
        if key not in keys:
            raise DanglingReference(path, ln, "judgment", f"{key[0]}/{key[1]}")
        refs.append(ReferenceScore(key, tuple(_int_list(rec["expert_scores"], "expert_scores", path, ln))))
    return tuple(refs)


# -- scores -----------------------------------------------------------------


def score_record(s: ScoredJudgment) -> dict:
    rec = {
        "item_id": s.judgment.item.id,
        "annotator": s.judgment.annotator_id,
        "method": s.method,
        "backend": s.backend_id,
        "run_id": s.run_id,
        "score": s.score,
    }
    if s.raw_response is not None:
        rec["raw_response"] = s.raw_response
    return rec


def _score_sort_key(s: ScoredJudgment):
    return (s.judgment.item.id, s.judgment.annotator_id, s.method)


def save_scores(scores: Iterable[ScoredJudgment], path) -> None:
    """Write one record per score, ordered by (item id, annotator id, method)."""
    write_jsonl(path, (score_record(s) for s in sorted(scores, key=_score_sort_key)))


def load_scores(path, bundle: DatasetBundle) -> list[ScoredJudgment]:
    index = bundle.judgment_index()
    out = []
    for ln, rec in iter_jsonl(path):
        _require(rec, ("item_id", "annotator", "method", "score"), path, ln)
        key = (str(rec["item_id"]), str(rec["annotator"]))
        if key not in index:
            raise DanglingReference(path, ln, "judgment", f"{key[0]}/{key[1]}")
        score = rec["score"]
        if isinstance(score, bool) or not isinstance(score, (int, float)):
            raise ParseError(path, ln, "field 'score' is not a number")
        out.append(
            ScoredJudgment(
                judgment=index[key],
                score=score,
                method=str(rec["method"]),
                backend_id=str(rec.get("backend", "none")),
                run_id=str(rec.get("run_id", "")),
                raw_response=rec.get("raw_response"),
            )
        )
    return out


# -- rubric -----------------------------------------------------------------


def rubric_to_dict(rubric: Rubric) -> dict:
    d = {
        "aspect": rubric.aspect_name,
        "definition": rubric.aspect_definition,
        "scale": [rubric.scale_min, rubric.scale_max],
        "rules": [{"desc": r.description, "points": r.points} for r in rubric.deduction_rules],
    }
    if rubric.per_sentence_deduction is not None:
        d["per_sentence_deduction"] = rubric.per_sentence_deduction
    return d


def rubric_from_dict(d: dict) -> Rubric:
    for key in ("aspect", "definition", "rules"):
        if key not in d:
            raise BundleError(f"rubric missing required field {key!r}")
    lo, hi = d.get("scale", [0, 100])
    return Rubric(
        aspect_name=str(d["aspect"]),
        aspect_definition=str(d["definition"]).strip(),
        deduction_rules=tuple(DeductionRule(str(r["desc"]), int(r["points"])) for r in d["rules"]),
        scale_min=int(lo),
        scale_max=int(hi),
        per_sentence_deduction=d.get("per_sentence_deduction"),
    )


def load_rubric(path) -> Rubric:
    """Read a rubric from YAML (or JSON, which YAML parses too)."""
    with Path(path).open("r", encoding="utf-8") as f:
        try:
            d = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise BundleError(f"{path}: cannot parse rubric: {e}") from e
    if not isinstance(d, dict):
        raise BundleError(f"{path}: rubric must be a mapping")
    return rubric_from_dict(d)


def save_rubric(rubric: Rubric, path) -> None:
    with Path(path).open("w", encoding="utf-8") as f:
        yaml.safe_dump(rubric_to_dict(rubric), f, sort_keys=False, allow_unicode=True)
