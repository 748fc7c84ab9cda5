"""Synthetic bundles with label-consistent missing-sentence counts.

Each item has a latent answer quality; each annotator has a leniency offset.
The label is a thresholded, noisy reading of quality + leniency, and the
number of missing sentences is drawn from the label's band:

    complete 0, missing_minor 1-2, missing_major 3-5, missing_all 6-8
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from ebrkit.data_model import Judgment, LikertLabel, QAItem, ReferenceScore, SentenceDocument
from ebrkit.io import DatasetBundle

MISSING_BANDS = {
    LikertLabel.COMPLETE: (0, 0),
    LikertLabel.MISSING_MINOR: (1, 2),
    LikertLabel.MISSING_MAJOR: (3, 5),
    LikertLabel.MISSING_ALL: (6, 8),
}

_SYSTEMS = ("davinci", "davinci_003", "gpt4", "expert_human")

_PHRASES = {
    LikertLabel.COMPLETE: ["The answer covers everything the article says about this."],
    LikertLabel.MISSING_MINOR: [
        "The answer is mostly right but leaves out a detail from sentence {s}.",
        "Good answer, though it could mention what sentence {s} adds.",
    ],
    LikertLabel.MISSING_MAJOR: [
        "The answer misses the main reasons given in sentences {s}.",
        "Only partly answers the question; sentences {s} hold the key facts.",
    ],
    LikertLabel.MISSING_ALL: [
        "The answer ignores the article entirely; see sentences {s}.",
        "Nothing relevant is said. The article answers this in sentences {s}.",
    ],
}


def label_from_quality(q: float) -> LikertLabel:
    if q < 0.25:
        return LikertLabel.MISSING_ALL
    if q < 0.45:
        return LikertLabel.MISSING_MAJOR
    if q < 0.65:
        return LikertLabel.MISSING_MINOR
    return LikertLabel.COMPLETE


def make_synthetic_bundle(
    n_docs: int = 4,
    items_per_doc: int = 6,
    annotators: Sequence[str] = ("w0", "w1", "w2", "w3", "w4"),
    annotators_per_item: Optional[int] = None,
    n_sentences: int = 36,
    n_experts: int = 3,
    reference_fraction: float = 1.0,
    seed: int = 0,
) -> DatasetBundle:
    rng = np.random.default_rng(seed)
    leniency = {a: rng.normal(0.0, 0.08) for a in annotators}
    docs, items, judgments, refs = [], [], [], []
    for d in range(n_docs):
        doc = SentenceDocument(
            id=f"doc{d:03d}",
            sentences=tuple(f"Document {d} sentence {i} states fact {d}-{i}." for i in range(1, n_sentences + 1)),
            source_split="inquisitive" if d % 2 == 0 else "extended",
        )
        docs.append(doc)
        for k in range(items_per_doc):
            anchor = int(rng.integers(1, n_sentences + 1))
            item = QAItem(
                id=f"doc{d:03d}-q{k:02d}",
                document=doc,
                question_text=f"Why does sentence {anchor} of document {d} happen?",
                anchor_sentence=anchor,
                answer_text=f"Because of fact {d}-{anchor}.",
                answer_system=_SYSTEMS[(d + k) % len(_SYSTEMS)],
            )
            items.append(item)
            quality = rng.uniform(0.0, 1.0)
            raters = list(annotators)
            if annotators_per_item is not None:
                raters = sorted(rng.choice(raters, size=annotators_per_item, replace=False).tolist())
            for a in raters:
                label = label_from_quality(quality + leniency[a] + rng.normal(0.0, 0.07))
                lo, hi = MISSING_BANDS[label]
                m = int(rng.integers(lo, hi + 1))
                missing = frozenset(int(i) for i in rng.choice(np.arange(1, n_sentences + 1), size=m, replace=False))
                phrase = _PHRASES[label][int(rng.integers(len(_PHRASES[label])))]
                explanation = phrase.format(s=", ".join(map(str, sorted(missing))) or "-")
                j = Judgment(item, a, label, bool(rng.random() < 0.7), explanation, missing)
                judgments.append(j)
                if n_experts and rng.random() < reference_fraction:
                    base = 100 - 15 * m
                    experts = tuple(
                        int(np.clip(round(base + rng.normal(0, 6)), 0, 100)) for _ in range(n_experts)
                    )
                    refs.append(ReferenceScore(j.key, experts))
    return DatasetBundle(tuple(docs), tuple(items), tuple(judgments), tuple(refs) if n_experts else None)
