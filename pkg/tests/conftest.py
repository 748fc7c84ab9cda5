import os

import hypothesis
import pytest

from ebrkit.data_model import DeductionRule, Judgment, LikertLabel, QAItem, Rubric, SentenceDocument
from ebrkit.io import DatasetBundle, save_bundle
from ebrkit.synthetic import make_synthetic_bundle

hypothesis.settings.register_profile("ci", max_examples=200, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=25, deadline=None)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))


@pytest.fixture
def doc():
    return SentenceDocument(
        "d1",
        tuple(f"Sentence number {i} of the article." for i in range(1, 38)),
        "inquisitive",
    )


@pytest.fixture
def item(doc):
    return QAItem("q1", doc, "Why did the council vote?", 3, "Because of the budget.", "gpt4")


def make_judgment(item, annotator="w0", label=LikertLabel.MISSING_MINOR, missing=(), explanation="Misses a detail."):
    return Judgment(item, annotator, label, True, explanation, frozenset(missing))


@pytest.fixture
def tiny_bundle(doc, item):
    labels = [
        LikertLabel.COMPLETE,
        LikertLabel.MISSING_MINOR,
        LikertLabel.MISSING_MAJOR,
        LikertLabel.MISSING_ALL,
        LikertLabel.MISSING_MINOR,
    ]
    missing = [(), (5,), (4, 7, 8), (1, 2, 3, 4, 5, 6), (9, 12)]
    js = tuple(
        make_judgment(item, f"w{i}", lab, m, f"Explanation {i}: see sentences {list(m)}.")
        for i, (lab, m) in enumerate(zip(labels, missing))
    )
    return DatasetBundle((doc,), (item,), js, None)


@pytest.fixture
def rubric():
    return Rubric(
        aspect_name="completeness",
        aspect_definition="A complete answer uses every relevant fact from the article.",
        deduction_rules=(
            DeductionRule("Missing a minor supporting detail", 10),
            DeductionRule("Missing a main reason", 30),
        ),
        per_sentence_deduction=16,
    )


@pytest.fixture(scope="session")
def synth():
    return make_synthetic_bundle(n_docs=6, items_per_doc=6, seed=7)


@pytest.fixture
def synth_dir(tmp_path, synth):
    d = tmp_path / "data"
    save_bundle(synth, d)
    return d


# -- acceptance reporting ----------------------------------------------------------

_ACCEPTANCE = pytest.StashKey[list]()


class _Criterion:
    def __init__(self, lines, number, title):
        self.lines, self.number, self.title = lines, number, title
        self.details = []

    def __call__(self, detail):
        self.details.append(str(detail))

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            status = "PASS"
        elif issubclass(exc_type, pytest.skip.Exception):
            status = "SKIP"
            self.details.append(str(exc.msg if hasattr(exc, "msg") else exc))
        else:
            status = "FAIL"
            self.details.append(f"{exc_type.__name__}: {str(exc).splitlines()[0] if str(exc) else ''}")
        line = f"criterion {self.number} {status}: {self.title}"
        if self.details:
            line += " [" + "; ".join(self.details) + "]"
        self.lines.append(line)
        print(line)
        return False


@pytest.fixture
def acceptance(request):
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])
    return lambda number, title: _Criterion(lines, number, title)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
