"""Write a synthetic bundle (documents, items, judgments, references) plus a rubric.

    python3 scripts/make_synthetic_data.py --out data/synth --docs 8 --seed 0
"""

import argparse
import shutil
from importlib import resources
from pathlib import Path

from ebrkit.io import load_bundle, save_bundle
from ebrkit.synthetic import make_synthetic_bundle


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True)
    ap.add_argument("--docs", type=int, default=8)
    ap.add_argument("--items-per-doc", type=int, default=6)
    ap.add_argument("--annotators", type=int, default=5)
    ap.add_argument("--experts", type=int, default=3)
    ap.add_argument("--reference-fraction", type=float, default=1.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    bundle = make_synthetic_bundle(
        n_docs=args.docs,
        items_per_doc=args.items_per_doc,
        annotators=[f"w{i}" for i in range(args.annotators)],
        n_experts=args.experts,
        reference_fraction=args.reference_fraction,
        seed=args.seed,
    )
    out = Path(args.out)
    save_bundle(bundle, out)
    shutil.copyfile(resources.files("ebrkit") / "templates" / "example_rubric.yaml", out / "rubric.yaml")
    report = load_bundle(out).validate()
    print(
        f"{out}: {len(bundle.documents)} documents, {len(bundle.items)} items, "
        f"{len(bundle.judgments)} judgments, {len(bundle.references or ())} references; "
        f"{len(report.errors)} errors, {len(report.warnings)} warnings"
    )


if __name__ == "__main__":
    main()
