"""MAE of the missing-sentence heuristic for every deduction in a range.

Prints the curve and the argmin, and optionally writes it as JSONL for plotting.

    python3 scripts/msh_sweep.py --data-dir data/synth --max 40
"""

import argparse
import json

import numpy as np

from ebrkit.baselines import msh_score, optimize_msh_deduction
from ebrkit.io import load_bundle, load_references


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data-dir", required=True)
    ap.add_argument("--references", default=None)
    ap.add_argument("--min", type=int, default=0)
    ap.add_argument("--max", type=int, default=100)
    ap.add_argument("--out", default=None, help="optional JSONL of (deduction, mae)")
    args = ap.parse_args()

    bundle = load_bundle(args.data_dir)
    refs = load_references(args.references, bundle) if args.references else bundle.references
    if not refs:
        raise SystemExit("no references: pass --references or add references.jsonl")
    ref = {r.judgment_id: r.mean_score for r in refs}
    js = [j for j in bundle.judgments if j.key in ref]
    y = np.array([ref[j.key] for j in js])

    rows = []
    for d in range(args.min, args.max + 1):
        pred = np.array([msh_score(j, d) for j in js])
        rows.append({"deduction": d, "mae": float(np.mean(np.abs(pred - y)))})
    best, best_mae = optimize_msh_deduction(js, refs, range(args.min, args.max + 1))
    for r in rows:
        mark = "  <- best" if r["deduction"] == best else ""
        print(f"{r['deduction']:>4}  {r['mae']:8.3f}{mark}")
    print(f"best deduction {best} (MAE {best_mae:.3f}) over {len(js)} referenced judgments")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            for r in rows:
                f.write(json.dumps(r) + "\n")


if __name__ == "__main__":
    main()
