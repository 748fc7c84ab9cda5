"""Run the full rescaling study on a bundle directory through the ebrkit CLI.

Steps: validate, rescale (with and without rubric), static / MSH / Avg-EBR
baselines, evaluation table, annotator agreement before and after rescaling,
and a stability run. Every artifact and its manifest lands in --out.

    python3 scripts/run_pipeline.py --data-dir data/synth --out runs/synth
    python3 scripts/run_pipeline.py --data-dir data/real --out runs/live \\
        --backend live --model gpt-4-0613 --concurrency 4
"""

import argparse
import sys
from pathlib import Path

from ebrkit import cli


def step(name, argv):
    print(f"\n== {name}: ebrkit {' '.join(argv)}", flush=True)
    code = cli.main(argv)
    if code != 0:
        sys.exit(f"{name} failed with exit code {code}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data-dir", required=True)
    ap.add_argument("--out", required=True)
    ap.add_argument("--rubric", default=None, help="default: <data-dir>/rubric.yaml")
    ap.add_argument("--backend", choices=("oracle", "live"), default="oracle")
    ap.add_argument("--model", default=None)
    ap.add_argument("--base-url", default=None)
    ap.add_argument("--cache-dir", default=None)
    ap.add_argument("--concurrency", type=int, default=4)
    ap.add_argument("--runs", type=int, default=4)
    ap.add_argument("--min-overlap", type=int, default=10)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rubric = args.rubric or str(Path(args.data_dir) / "rubric.yaml")
    g = ["--data-dir", args.data_dir, "--quiet"]
    backend = ["--rubric", rubric, "--backend", args.backend, "--concurrency", str(args.concurrency)]
    for flag, value in (("--model", args.model), ("--base-url", args.base_url), ("--cache-dir", args.cache_dir)):
        if value:
            backend += [flag, value]

    step("validate", g + ["validate"])
    step("ebr", g + ["rescale", *backend, "--out", str(out / "ebr.jsonl")])
    step("ebr without rubric", g + ["rescale", *backend, "--variant", "without_rubric",
                                    "--out", str(out / "ebr_no_rubric.jsonl")])
    step("static", g + ["baseline", "--method", "static", "--out", str(out / "static.jsonl")])
    step("msh", g + ["baseline", "--method", "msh", "--optimize-deduction", "--out", str(out / "msh.jsonl")])
    step("avg-ebr", g + ["baseline", "--method", "avg-ebr", "--ebr-scores", str(out / "ebr.jsonl"),
                         "--allow-nonmonotone", "--out", str(out / "avg_ebr.jsonl")])
    scores = ["static", "avg_ebr", "msh", "ebr_no_rubric", "ebr"]
    step("evaluate", g + ["evaluate", *[a for s in scores for a in ("--scores", str(out / f"{s}.jsonl"))],
                          "--out", str(out / "eval.jsonl"), "--scatter-out", str(out / "scatter.jsonl")])
    step("agreement", g + ["agreement", str(out / "ebr.jsonl"), str(out / "ebr_no_rubric.jsonl"),
                           "--min-overlap", str(args.min_overlap), "--out", str(out / "agreement.jsonl")])
    step("stability", g + ["stability", *backend, "--runs", str(args.runs), "--out", str(out / "stability.jsonl")])
    print(f"\nartifacts in {out}")


if __name__ == "__main__":
    main()
