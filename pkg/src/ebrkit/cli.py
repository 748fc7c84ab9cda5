"""ebrkit command line.

Exit codes: 0 success, 1 validation/evaluation failure, 2 usage error,
3 backend failure. Every artifact-producing command writes
``<out stem>.manifest.json`` next to its output.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Optional

from ebrkit import __version__
from ebrkit import baselines, evaluation, io, llm_client, metrics, rescaling

log = logging.getLogger("ebrkit")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_BACKEND = 0, 1, 2, 3


class UsageError(Exception):
    pass


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def bundle_hashes(data_dir) -> dict[str, str]:
    root = Path(data_dir)
    names = (io.DOCUMENTS, io.ITEMS, io.JUDGMENTS, io.REFERENCES)
    return {n: sha256_file(root / n) for n in names if (root / n).exists()}


def manifest_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.name.split(".")[0] + ".manifest.json")


def build_manifest(argv: list[str], config: dict, inputs: dict[str, str], run_id: Optional[str]) -> dict:
    manifest = {
        "tool": "ebrkit",
        "version": __version__,
        "command": argv,
        "config": config,
        "inputs": dict(sorted(inputs.items())),
    }
    if not run_id:
        run_id = sha256_text(json.dumps(manifest, sort_keys=True))[:12]
    manifest["run_id"] = run_id
    return manifest


def write_manifest(out, manifest: dict) -> Path:
    p = manifest_path(out)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return p


def emit(args, text: str, payload) -> None:
    if args.json:
        print(json.dumps(payload, indent=2, sort_keys=True, default=str))
    else:
        print(text)


def info(args, msg: str) -> None:
    if not args.quiet:
        print(msg, file=sys.stderr)


# -- backends -------------------------------------------------------------------


def add_backend_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--rubric", required=True, help="rubric file (YAML or JSON)")
    p.add_argument("--backend", choices=("live", "oracle"), default="oracle")
    p.add_argument("--variant", choices=[v.value for v in rescaling.PromptVariant], default="with_rubric")
    p.add_argument("--rescale-extremes", action="store_true")
    p.add_argument("--quantize", type=int, default=None, metavar="N")
    p.add_argument("--concurrency", type=int, default=1)
    p.add_argument("--templates", default=None, help="directory with prompt templates")
    g = p.add_argument_group("live backend")
    g.add_argument("--base-url", default=llm_client.BackendConfig.base_url)
    g.add_argument("--model", default=llm_client.BackendConfig.model_name)
    g.add_argument("--temperature", type=float, default=0.0)
    g.add_argument("--max-tokens", type=int, default=llm_client.BackendConfig.max_response_tokens)
    g.add_argument("--timeout", type=float, default=llm_client.BackendConfig.timeout)
    g.add_argument("--max-retries", type=int, default=llm_client.BackendConfig.max_retries)
    g.add_argument("--cache-dir", default=llm_client.BackendConfig.cache_dir)
    g.add_argument("--api-key-env", default=llm_client.BackendConfig.api_key_env)


def make_backend(args):
    if args.concurrency < 1:
        raise UsageError("--concurrency must be >= 1")
    if args.backend == "oracle":
        return rescaling.RubricOracleBackend(), None
    config = llm_client.BackendConfig(
        base_url=args.base_url,
        model_name=args.model,
        temperature=args.temperature,
        max_response_tokens=args.max_tokens,
        timeout=args.timeout,
        max_retries=args.max_retries,
        concurrency_limit=args.concurrency,
        cache_dir=args.cache_dir,
        api_key_env=args.api_key_env,
    )
    backend = llm_client.LLMBackend.from_config(config)
    return backend, config


def rescale_config(args, rubric, backend, templates, backend_config) -> tuple[dict, dict]:
    tmpl = templates.template(rescaling.PromptVariant(args.variant))
    config = {
        "backend": backend.id,
        "variant": args.variant,
        "policy": {"rescale_extremes": args.rescale_extremes, "quantize_to": args.quantize},
        "rubric_sha256": sha256_text(json.dumps(io.rubric_to_dict(rubric), sort_keys=True)),
        "prompt_template_sha256": sha256_text(tmpl),
        "label_definitions_sha256": sha256_text(
            json.dumps({k.value: v for k, v in templates.label_definitions.items()}, sort_keys=True)
        ),
    }
    if backend_config is not None:
        config["live"] = {
            "base_url": backend_config.base_url,
            "model": backend_config.model_name,
            "temperature": backend_config.temperature,
            "max_tokens": backend_config.max_response_tokens,
        }
    inputs = {"rubric": sha256_file(args.rubric)}
    return config, inputs


def load_rubric_for(args):
    rubric = io.load_rubric(args.rubric)
    if args.backend == "oracle" and rubric.per_sentence_deduction is None:
        raise UsageError("the oracle backend needs per_sentence_deduction in the rubric")
    return rubric


# -- commands ---------------------------------------------------------------------


def cmd_validate(args) -> int:
    try:
        bundle = io.load_bundle(args.data_dir, validate=False)
    except io.BundleError as e:
        emit(args, f"error: {e}", {"ok": False, "errors": [str(e)], "warnings": []})
        return EXIT_FAIL
    report = bundle.validate()
    errors = report.errors + (report.warnings if args.strict else [])
    warnings = [] if args.strict else report.warnings
    lines = [str(i) for i in errors + warnings]
    lines.append(f"{len(errors)} error(s), {len(warnings)} warning(s), {len(bundle.judgments)} judgment(s)")
    emit(
        args,
        "\n".join(lines),
        {"ok": not errors, "errors": [str(e) for e in errors], "warnings": [str(w) for w in warnings]},
    )
    return EXIT_OK if not errors else EXIT_FAIL


def cmd_rescale(args) -> int:
    bundle = io.load_bundle(args.data_dir)
    rubric = load_rubric_for(args)
    backend, backend_config = make_backend(args)
    templates = rescaling.load_templates(args.templates)
    policy = rescaling.RescalePolicy(rescale_extremes=args.rescale_extremes, quantize_to=args.quantize)
    policy.check(rubric)
    config, inputs = rescale_config(args, rubric, backend, templates, backend_config)
    inputs.update(bundle_hashes(args.data_dir))
    manifest = build_manifest(args.argv, config, inputs, args.run_id)
    run_id = manifest["run_id"]

    result = rescaling.rescale_bundle(
        backend, bundle, rubric, args.variant, policy, run_id, args.concurrency, templates
    )
    io.save_scores(result.scores, args.out)
    write_manifest(args.out, manifest)
    sidecar = Path(args.out).with_name(Path(args.out).name.split(".")[0] + ".failures.jsonl")
    if result.failures:
        io.write_jsonl(
            sidecar,
            (
                {
                    "item_id": f.item_id,
                    "annotator": f.annotator_id,
                    "error": f"{type(f.cause).__name__}: {f.cause}",
                    "raw_response": f.raw_response,
                }
                for f in sorted(result.failures, key=lambda f: (f.item_id, f.annotator_id))
            ),
        )
    elif sidecar.exists():
        sidecar.unlink()
    if backend_config is not None:
        backend.client.cache.write_session()
        stats = llm_client.cache_stats(backend_config.cache_dir, backend.client.cache)
        info(args, f"cache: {stats['hits']} hits, {stats['misses']} misses, {stats['entries']} entries")
    emit(
        args,
        f"wrote {len(result.scores)} scores to {args.out} (run_id {run_id}); {len(result.failures)} failed",
        {"out": str(args.out), "run_id": run_id, "scores": len(result.scores), "failures": len(result.failures)},
    )
    return EXIT_OK if result.ok else EXIT_BACKEND


def _references(args, bundle):
    if getattr(args, "references", None):
        return io.load_references(args.references, bundle)
    if bundle.references is None:
        raise UsageError("no references: pass --references or add references.jsonl to the data dir")
    return bundle.references


def cmd_baseline(args) -> int:
    bundle = io.load_bundle(args.data_dir)
    inputs = bundle_hashes(args.data_dir)
    config: dict = {"method": args.method}
    summary: dict = {"method": args.method}
    if args.method == "static":
        scores_fn = lambda rid: baselines.score_static(bundle.judgments, rid)
        config["mapping"] = {k.value: v for k, v in baselines.STATIC_MAPPING.items()}
        text = "static mapping: " + ", ".join(f"{k}={v}" for k, v in config["mapping"].items())
    elif args.method == "avg-ebr":
        if not args.ebr_scores:
            raise UsageError("--method avg-ebr needs --ebr-scores")
        ebr = io.load_scores(args.ebr_scores, bundle)
        mapping = baselines.fit_avg_ebr_mapping(ebr, strict=not args.allow_nonmonotone)
        inputs["ebr_scores"] = sha256_file(args.ebr_scores)
        config["mapping"] = {k.value: v for k, v in mapping.values.items()}
        summary["mapping"] = mapping.rounded(1)
        scores_fn = lambda rid: [baselines.apply_mapping(mapping, j, run_id=rid) for j in bundle.judgments]
        text = "avg-ebr mapping: " + ", ".join(f"{k}={v:.1f}" for k, v in mapping.rounded(1).items())
    else:
        if args.optimize_deduction:
            refs = _references(args, bundle)
            if args.references:
                inputs["references"] = sha256_file(args.references)
            d, best = baselines.optimize_msh_deduction(
                bundle.judgments, refs, range(args.search_min, args.search_max + 1)
            )
            summary["mae"] = best
            text = f"msh deduction {d} (optimized, MAE {best:.2f})"
        else:
            d = args.deduction
            text = f"msh deduction {d}"
        config["deduction"] = d
        summary["deduction"] = d
        scores_fn = lambda rid: baselines.score_msh(bundle.judgments, d, rid)
    manifest = build_manifest(args.argv, config, inputs, args.run_id)
    scores = scores_fn(manifest["run_id"])
    io.save_scores(scores, args.out)
    write_manifest(args.out, manifest)
    summary.update(out=str(args.out), scores=len(scores), run_id=manifest["run_id"])
    emit(args, f"{text}\nwrote {len(scores)} scores to {args.out}", summary)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    bundle = io.load_bundle(args.data_dir)
    refs = _references(args, bundle)
    slices = [s.strip() for s in args.slices.split(",") if s.strip()]
    reports = []
    scatter = []
    for path in args.scores:
        scores = io.load_scores(path, bundle)
        by_method: dict[str, list] = {}
        for s in scores:
            by_method.setdefault(s.method, []).append(s)
        for method in sorted(by_method):
            reports.append(evaluation.evaluate_against_reference(by_method[method], refs, slices, method))
            scatter += evaluation.scatter_records(by_method[method], refs)
    records = [r for rep in reports for r in rep.records()]
    if args.out:
        io.write_jsonl(args.out, records)
        inputs = {f"scores:{Path(p).name}": sha256_file(p) for p in args.scores}
        inputs.update(bundle_hashes(args.data_dir))
        write_manifest(args.out, build_manifest(args.argv, {"slices": slices}, inputs, args.run_id))
    if args.scatter_out:
        io.write_jsonl(args.scatter_out, scatter)
    emit(args, evaluation.render_eval_table(reports), records)
    return EXIT_OK


def cmd_agreement(args) -> int:
    bundle = io.load_bundle(args.data_dir)
    records = []
    pre = metrics.pairwise_aggregate_tau(evaluation.label_rank_scores(bundle.judgments), args.min_overlap)
    records.append(_agg_record("original_labels", pre))
    loaded = []
    for path in args.scores:
        scores = io.load_scores(path, bundle)
        loaded.append((path, scores))
        keys = {s.key for s in scores}
        shift = evaluation.agreement_shift([j for j in bundle.judgments if j.key in keys], scores, args.min_overlap)
        rec = _agg_record(Path(path).name, shift.post)
        rec["labels_same_judgments"] = shift.pre.aggregate
        records.append(rec)
    if len(loaded) >= 2:
        base_path, base = loaded[0]
        base_by_key = {s.key: float(s.score) for s in base}
        for path, scores in loaded[1:]:
            pairs = [(base_by_key[s.key], float(s.score)) for s in scores if s.key in base_by_key]
            try:
                res = metrics.kendall_tau_b(*zip(*pairs)) if len(pairs) >= 2 else None
            except metrics.TauUndefined:
                res = None
            records.append(
                {
                    "variation": f"{Path(base_path).name} vs {Path(path).name}",
                    "aggregate_tau": res.tau if res else None,
                    "p_value": res.p_value if res else None,
                    "n": len(pairs),
                }
            )
    if args.out:
        io.write_jsonl(args.out, records)
        inputs = {f"scores:{Path(p).name}": sha256_file(p) for p in args.scores}
        inputs.update(bundle_hashes(args.data_dir))
        write_manifest(args.out, build_manifest(args.argv, {"min_overlap": args.min_overlap}, inputs, args.run_id))
    lines = [f"{'variation':<40} | {'tau':>6}"]
    for r in records:
        v = r["aggregate_tau"]
        lines.append(f"{r['variation']:<40} | {'-' if v is None else format(v, '.2f'):>6}")
    emit(args, "\n".join(lines), records)
    return EXIT_OK


def _agg_record(name, agg: metrics.AggregateTau) -> dict:
    return {
        "variation": name,
        "aggregate_tau": agg.aggregate,
        "aggregate_tau_undefined_as_zero": agg.aggregate_undefined_as_zero,
        "pairs_included": len(agg.included),
        "pairs_excluded": len(agg.excluded),
    }


def cmd_stability(args) -> int:
    bundle = io.load_bundle(args.data_dir)
    refs = _references(args, bundle)
    rubric = load_rubric_for(args)
    backend, backend_config = make_backend(args)
    templates = rescaling.load_templates(args.templates)
    policy = rescaling.RescalePolicy(rescale_extremes=args.rescale_extremes, quantize_to=args.quantize)
    if args.runs < 1:
        raise UsageError("--runs must be >= 1")
    config, inputs = rescale_config(args, rubric, backend, templates, backend_config)
    config["runs"] = args.runs
    inputs.update(bundle_hashes(args.data_dir))
    manifest = build_manifest(args.argv, config, inputs, args.run_id)
    report = evaluation.stability_run(
        backend, bundle, rubric, args.runs, refs, args.variant, policy,
        run_prefix=manifest["run_id"], concurrency=args.concurrency,
    )
    records = report.records()
    if args.out:
        io.write_jsonl(args.out, records)
        write_manifest(args.out, manifest)
    emit(args, evaluation.render_stability_table(report), records)
    return EXIT_BACKEND if any(r.n_failed for r in report.rows) else EXIT_OK


def cmd_cache_stats(args) -> int:
    stats = llm_client.cache_stats(args.cache_dir)
    emit(args, " ".join(f"{k}={v}" for k, v in stats.items()), stats)
    return EXIT_OK


# -- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    def global_flags(suppress: bool) -> argparse.ArgumentParser:
        # subcommands repeat the global flags without defaults so they never
        # overwrite a value given before the subcommand name
        g = argparse.ArgumentParser(add_help=False)
        default = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
        g.add_argument("--data-dir", default=default("."), help="bundle directory (default: .)")
        g.add_argument("--quiet", action="store_true", default=default(False))
        g.add_argument("--json", action="store_true", default=default(False), help="machine-readable stdout")
        return g

    common = global_flags(suppress=True)
    parser = argparse.ArgumentParser(
        prog="ebrkit", description=__doc__.splitlines()[0], parents=[global_flags(suppress=False)]
    )
    parser.add_argument("--version", action="version", version=f"ebrkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", parents=[common], help="check a bundle directory")
    p.add_argument("--strict", action="store_true", help="treat warnings as errors")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("rescale", parents=[common], help="explanation-based rescaling")
    add_backend_args(p)
    p.add_argument("--run-id", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rescale)

    p = sub.add_parser("baseline", parents=[common], help="static, avg-ebr or msh scores")
    p.add_argument("--method", choices=("static", "avg-ebr", "msh"), required=True)
    p.add_argument("--deduction", type=int, default=16)
    p.add_argument("--optimize-deduction", action="store_true")
    p.add_argument("--search-min", type=int, default=0)
    p.add_argument("--search-max", type=int, default=100)
    p.add_argument("--references", default=None)
    p.add_argument("--ebr-scores", default=None)
    p.add_argument("--allow-nonmonotone", action="store_true")
    p.add_argument("--run-id", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("evaluate", parents=[common], help="tau-b and MAE against references")
    p.add_argument("--scores", action="append", required=True, help="scores.jsonl (repeatable)")
    p.add_argument("--references", default=None)
    p.add_argument("--slices", default=",".join(evaluation.DEFAULT_SLICES))
    p.add_argument("--out", default=None)
    p.add_argument("--scatter-out", default=None, help="write (reference, score) points")
    p.add_argument("--run-id", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("agreement", parents=[common], help="pairwise annotator tau before/after rescaling")
    p.add_argument("scores", nargs="*", help="scores.jsonl files to compare against the labels")
    p.add_argument("--min-overlap", type=int, default=10)
    p.add_argument("--out", default=None)
    p.add_argument("--run-id", default=None)
    p.set_defaults(func=cmd_agreement)

    p = sub.add_parser("stability", parents=[common], help="repeat rescaling and compare runs")
    add_backend_args(p)
    p.add_argument("--runs", type=int, default=4)
    p.add_argument("--references", default=None)
    p.add_argument("--run-id", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("cache-stats", parents=[common], help="response cache summary")
    p.add_argument("--cache-dir", default=llm_client.BackendConfig.cache_dir)
    p.set_defaults(func=cmd_cache_stats)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except llm_client.BackendError as e:
        print(f"backend error: {e}", file=sys.stderr)
        return EXIT_BACKEND
    except (io.BundleError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    raise SystemExit(main())
