"""Command-line entry point: ``aesbo <subcommand> [--config PATH] ...``.

Exit codes: 0 on success, 2 for an invalid configuration, 1 when the
experiment itself fails (partial artifacts are still written and flagged in
the manifest).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness, objectives, oracle
from .errors import ConfigError

logger = logging.getLogger("aesbo")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aesbo", description="Information-based Bayesian optimization experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="base seed (overrides config)")
    common.add_argument("--workers", type=int, help="parallel worker processes")
    common.add_argument("--out", help="output directory")
    common.add_argument("--no-plots", action="store_true", help="skip PNG figures")
    common.add_argument("-v", "--verbose", action="store_true")
    sub.add_parser("run", parents=[common], help="regret curves for each method")
    sub.add_parser("sample-study", parents=[common], help="ensemble regret for several sample counts")
    sub.add_parser("landscape", parents=[common], help="local maxima of 1D acquisition landscapes")
    sub.add_parser("oracle-compare", parents=[common], help="approximate vs brute-force AES in 1D")
    sub.add_parser("list-objectives", help="print registered objective names")
    return p


def _write_regret_outputs(out: Path, cfg, results, title) -> list[str]:
    files = harness.write_runs(out, results)
    agg = harness.aggregate(results)
    harness.write_table(out / "aggregate.csv", harness.AGGREGATE_FIELDS, agg)
    harness.write_table(out / "final.csv", harness.FINAL_FIELDS, harness.final_rows(results))
    files += ["aggregate.csv", "final.csv"]
    if cfg.plots and agg:
        from . import plots

        plots.regret_curves(agg, out / "regret.png", title)
        files.append("regret.png")
    return files


def _failures(results) -> list[dict]:
    return [{"method": m, "num_samples": S, "rep": rep, "error": rec.error}
            for m, S, rep, rec in results if rec.failed]


def cmd_run(cfg, out: Path, sample_study: bool = False):
    if sample_study:
        results = harness.run_experiment(cfg, cfg.sample_counts)
        title = f"{cfg.objective}: sample counts {list(cfg.sample_counts)}"
    else:
        results = harness.run_experiment(cfg)
        title = cfg.objective
    files = _write_regret_outputs(out, cfg, results, title)
    failed = _failures(results)
    summary = {f"{m}|S={S}": {"mean": v[0], "stderr": v[1]}
               for (m, S), v in harness.final_summary(results).items()}
    return files, failed, {"final_regret": summary}


def cmd_landscape(cfg, out: Path):
    summary = harness.run_landscape(cfg)
    rows = harness.landscape_rows(summary)
    harness.write_table(out / "landscape_counts.csv", ("method", "rep", "count"), rows)
    agg = {m: {"mean": summary.mean(m), "stderr": summary.stderr(m), "reps": len(c)}
           for m, c in summary.counts.items()}
    (out / "landscape_summary.json").write_text(json.dumps(agg, indent=2, sort_keys=True) + "\n")
    files = ["landscape_counts.csv", "landscape_summary.json"]
    if cfg.plots:
        from . import plots

        setup = cfg.landscape_setup()
        rep = oracle.landscape(setup, cfg.rep_seed(0))
        model, _ = oracle.demo_problem(setup, cfg.rep_seed(0))
        plots.landscape_counts(rows, out / "landscape_counts.png")
        plots.landscape_example(rep.grid, rep.values_per_method, model.data.inputs, out / "landscape_example.png")
        files += ["landscape_counts.png", "landscape_example.png"]
    return files, [], {"landscape": agg}


def cmd_oracle_compare(cfg, out: Path):
    comp = oracle.oracle_compare(cfg.landscape_setup(), cfg.oracle_alphas, cfg.oracle_config(), cfg.seed)
    curves = []
    for k, label in enumerate(comp.labels):
        for j, x in enumerate(comp.grid):
            curves.append({"label": label, "x": float(x), "approximate": float(comp.approximate[j, k]),
                           "oracle": float(comp.oracle[j, k])})
    summary = [{"label": lab, "spearman": float(r), "fraction_below": float(b)}
               for lab, r, b in zip(comp.labels, comp.spearman, comp.fraction_below)]
    harness.write_table(out / "oracle_curves.csv", ("label", "x", "approximate", "oracle"), curves)
    harness.write_table(out / "oracle_summary.csv", ("label", "spearman", "fraction_below"), summary)
    files = ["oracle_curves.csv", "oracle_summary.csv"]
    if cfg.plots:
        from . import plots

        plots.oracle_curves(curves, out / "oracle_curves.png")
        files.append("oracle_curves.png")
    # Skipped solution samples are reported, not treated as a failure.
    return files, [], {"oracle": summary, "skipped_solution_samples": comp.skipped}


COMMANDS = {
    "run": lambda cfg, out: cmd_run(cfg, out),
    "sample-study": lambda cfg, out: cmd_run(cfg, out, sample_study=True),
    "landscape": cmd_landscape,
    "oracle-compare": cmd_oracle_compare,
}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "list-objectives":
        for name in objectives.list_objectives():
            print(name)
        return EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = harness.resolve_config(
            args.config, seed=args.seed, workers=args.workers, out=args.out,
            plots=False if args.no_plots else None,
        )
    except ConfigError as exc:
        print(f"aesbo: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        with np.errstate(over="ignore", under="ignore"):
            files, failed, extra = COMMANDS[args.command](cfg, out)
    except Exception as exc:  # noqa: BLE001 - any failure must still leave a manifest
        logger.exception("experiment failed")
        harness.write_manifest(out, cfg, args.command, "failed", [], {"error": f"{type(exc).__name__}: {exc}"})
        print(f"aesbo: experiment failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    status = "failed" if failed else "ok"
    harness.write_manifest(out, cfg, args.command, status, files + ["manifest.json"], {**extra, "failed_runs": failed})
    if failed:
        print(f"aesbo: {len(failed)} run(s) failed; see {out / 'manifest.json'}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"wrote {len(files) + 1} artifacts to {out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
