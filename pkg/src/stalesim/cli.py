"""Command line entry point: ``stalesim run|sweep|verify-theorem|probe|report``."""

from __future__ import annotations

import argparse
import csv
import math
import sys
from collections import defaultdict
from pathlib import Path

from stalesim import experiment
from stalesim.config import ExperimentConfig
from stalesim.errors import ConfigError, StalesimError
from stalesim.metrics import (
    format_slowdown_csv,
    read_summary,
    write_summary_rows,
)

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DIVERGED, EXIT_INCONCLUSIVE = 0, 1, 2, 3, 4


def _err(msg):
    print(f"stalesim: {msg}", file=sys.stderr)


def _load(path) -> ExperimentConfig:
    if not Path(path).is_file():
        raise ConfigError(f"config file not found: {path}")
    return ExperimentConfig.load(path)


def _write_results(outdir: Path, results):
    """Trace files plus summary rows; returns True if any run diverged."""
    outdir.mkdir(parents=True, exist_ok=True)
    for res in results:
        res.trace.write(outdir / f"{res.trace.run_id}.jsonl")
    write_summary_rows(outdir / "summary.csv", [r.summary for r in results])
    return any(r.trace.diverged for r in results)


def cmd_run(args) -> int:
    cfg = _load(args.config)
    results = [experiment.run_single(cfg, seed) for seed in cfg.seeds]
    diverged = _write_results(cfg.outdir, results)
    for r in results:
        print(f"{r.summary.run_id} seed={r.summary.seed} batches_to_target={r.summary.row()[6]}")
    if diverged:
        _err("at least one run diverged")
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args.config)
    cells = experiment.expand_sweep(cfg)
    jobs = [(cell, seed) for _, _, cell in cells for seed in cfg.seeds]
    flat = experiment.run_cells(jobs, jobs=args.jobs)
    # single writer: results come back here before anything touches disk
    _write_results(cfg.outdir, flat)
    n = len(cfg.seeds)
    per_cell = [[r.summary for r in flat[i * n:(i + 1) * n]] for i in range(len(cells))]
    table = experiment.slowdown_table(cells, per_cell)
    (cfg.outdir / "slowdown.csv").write_text(format_slowdown_csv(table))
    print(f"{len(cells)} cells x {n} seeds -> {cfg.outdir / 'slowdown.csv'}")
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = _load(args.config)
    report, results = experiment.verify_theorem(cfg)
    cfg.outdir.mkdir(parents=True, exist_ok=True)
    for res in results:
        last = res.trace.events[-1].batches if res.trace.events else 0
        res.trace.record(last, "verification_min_sq_grad_norm", report.min_sq_grad_norm)
        res.trace.record(last, "verification_bound", report.bound)
    _write_results(cfg.outdir, results)
    text = report.to_text()
    (cfg.outdir / "verification.txt").write_text(text + "\n")
    print(text)
    return {"pass": EXIT_OK, "fail": EXIT_FAIL, "inconclusive": EXIT_INCONCLUSIVE}[report.status]


def cmd_probe(args) -> int:
    cfg = _load(args.config)
    results, rows = experiment.probe_run(cfg)
    diverged = _write_results(cfg.outdir, results)
    with open(cfg.outdir / "coherence.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "m", "cosine", "mu_k"])
        for it, m, cos, mu in rows:
            w.writerow([it, m, repr(cos), "" if math.isnan(mu) else repr(mu)])
    if rows:
        early, late = experiment.probe_phase_means(rows)
        print(f"mean cosine: first quarter {early:.4f}, last quarter {late:.4f}")
    return EXIT_DIVERGED if diverged else EXIT_OK


def cmd_report(args) -> int:
    outdir = Path(args.outdir)
    summary = outdir / "summary.csv"
    if not summary.is_file():
        raise ConfigError(f"no summary.csv in {outdir}")
    groups = defaultdict(list)
    for row in read_summary(summary):
        key = (row["workload"], row["optimizer"], int(row["workers"]), int(row["staleness"]))
        groups[key].append(row)
    print(f"{'workload':<10}{'optimizer':<10}{'P':>4}{'s':>5}{'runs':>6}{'reached':>9}{'mean_batches':>14}")
    for key in sorted(groups):
        rows = groups[key]
        hit = [int(r["batches_to_target"]) for r in rows if r["batches_to_target"] != "NotReached"]
        mean = f"{sum(hit) / len(hit):.1f}" if hit else "-"
        print(f"{key[0]:<10}{key[1]:<10}{key[2]:>4}{key[3]:>5}{len(rows):>6}{len(hit):>9}{mean:>14}")
    slowdown = outdir / "slowdown.csv"
    if slowdown.is_file():
        print()
        print(slowdown.read_text(), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stalesim", description="Simulate data-parallel training under staleness.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="one run per seed")
    p.add_argument("config")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("sweep", help="Cartesian grid of runs and a slowdown table")
    p.add_argument("config")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("verify-theorem", help="check the staleness-aware convergence bound")
    p.add_argument("config")
    p.set_defaults(func=cmd_verify)
    p = sub.add_parser("probe", help="record gradient cosine similarity during training")
    p.add_argument("config")
    p.set_defaults(func=cmd_probe)
    p = sub.add_parser("report", help="summarise an output directory")
    p.add_argument("outdir")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (StalesimError, FileNotFoundError) as exc:
        _err(str(exc))
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
