"""Run configurations: single runs, sweeps, coherence probes and bound verification."""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from stalesim import coherence
from stalesim.config import (
    ExperimentConfig,
    build_delay,
    build_optimizer,
    build_target,
    build_workload,
)
from stalesim.errors import ConfigError, MissingBaseline
from stalesim.metrics import (
    NOT_REACHED,
    RunSummary,
    RunTrace,
    SlowdownRow,
    detect_convergence,
    normalize_slowdown,
)
from stalesim.simcore import simulate, spawn_streams


@dataclass
class RunResult:
    trace: RunTrace
    summary: RunSummary


def _summarize(cfg: ExperimentConfig, seed: int, trace: RunTrace, workload) -> RunSummary:
    target = build_target(cfg)
    btt = NOT_REACHED
    # diverged runs count as not reached so sweeps report them as omitted
    if target is not None and not trace.diverged:
        btt = detect_convergence(trace, target, sustained=int(cfg.target.get("sustained", 1)))
    return RunSummary(
        run_id=trace.run_id,
        workload=cfg.kind,
        optimizer=cfg.optimizer.get("kind", "sgd"),
        staleness=cfg.staleness,
        workers=cfg.workers,
        seed=seed,
        batches_to_target=btt,
        final_metric=trace.final(workload.metric),
        fingerprint=cfg.fingerprint(),
    )


def probe_subset(cfg: ExperimentConfig, workload, seed: int):
    size = int(cfg.probe.get("subset", 1000))
    rng = np.random.default_rng([seed, 0x5EED])
    return coherence.choose_subset(workload.n_items(), size, rng)


def run_single(cfg: ExperimentConfig, seed: int, probe: bool = False, optimizer=None) -> RunResult:
    workload = build_workload(cfg)
    hooks = ()
    if probe:
        if not workload.supports_probe:
            raise ConfigError(f"workload {cfg.kind!r} has no gradient to probe")
        hooks = (
            coherence.CoherenceProbe(
                workload,
                probe_subset(cfg, workload, seed),
                interval=int(cfg.probe.get("interval", 50)),
                window=int(cfg.probe.get("window", max(cfg.staleness, 1))),
                max_lag=int(cfg.probe.get("lags", 10)),
            ),
        )
    trace = simulate(
        workload,
        optimizer if optimizer is not None else build_optimizer(cfg),
        build_delay(cfg),
        workers=cfg.workers,
        seed=seed,
        budget=cfg.budget,
        batch_size=cfg.batch_size,
        target=build_target(cfg),
        eval_interval=cfg.eval_interval,
        stop_at_target=bool(cfg.run.get("stop_at_target", True)),
        run_id=cfg.run_id(seed),
        hooks=hooks,
        record_batch_loss=bool(cfg.run.get("record_batch_loss", False)),
    )
    trace.state = None
    return RunResult(trace, _summarize(cfg, seed, trace, workload))


def expand_sweep(cfg: ExperimentConfig):
    """Cartesian product of the sweep axes as ``(group_label, staleness, cell_config)``.

    The group label names every axis except staleness, so each group is one
    curve of slowdown against staleness.
    """
    axes = {
        "workers": cfg.sweep.get("workers", [cfg.workers]),
        "optimizer": cfg.sweep.get("optimizer", [cfg.optimizer.get("kind", "sgd")]),
        "depth": cfg.sweep.get("depth", [cfg.workload.get("depth")]),
    }
    stalenesses = cfg.sweep.get("staleness", [cfg.staleness])
    cells = []
    for workers, opt, depth in itertools.product(axes["workers"], axes["optimizer"], axes["depth"]):
        label_parts = [cfg.kind, f"P={workers}", opt]
        if depth is not None:
            label_parts.append(f"depth={depth}")
        label = "/".join(label_parts)
        for s in stalenesses:
            cell = cfg.copy()
            cell.sweep = {}
            cell.run["workers"] = int(workers)
            if opt != cell.optimizer.get("kind", "sgd"):
                cell.optimizer = {"kind": opt}
            if depth is not None:
                cell.workload["depth"] = int(depth)
            if cell.delay.get("kind", "uniform") == "uniform":
                cell.delay["staleness"] = int(s)
            else:
                cell.delay["match_staleness"] = int(s)
            cell.validate()
            cells.append((label, int(s), cell))
    return cells


def _run_cell(args):
    cfg, seed = args
    return run_single(cfg, seed)


def run_cells(jobs_list, jobs: int = 1):
    """Run ``(cfg, seed)`` pairs, possibly in parallel; results keep input order."""
    if jobs <= 1:
        return [_run_cell(j) for j in jobs_list]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_cell, jobs_list))


def slowdown_table(cells, results):
    """Group sweep results and normalise each group by its ``s=0`` runs.

    Returns ``{group_label: [SlowdownRow, ...]}``; groups without a converged
    baseline report every staleness as omitted.
    """
    grouped: dict[str, dict[int, list]] = {}
    for (label, s, _), res in zip(cells, results):
        grouped.setdefault(label, {}).setdefault(s, []).extend(res)
    table = {}
    for label, by_s in grouped.items():
        try:
            _, rows, _ = normalize_slowdown(by_s)
        except MissingBaseline:
            rows = [
                SlowdownRow(s, math.nan, math.nan, 0, len(runs)) for s, runs in sorted(by_s.items())
            ]
        table[label] = rows
    return table


def theorem_params(cfg: ExperimentConfig, workload, seeds) -> coherence.TheoremParams:
    th = cfg.theorem
    if "mu" not in th:
        raise ConfigError("theorem.mu is required")
    estimate = bool(th.get("estimate", False))
    s = max(cfg.staleness, 1)
    T = int(th.get("T", cfg.budget // cfg.workers))

    x0s = [workload.init_params(spawn_streams(seed, cfg.workers)[0]) for seed in seeds]
    subsets = [probe_subset(cfg, workload, seed) for seed in seeds]

    if "L" in th:
        L = float(th["L"])
    elif getattr(workload, "lipschitz", None) is not None:
        L = float(workload.lipschitz)
    elif estimate:
        L = max(coherence.estimate_lipschitz(workload, x0s[0], subsets[0]), 1e-12)
    else:
        raise ConfigError("theorem.L is missing and theorem.estimate is false")

    if "sigma2" in th:
        sigma2 = float(th["sigma2"])
    elif getattr(workload, "noise", None) is not None:
        sigma2 = float(workload.noise) ** 2
    elif estimate:
        rng = np.random.default_rng(seeds[0])
        bs = cfg.batch_size or workload.default_batch_size(cfg.workers)
        sigma2 = coherence.estimate_gradient_variance(
            workload, x0s[0], np.arange(workload.n_items()), bs, rng
        )
    else:
        raise ConfigError("theorem.sigma2 is missing and theorem.estimate is false")

    F0 = float(th["F0"]) if "F0" in th else float(
        np.mean([workload.objective(x, sub) for x, sub in zip(x0s, subsets)])
    )
    if "Finf" in th:
        Finf = float(th["Finf"])
    elif getattr(workload, "f_inf", None) is not None and math.isfinite(workload.f_inf):
        Finf = float(workload.f_inf)
    else:
        Finf = 0.0
    return coherence.TheoremParams(mu=float(th["mu"]), L=L, sigma2=sigma2, s=s, F0=F0, Finf=Finf, T=T)


def verify_theorem(cfg: ExperimentConfig):
    """Train with the bound's stepsize schedule and check the bound on probed gradients."""
    workload = build_workload(cfg)
    if not workload.supports_probe:
        raise ConfigError(f"workload {cfg.kind!r} does not support probe gradients")
    seeds = cfg.seeds
    params = theorem_params(cfg, workload, seeds)
    schedule = coherence.theorem_schedule(params.mu, params.s, params.L)
    run_cfg = cfg.copy()
    run_cfg.run["budget"] = params.T * cfg.workers
    run_cfg.run["stop_at_target"] = False
    run_cfg.probe.setdefault("interval", 1)
    run_cfg.probe.setdefault("window", params.s)
    results = [run_single(run_cfg, seed, probe=True, optimizer=schedule) for seed in seeds]
    report = coherence.verify_bound([r.trace.probes for r in results], params)
    return report, results


def probe_run(cfg: ExperimentConfig):
    """Run every seed with a coherence probe; returns results and seed-averaged rows.

    Each row is ``(iteration, lag, mean_cosine, mean_mu_k)``.
    """
    results = [run_single(cfg, seed, probe=True) for seed in cfg.seeds]
    acc: dict[tuple, list] = {}
    mus: dict[int, list] = {}
    for res in results:
        for rec in res.trace.probes:
            it = rec["iteration"]
            if math.isfinite(rec.get("mu_k", math.nan)):
                mus.setdefault(it, []).append(rec["mu_k"])
            for m, c in rec.get("cosines", {}).items():
                acc.setdefault((it, m), []).append(c)
    rows = []
    for (it, m) in sorted(acc):
        mu = float(np.mean(mus[it])) if it in mus else math.nan
        rows.append((it, m, float(np.mean(acc[(it, m)])), mu))
    return results, rows


def probe_phase_means(rows, fraction=0.25):
    """Mean cosine over the first and last ``fraction`` of probed iterations."""
    iters = sorted({r[0] for r in rows})
    if not iters:
        raise ValueError("no probe rows")
    k = max(1, int(round(len(iters) * fraction)))
    early, late = set(iters[:k]), set(iters[-k:])
    early_mean = float(np.mean([r[2] for r in rows if r[0] in early]))
    late_mean = float(np.mean([r[2] for r in rows if r[0] in late]))
    return early_mean, late_mean
