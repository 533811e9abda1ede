"""Acceptance criteria 1-10.

Each ``criterion_N`` function runs one experiment and returns ``(ok, detail)``.
Under pytest every criterion prints one PASS/FAIL line in the terminal
summary; ``python3 tests/test_acceptance.py [N ...]`` prints the same lines
without pytest.  Criteria 4, 5 and 7 take minutes on one CPU.
"""

import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

sys.path.insert(0, str(Path(__file__).parent))

from oracles import central_difference, rel_error, sequential_sgd  # noqa: E402
from stalesim import optim  # noqa: E402
from stalesim.coherence import TheoremParams, optimal_staleness, theorem_bound  # noqa: E402
from stalesim.config import ExperimentConfig  # noqa: E402
from stalesim.delay import (  # noqa: E402
    GeometricStraggler,
    UniformBounded,
    match_mean_geometric,
    sample_delay_block,
)
from stalesim.experiment import probe_phase_means, probe_run, verify_theorem  # noqa: E402
from stalesim.metrics import ConvergenceTarget, NotReached, detect_convergence  # noqa: E402
from stalesim.simcore import simulate  # noqa: E402
from stalesim.sparse import densify  # noqa: E402
from stalesim.workloads import build_workload, load_dataset  # noqa: E402
from stalesim.workloads.mf import MatrixFactorization  # noqa: E402
from stalesim.workloads.data import planted_low_rank  # noqa: E402
from stalesim.workloads.nets import NetSpec, dnn_forward_backward, init_net  # noqa: E402
from stalesim.workloads.vae import VAESpec, init_vae, vae_loss_and_grad  # noqa: E402

SEEDS = (0, 1, 2)
RESULTS = {}


def _batches_to_target(traces, target):
    out = []
    for tr in traces:
        hit = NotReached() if tr.diverged else detect_convergence(tr, target)
        out.append(None if isinstance(hit, NotReached) else int(hit))
    return out


def _mean_or_nan(values):
    ok = [v for v in values if v is not None]
    return float(np.mean(ok)) if len(ok) == len(values) else math.nan


# ---------------------------------------------------------------- 1


def criterion_1():
    start = time.perf_counter()
    data = load_dataset("clusters", n_train=2000, n_test=200, dim=10, n_classes=4, seed=0)
    wl = build_workload("mlr", data)
    snaps = []
    simulate(wl, optim.SGD(0.05), UniformBounded(0), workers=1, seed=7, budget=1000, batch_size=16,
             eval_interval=10**9, hooks=(lambda st, tr: snaps.append(st.params(0).copy()),))
    ref = sequential_sgd(wl, 0.05, 7, 1000, 16)
    sim = snaps[1:]
    same = len(sim) == len(ref) == 1000 and all(np.array_equal(a, b) for a, b in zip(sim, ref))
    elapsed = time.perf_counter() - start
    return same and elapsed < 10, f"1000 batches bit-identical={same}, {elapsed:.2f}s"


# ---------------------------------------------------------------- 2


def criterion_2():
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    n, workers = 10**5, 2
    notes, ok = [], True
    for s in (2, 4, 8, 16):
        block = sample_delay_block(UniformBounded(s), workers, n, rng)
        mean, sd = (s - 1) / 2, math.sqrt((s * s - 1) / 12)
        worst_z, worst_p = 0.0, 1.0
        for p in range(workers):
            for q in range(workers):
                draws = block[:, p, q]
                worst_z = max(worst_z, abs(draws.mean() - mean) / (sd / math.sqrt(n)))
                counts = np.bincount(draws, minlength=s)
                worst_p = min(worst_p, stats.chisquare(counts).pvalue)
        ok &= worst_z < 3 and worst_p > 1e-3
        notes.append(f"s={s}: max|z|={worst_z:.2f} min p={worst_p:.3g}")

    workers = 8
    for s, p_strag in ((2, 0.5), (4, 0.1), (8, 0.1), (16, 0.1)):
        p_fast = match_mean_geometric(s, p_strag, 1, workers)
        spec = GeometricStraggler(p_strag, p_fast, 1, cap=100)
        block = sample_delay_block(spec, workers, n, rng)
        target = (s - 1) / 2
        rel = abs(block.mean() - target) / target
        ok &= rel < 0.01
        notes.append(f"geometric s={s}: rel err {rel:.4f}")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 5
    return ok, "; ".join(notes) + f"; {elapsed:.2f}s"


# ---------------------------------------------------------------- 3


def criterion_3():
    start = time.perf_counter()
    errors = {}
    for seed in range(5):
        data = planted_low_rank(6, 5, 2, noise=0.3, observed=0.8, seed=seed)
        wl = MatrixFactorization(data, rank=2, lam=0.1)
        x = wl.init_params(np.random.default_rng(seed)) * 5
        idx = np.arange(len(data))
        fd = central_difference(lambda p: wl.objective(p, idx), x)
        errors.setdefault("mf", []).append(rel_error(wl.gradient(x, idx), fd))

        rng = np.random.default_rng(50 + seed)
        x_in = rng.random((6, 5))
        y = rng.integers(0, 3, size=6)
        for depth in range(4):
            spec = NetSpec(5, 3, depth, width=6)
            params = init_net(spec, rng) + 0.1 * rng.standard_normal(spec.layout().size)
            _, grad = dnn_forward_backward(spec, params, x_in, y)
            fd = central_difference(lambda p: dnn_forward_backward(spec, p, x_in, y)[0], params)
            errors.setdefault(f"dnn{depth}", []).append(rel_error(grad, fd))

        vspec = VAESpec(input_dim=6, latent_dim=2, depth=1, width=5)
        params = init_vae(vspec, rng) + 0.05 * rng.standard_normal(init_vae(vspec, rng).size)
        xv = rng.random((4, 6))
        eps = rng.standard_normal((4, 2))
        _, grad = vae_loss_and_grad(vspec, params, xv, eps)
        fd = central_difference(lambda p: vae_loss_and_grad(vspec, p, xv, eps, with_grad=False)[0], params)
        errors.setdefault("vae", []).append(rel_error(grad, fd))
    worst = {k: max(v) for k, v in errors.items()}
    elapsed = time.perf_counter() - start
    ok = all(len(v) >= 5 for v in errors.values()) and max(worst.values()) < 1e-4 and elapsed < 30
    return ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f"; {elapsed:.1f}s"


# ---------------------------------------------------------------- 4 and 5


def _digits():
    return load_dataset("digits", n_train=4000, n_test=1000, seed=0)


def _dnn_batches(data, depth, s):
    target = ConvergenceTarget("test_accuracy", 0.92)
    traces = []
    for seed in SEEDS:
        wl = build_workload("dnn", data, depth=depth)
        traces.append(simulate(wl, optim.SGD(0.01), UniformBounded(s), workers=8, seed=seed,
                               budget=40000, eval_interval=10, target=target))
    return _batches_to_target(traces, target)


def criterion_4():
    data = _digits()
    runs = {s: _dnn_batches(data, 3, s) for s in (0, 4, 16)}
    means = {s: _mean_or_nan(v) for s, v in runs.items()}
    ok = means[0] <= means[4] <= means[16] and means[16] >= 1.5 * means[0]
    return ok, (f"mean batches to 92% s=0 {means[0]:.0f}, s=4 {means[4]:.0f}, s=16 {means[16]:.0f}; "
                f"slowdown(16)={means[16] / means[0]:.2f}")


def criterion_5():
    data = _digits()
    slow = {}
    for depth in (1, 4):
        base, stale = _mean_or_nan(_dnn_batches(data, depth, 0)), _mean_or_nan(_dnn_batches(data, depth, 16))
        slow[depth] = stale / base
    ok = slow[4] >= slow[1]
    return ok, f"slowdown at s=16: depth 1 {slow[1]:.2f}, depth 4 {slow[4]:.2f}"


# ---------------------------------------------------------------- 6


def criterion_6():
    data = load_dataset("lowrank", n_rows=200, n_cols=200, rank=5, noise=0.1, seed=0)
    wl = build_workload("mf", data, rank=5, lam=1e-4)
    lr, batch = 2.0, 1000
    calib = simulate(wl, optim.SGD(lr), UniformBounded(0), workers=4, seed=0, budget=3000,
                     batch_size=batch, eval_interval=1, stop_at_target=False)
    floor = float(np.min(calib.series("train_loss")[1]))
    target = ConvergenceTarget("train_loss", 5 * floor, "at-most")
    slow = {}
    for P in (4, 8):
        means = {}
        for s in (0, 10, 15, 20):
            traces = [simulate(wl, optim.SGD(lr), UniformBounded(s), workers=P, seed=seed, budget=20000,
                               batch_size=batch, eval_interval=1, target=target) for seed in SEEDS]
            means[s] = _mean_or_nan(_batches_to_target(traces, target))
        slow[P] = {s: means[s] / means[0] for s in (10, 15, 20)}
    ok = all(slow[8][s] > slow[4][s] for s in (10, 15, 20))
    cells = ", ".join(f"s={s} P4 {slow[4][s]:.3f} P8 {slow[8][s]:.3f}" for s in (10, 15, 20))
    return ok, f"target loss {target.threshold:.4f}; {cells}"


# ---------------------------------------------------------------- 7


class ConservationCheck:
    """Wraps LDA ``compute`` and checks every outgoing delta and local state."""

    def __init__(self, wl):
        self.wl = wl
        self.inner = wl.compute
        self.checked = 0
        self.violations = 0

    def __call__(self, params, state, batch, rng):
        out = self.inner(params, state, batch, rng)
        dphi, dphi_t = self.wl.split(densify(out.vector, self.wl.dim()))
        good = (
            np.allclose(dphi.sum(axis=0), dphi_t)
            and abs(dphi_t.sum()) < 1e-9
            and np.array_equal(state.theta.sum(axis=1), np.diff(state.offsets))
            and state.theta.min() >= 0
        )
        self.checked += 1
        self.violations += not good
        return out


def criterion_7():
    corpus = load_dataset("lda", n_docs=2000, vocab_size=1000, n_topics=10, doc_length=50, seed=0)
    iters, tail = 4000, 10
    curves, checks = {}, []
    for s in (0, 5, 10):
        for seed in SEEDS:
            wl = build_workload("lda", corpus, n_topics=10)
            check = ConservationCheck(wl)
            wl.compute = check
            tr = simulate(wl, optim.SGD(1.0), UniformBounded(s), workers=8, seed=seed,
                          budget=iters * 8, eval_interval=10)
            curves[(s, seed)] = tr.series("loglik")[1]
            checks.append(check)
    wl = build_workload("lda", corpus, n_topics=10)
    probe = simulate(wl, optim.SGD(1.0), UniformBounded(15), workers=8, seed=0, budget=iters * 8,
                     eval_interval=10).series("loglik")[1]

    finals = {s: np.mean([curves[(s, k)][-tail:].mean() for k in SEEDS]) for s in (0, 5, 10)}
    rel = max(abs(finals[s] - finals[0]) / abs(finals[0]) for s in (5, 10))
    seed_dev = max(np.max(np.abs(curves[(0, a)] - curves[(0, b)])) for a, b in ((0, 1), (0, 2), (1, 2)))
    means = {s: np.mean([curves[(s, k)] for k in SEEDS], axis=0) for s in (0, 5, 10)}
    traj = max(np.max(np.abs(means[a] - means[b])) for a, b in ((0, 5), (0, 10), (5, 10)))
    violations = sum(c.violations for c in checks)
    checked = sum(c.checked for c in checks)
    s15 = (probe[-tail:].mean() - finals[0]) / abs(finals[0])
    ok = rel <= 0.01 and violations == 0 and traj <= 5 * seed_dev
    return ok, (f"final rel diff {rel:.4f}; trajectory dev {traj:.0f} = {traj / seed_dev:.2f}x seed dev; "
                f"{checked} deltas checked, {violations} violations; s=15 (reported) rel {s15:+.4f}")


# ---------------------------------------------------------------- 8


def criterion_8():
    start = time.perf_counter()
    cfg = ExperimentConfig.from_text(
        "workload.kind = quadratic\nworkload.dim = 20\ndelay.staleness = 4\nrun.workers = 2\n"
        "run.seeds = 0\ntheorem.mu = 0.5\ntheorem.T = 10000\n"
    )
    report, _ = verify_theorem(cfg)
    mu_ok = report.mu_min >= 0.5
    base = dict(report.params)
    grid_ok = True
    for sigma2 in (0.01, 1.0, 100.0):
        p = TheoremParams(**{**base, "sigma2": sigma2, "s": 1})
        grid = range(1, 2001)
        values = [theorem_bound(TheoremParams(**{**base, "sigma2": sigma2, "s": s})) for s in grid]
        s_best = grid[int(np.argmin(values))]
        s_star = optimal_staleness(p)
        grid_ok &= abs(s_best - min(max(s_star, 1), 2000)) <= 1
    elapsed = time.perf_counter() - start
    ok = report.passed and mu_ok and grid_ok and elapsed < 60
    return ok, (f"min |grad|^2 {report.min_sq_grad_norm:.3g} <= bound {report.bound:.3g}: {report.passed}; "
                f"mu_min {report.mu_min:.3f} >= 0.5: {mu_ok}; grid argmin agrees: {grid_ok}; {elapsed:.1f}s")


# ---------------------------------------------------------------- 9


def criterion_9():
    cfg = ExperimentConfig.from_text(
        "workload.kind = mlr\ndata.kind = digits\ndata.n_train = 4000\ndata.n_test = 1000\n"
        "optimizer.lr = 0.01\ndelay.staleness = 4\nrun.workers = 8\nrun.seeds = 0, 1, 2\n"
        "run.budget = 20000\nrun.stop_at_target = false\n"
        "probe.interval = 1\nprobe.subset = 1000\nprobe.lags = 10\n"
    )
    _, rows = probe_run(cfg)
    lags = sorted({r[1] for r in rows})
    early, late = probe_phase_means(rows)
    ok = late >= early and lags == list(range(1, 11))
    return ok, f"mean cosine first quarter {early:.4f}, last quarter {late:.4f}, lags {lags[0]}..{lags[-1]}"


# ---------------------------------------------------------------- 10


def criterion_10():
    start = time.perf_counter()

    def one(spec, g, steps=1):
        state = optim.init_state(spec, len(g))
        out = None
        for _ in range(steps):
            out = optim.apply(state, spec, np.asarray(g, dtype=float))
        return out[0]

    cases = {
        "adam": (one(optim.Adam(0.001, 0.9, 0.999, 1e-8), [3.0]), -0.001 * 3 / (3 + 1e-8)),
        "adagrad": (one(optim.Adagrad(0.01, 1e-8), [4.0]), -0.01 * 4 / (4 + 1e-8)),
        "rmsprop": (one(optim.RMSProp(0.01, 0.9, 0.0, 1e-10), [2.0]), -0.01 * 2 / math.sqrt(0.4 + 1e-10)),
        "momentum": (one(optim.Momentum(0.1, 0.5), [2.0], steps=2), -0.1 * 3.0),
    }
    errs = {k: abs(a - b) / abs(b) for k, (a, b) in cases.items()}
    elapsed = time.perf_counter() - start
    ok = max(errs.values()) <= 1e-12 and elapsed < 1
    return ok, ", ".join(f"{k} {v:.1e}" for k, v in errs.items()) + f"; {elapsed * 1000:.1f}ms"


CRITERIA = {n: globals()[f"criterion_{n}"] for n in range(1, 11)}


def _record(n):
    ok, detail = CRITERIA[n]()
    RESULTS[n] = (ok, detail)
    return ok, detail


@pytest.mark.parametrize("n", [1, 2, 3, 8, 10])
def test_fast_criteria(n):
    ok, detail = _record(n)
    assert ok, detail


@pytest.mark.slow
@pytest.mark.parametrize("n", [4, 5, 6, 7, 9])
def test_experiment_criteria(n):
    ok, detail = _record(n)
    assert ok, detail


if __name__ == "__main__":
    chosen = [int(a) for a in sys.argv[1:]] or list(CRITERIA)
    failed = 0
    for n in chosen:
        t0 = time.perf_counter()
        ok, detail = CRITERIA[n]()
        failed += not ok
        print(f"CRITERION {n}: {'PASS' if ok else 'FAIL'} ({time.perf_counter() - t0:.0f}s) {detail}", flush=True)
    sys.exit(1 if failed else 0)
