"""Gradient coherence along the optimization path and the staleness-aware convergence bound.

The coherence at iteration ``k`` is the smallest normalised inner product
``<g_k, g_t> / |g_k|^2`` over the last ``s`` full gradients (``t = k`` included).
Full gradients are approximated on a fixed subset of training samples.
The bound machinery assumes the stepsize ``mu / (s L sqrt(k + 1))``, which is
the usual ``1/sqrt(k)`` schedule shifted by one so it is defined at ``k = 0``.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import asdict, dataclass, field
from functools import partial

import numpy as np

from stalesim.errors import ConfigError, InsufficientHistory, MissingProbes, ZeroVector
from stalesim.optim import SGD


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ZeroVector("cosine similarity of a zero vector is undefined")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def probe_gradient(params, workload, subset) -> np.ndarray:
    subset = np.asarray(subset)
    if subset.size == 0:
        raise ValueError("probe subset is empty")
    return np.asarray(workload.gradient(params, subset), dtype=np.float64)


def gradient_coherence(history, k, s):
    """``(mu_k, t_min)`` over entries of ``history`` stamped ``k - s + 1 .. k``.

    ``history`` is a sequence of ``(stamp, gradient)`` pairs; the stamp is an
    iteration number or, for sparse probing, a probe index.
    """
    lo = k - max(int(s), 1) + 1
    window = [(t, g) for t, g in history if lo <= t <= k]
    current = [g for t, g in window if t == k]
    if not window or not current:
        raise InsufficientHistory(f"no probe gradient stamped {k} in the history")
    g_k = current[0]
    norm2 = float(g_k @ g_k)
    if norm2 == 0:
        raise ZeroVector("coherence is undefined at a stationary point")
    best, t_best = math.inf, k
    for t, g in window:
        value = float(g_k @ g) / norm2
        if value < best:
            best, t_best = value, t
    return best, t_best


def theorem_stepsize(k, mu, s, L) -> float:
    if mu <= 0 or L <= 0 or s < 1:
        raise ConfigError("need mu > 0, L > 0 and s >= 1")
    return mu / (s * L * math.sqrt(k + 1))


def theorem_schedule(mu, s, L) -> SGD:
    """SGD whose per-step rate follows :func:`theorem_stepsize`."""
    return SGD(lr=theorem_stepsize(0, mu, s, L), schedule=partial(theorem_stepsize, mu=mu, s=s, L=L))


@dataclass(frozen=True)
class TheoremParams:
    mu: float
    L: float
    sigma2: float
    s: int
    F0: float
    Finf: float
    T: int

    def __post_init__(self):
        if self.mu <= 0 or self.L <= 0:
            raise ConfigError("mu and L must be positive")
        if self.sigma2 < 0:
            raise ConfigError("sigma2 must be non-negative")
        if self.s < 1:
            raise ConfigError("s must be >= 1")
        if self.F0 < self.Finf:
            raise ConfigError("F0 must be >= Finf")


def theorem_bound(p: TheoremParams) -> float:
    if p.T < 2:
        raise ConfigError("the bound needs T >= 2")
    gap = p.F0 - p.Finf
    return (p.s * p.L * gap / p.mu**2 + p.sigma2 * math.log(p.T) / p.s) / math.sqrt(p.T)


def optimal_staleness(p: TheoremParams) -> float:
    """Staleness minimising :func:`theorem_bound` over ``s`` (as a real number)."""
    gap = p.F0 - p.Finf
    if p.T < 2 or gap <= 0 or p.sigma2 <= 0:
        raise ConfigError("optimal staleness needs T >= 2, F0 > Finf and sigma2 > 0")
    return math.sqrt(p.sigma2) * p.mu * math.sqrt(math.log(p.T) / (p.L * gap))


class CoherenceProbe:
    """Simulation hook recording probe gradients of worker 0's cache.

    Every ``interval`` iterations it stores ``|g_k|^2``, the coherence over
    the last ``window`` probes and the cosine to each of the previous
    ``max_lag`` probes.
    """

    def __init__(self, workload, subset, interval=50, window=1, max_lag=10):
        self.workload = workload
        self.subset = np.asarray(subset)
        self.interval = max(int(interval), 1)
        self.window = max(int(window), 1)
        self.max_lag = int(max_lag)
        self.history = deque(maxlen=max(self.window, self.max_lag + 1, 1))
        self.records = []
        self._index = 0

    def __call__(self, state, trace=None):
        if state.iteration % self.interval:
            return
        g = probe_gradient(state.params(0), self.workload, self.subset)
        k = self._index
        self._index += 1
        self.history.append((k, g))
        sq = float(g @ g)
        record = {"iteration": state.iteration, "batches": state.batches, "sq_norm": sq}
        if sq > 0:
            record["mu_k"], t_min = gradient_coherence(self.history, k, self.window)
            record["argmin"] = int(t_min)
            cosines = {}
            for t, h in self.history:
                m = k - t
                if 1 <= m <= self.max_lag and np.any(h):
                    cosines[m] = cosine_similarity(g, h)
            record["cosines"] = cosines
        else:
            record["mu_k"], record["cosines"] = math.nan, {}
        self.records.append(record)
        if trace is not None:
            trace.probes.append(record)


def choose_subset(n_items, size, rng) -> np.ndarray:
    size = min(int(size), int(n_items))
    return np.sort(rng.choice(n_items, size=size, replace=False))


def estimate_lipschitz(workload, params, subset, iters=30, rng=None, h=1e-4) -> float:
    """Power iteration on finite-difference Hessian-vector products of the probe objective."""
    rng = rng or np.random.default_rng(0)
    v = rng.standard_normal(params.size)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        hv = (workload.gradient(params + h * v, subset) - workload.gradient(params - h * v, subset)) / (2 * h)
        lam = float(np.linalg.norm(hv))
        if lam == 0:
            return 0.0
        v = hv / lam
    return lam


def estimate_gradient_variance(workload, params, indices, batch_size, rng, draws=20) -> float:
    """Mean squared deviation of minibatch gradients from their average."""
    indices = np.asarray(indices)
    grads = []
    for _ in range(draws):
        batch = rng.choice(indices, size=min(batch_size, indices.size), replace=False)
        out = workload.compute(params, None, batch, rng)
        grads.append(np.asarray(out.vector if not hasattr(out.vector, "to_dense") else out.vector.to_dense()))
    grads = np.asarray(grads)
    return float(np.mean(np.sum((grads - grads.mean(axis=0)) ** 2, axis=1)))


@dataclass
class VerificationReport:
    min_sq_grad_norm: float
    bound: float
    status: str
    mu_min: float
    mu_mean: float
    negative_fraction: float
    n_seeds: int
    n_probes: int
    argmin_iteration: int
    params: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    def to_text(self) -> str:
        items = {k: v for k, v in asdict(self).items() if k != "params"}
        items.update({f"param.{k}": v for k, v in self.params.items()})
        return "\n".join(f"{k}={v}" for k, v in items.items())


def verify_bound(probe_runs, p: TheoremParams) -> VerificationReport:
    """Compare the seed-averaged minimum squared gradient norm with :func:`theorem_bound`.

    ``probe_runs`` holds one list of probe records per seed.  When the check
    fails but some probed coherence was negative, the theorem's hypothesis did
    not hold and the status is ``inconclusive`` rather than ``fail``.
    """
    runs = [r for r in probe_runs if r]
    if not runs:
        raise MissingProbes("no probe gradients were recorded")
    by_iter: dict[int, list] = {}
    mus = []
    for records in runs:
        for rec in records:
            by_iter.setdefault(rec["iteration"], []).append(rec["sq_norm"])
            if math.isfinite(rec.get("mu_k", math.nan)):
                mus.append(rec["mu_k"])
    means = {k: float(np.mean(v)) for k, v in by_iter.items()}
    k_min = min(means, key=means.get)
    min_sq = means[k_min]
    bound = theorem_bound(p)
    mus = np.asarray(mus)
    neg = float(np.mean(mus < 0)) if mus.size else 0.0
    if min_sq <= bound:
        status = "pass"
    elif neg > 0:
        status = "inconclusive"
    else:
        status = "fail"
    return VerificationReport(
        min_sq_grad_norm=min_sq,
        bound=bound,
        status=status,
        mu_min=float(mus.min()) if mus.size else math.nan,
        mu_mean=float(mus.mean()) if mus.size else math.nan,
        negative_fraction=neg,
        n_seeds=len(runs),
        n_probes=len(means),
        argmin_iteration=int(k_min),
        params=asdict(p),
    )
