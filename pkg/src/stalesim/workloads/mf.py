"""Matrix factorization trained by SGD on observed entries."""

from __future__ import annotations

import numpy as np

from stalesim.errors import ConfigError, NonFiniteError
from stalesim.sparse import SparseDelta
from stalesim.workloads.base import Computed, Layout, Workload
from stalesim.workloads.data import RatingsData


def mf_loss(L, R, rows, cols, values, lam=0.0) -> float:
    """Mean squared reconstruction error over observed cells plus the Frobenius penalty.

    Both parts share the ``1 / |D_obs|`` normalisation.
    """
    n = values.size
    if n == 0:
        raise ValueError("no observations")
    with np.errstate(over="ignore", invalid="ignore"):
        resid = values - np.einsum("ij,ij->i", L[rows], R[cols])
        loss = (resid @ resid + lam * (np.sum(L * L) + np.sum(R * R))) / n
    if not np.isfinite(loss):
        raise NonFiniteError("MF loss is not finite")
    return float(loss)


def _rows_to_sparse(offset, rank, ids, contrib):
    uniq, inv = np.unique(ids, return_inverse=True)
    acc = np.zeros((uniq.size, rank))
    np.add.at(acc, inv, contrib)
    idx = offset + (uniq[:, None] * rank + np.arange(rank)).ravel()
    return idx, acc.ravel()


def mf_gradient(L, R, rows, cols, values, lam, row_counts, col_counts, dim=None) -> SparseDelta:
    """Sparse stochastic gradient of :func:`mf_loss` over a batch of observed cells.

    The penalty on row ``i`` is spread over its ``row_counts[i]`` observations so
    a uniformly drawn batch gives an unbiased estimate, and the full observation
    set gives the exact gradient.
    """
    b = values.size
    rank = L.shape[1]
    if dim is None:
        dim = L.size + R.size
    if b == 0:
        return SparseDelta.empty(dim)
    Li, Rj = L[rows], R[cols]
    # overflow here means the run has diverged; the finiteness check below reports it
    with np.errstate(over="ignore", invalid="ignore"):
        resid = values - np.einsum("ij,ij->i", Li, Rj)
        gL = (-2.0 * resid[:, None] * Rj + 2.0 * lam * Li / row_counts[rows][:, None]) / b
        gR = (-2.0 * resid[:, None] * Li + 2.0 * lam * Rj / col_counts[cols][:, None]) / b
        iL, vL = _rows_to_sparse(0, rank, rows, gL)
        iR, vR = _rows_to_sparse(L.size, rank, cols, gR)
    delta = SparseDelta(np.concatenate([iL, iR]), np.concatenate([vL, vR]), dim)
    if not delta.is_finite():
        raise NonFiniteError("MF gradient is not finite")
    return delta


class MatrixFactorization(Workload):
    name = "mf"
    metric = "train_loss"
    sparse = True

    def __init__(self, data: RatingsData, rank=5, lam=1e-4, init_scale=0.1):
        if rank > min(data.n_rows, data.n_cols):
            raise ConfigError("rank must not exceed min(M, N)")
        if lam < 0:
            raise ConfigError("lambda must be non-negative")
        self.data = data
        self.rank = rank
        self.lam = lam
        self.init_scale = init_scale
        self.layout = Layout([("L", (data.n_rows, rank)), ("R", (data.n_cols, rank))])
        # zero counts only occur for unobserved rows, which never enter a batch
        self.row_counts = np.maximum(np.bincount(data.rows, minlength=data.n_rows), 1)
        self.col_counts = np.maximum(np.bincount(data.cols, minlength=data.n_cols), 1)

    def n_items(self):
        return len(self.data)

    def dim(self):
        return self.layout.size

    def default_batch_size(self, workers):
        return 25000

    def init_params(self, rng):
        return rng.normal(0.0, self.init_scale, size=self.layout.size)

    def factors(self, params):
        v = self.layout.views(params)
        return v["L"], v["R"]

    def gradient_sparse(self, params, indices) -> SparseDelta:
        L, R = self.factors(params)
        d = self.data
        return mf_gradient(
            L, R, d.rows[indices], d.cols[indices], d.values[indices],
            self.lam, self.row_counts, self.col_counts, self.layout.size,
        )

    def compute(self, params, worker_state, batch, rng):
        return Computed("grad", self.gradient_sparse(params, batch))

    def gradient(self, params, indices):
        return self.gradient_sparse(params, indices).to_dense()

    def objective(self, params, indices):
        L, R = self.factors(params)
        d = self.data
        return mf_loss(L, R, d.rows[indices], d.cols[indices], d.values[indices], self.lam)

    def evaluate(self, params, worker_states=None):
        L, R = self.factors(params)
        d = self.data
        return mf_loss(L, R, d.rows, d.cols, d.values, self.lam)
