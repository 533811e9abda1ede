"""Full-batch quadratic objective with known curvature, for checking the convergence bound."""

from __future__ import annotations

import numpy as np

from stalesim.errors import ConfigError
from stalesim.workloads.base import Computed, Workload


class Quadratic(Workload):
    """``f(x) = 0.5 x^T A x + b^T x`` with eigenvalues of ``A`` spread over ``[l_min, l_max]``.

    ``l_max = 0`` gives a linear objective whose gradient is the constant ``b``.
    ``noise`` adds isotropic Gaussian noise of total variance ``noise**2`` to
    each stochastic gradient.
    """

    name = "quadratic"
    metric = "objective"
    shuffle_batches = False

    def __init__(self, dim=20, l_min=0.1, l_max=1.0, linear=0.0, noise=0.0, init_scale=1.0, seed=0):
        if l_min < 0 or l_max < l_min:
            raise ConfigError("need 0 <= l_min <= l_max")
        rng = np.random.default_rng(seed)
        q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        eig = np.linspace(l_min, l_max, dim)
        self.A = (q * eig) @ q.T
        self.b = linear * rng.standard_normal(dim)
        self.noise = noise
        self.init_scale = init_scale
        self._dim = dim
        self.lipschitz = float(l_max)
        if l_min > 0:
            x_star = -np.linalg.solve(self.A, self.b)
            self.f_inf = float(0.5 * x_star @ self.A @ x_star + self.b @ x_star)
        else:
            self.f_inf = 0.0 if not np.any(self.b) else -np.inf

    def n_items(self):
        return 1

    def dim(self):
        return self._dim

    def default_batch_size(self, workers):
        return 1

    def init_params(self, rng):
        return self.init_scale * rng.standard_normal(self._dim)

    def full_gradient(self, params):
        return self.A @ params + self.b

    def value(self, params):
        with np.errstate(over="ignore", invalid="ignore"):
            return float(0.5 * params @ self.A @ params + self.b @ params)

    def compute(self, params, worker_state, batch, rng):
        g = self.full_gradient(params)
        if self.noise:
            g = g + (self.noise / np.sqrt(self._dim)) * rng.standard_normal(self._dim)
        return Computed("grad", g, self.value(params))

    def gradient(self, params, indices=None):
        return self.full_gradient(params)

    def objective(self, params, indices=None):
        return self.value(params)

    def evaluate(self, params, worker_states=None):
        return self.value(params)
