"""More workers make the same staleness hurt more.

Matrix factorisation of a planted rank-5 matrix.  With P workers every
update reaches the others up to s iterations late, so P*s batches' worth of
work can be in flight.  The slowdown at a fixed s grows with P.
"""

import numpy as np

from stalesim.delay import UniformBounded
from stalesim.metrics import ConvergenceTarget, detect_convergence
from stalesim.optim import SGD
from stalesim.simcore import simulate
from stalesim.workloads import build_workload, load_dataset

data = load_dataset("lowrank", n_rows=200, n_cols=200, rank=5, noise=0.1, seed=0)
wl = build_workload("mf", data, rank=5, lam=1e-4)
target = ConvergenceTarget("train_loss", 0.05, "at-most")


def batches(P, s):
    runs = [simulate(wl, SGD(2.0), UniformBounded(s), workers=P, seed=seed, budget=20000,
                     batch_size=1000, eval_interval=1, target=target) for seed in (0, 1)]
    return np.mean([detect_convergence(tr, target) for tr in runs])


for P in (4, 8):
    base = batches(P, 0)
    cells = "  ".join(f"s={s}: {batches(P, s) / base:.2f}x" for s in (5, 10, 20))
    print(f"P={P}: {cells}")
