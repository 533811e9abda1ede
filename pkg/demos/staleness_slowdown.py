"""How much extra work does staleness cost?

Trains a small ReLU network on the synthetic digits set with 4 workers at a
few staleness levels and prints the batches each run needed to reach the
accuracy target, averaged over three seeds, relative to the runs without
staleness.  Single runs are noisy: small s can come out ahead by chance.
"""

from stalesim.delay import UniformBounded
from stalesim.metrics import ConvergenceTarget, NotReached, detect_convergence
from stalesim.optim import SGD
from stalesim.simcore import simulate
from stalesim.workloads import build_workload, load_dataset

data = load_dataset("digits", n_train=2000, n_test=500, seed=0)
target = ConvergenceTarget("test_accuracy", 0.85)

baseline = None
for s in (0, 2, 8, 16):
    hits = []
    for seed in (0, 1, 2):
        wl = build_workload("dnn", data, depth=2, width=64)
        trace = simulate(wl, SGD(0.02), UniformBounded(s), workers=4, seed=seed,
                         budget=20000, eval_interval=10, target=target)
        hits.append(detect_convergence(trace, target))
    if any(isinstance(h, NotReached) for h in hits):
        print(f"s={s:2d}: some seed missed the target within the budget")
        continue
    mean = sum(hits) / len(hits)
    baseline = baseline or mean
    print(f"s={s:2d}: {mean:8.0f} batches  slowdown {mean / baseline:.2f}x")
