"""Gradient coherence as training proceeds.

Runs the probe command's machinery on softmax regression and prints, for a
few lags m, the cosine between the current full gradient and the one m
iterations earlier.  The cosines drift upwards as the model converges.
"""

from pathlib import Path

from stalesim.config import ExperimentConfig
from stalesim.experiment import probe_phase_means, probe_run

cfg = ExperimentConfig.load(Path(__file__).parent / "configs" / "mlr_probe.cfg")
_, rows = probe_run(cfg)
iters = sorted({r[0] for r in rows})
for m in (1, 5, 10):
    by_iter = {r[0]: r[2] for r in rows if r[1] == m}
    picks = iters[:: max(1, len(iters) // 8)]
    print(f"m={m:2d}: " + " ".join(f"{by_iter[i]:.3f}" for i in picks if i in by_iter))
early, late = probe_phase_means(rows)
print(f"first quarter mean {early:.3f}, last quarter mean {late:.3f}")
