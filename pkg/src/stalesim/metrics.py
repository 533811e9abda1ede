"""Run traces and the measurement protocol: batches-to-target, slowdown, seed aggregation.

Time is counted in batches processed across all workers, so one lockstep
iteration of ``P`` workers advances the clock by ``P``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from stalesim.errors import ConfigError, MissingBaseline, UnknownMetric

SUMMARY_HEADER = [
    "run_id", "workload", "optimizer", "staleness", "workers", "seed",
    "batches_to_target", "final_metric",
]
SLOWDOWN_HEADER = ["group", "staleness", "mean_ratio", "std", "n", "omitted"]


@dataclass(frozen=True)
class MetricsEvent:
    run_id: str
    batches: int
    metric: str
    value: object

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "MetricsEvent":
        d = json.loads(line)
        return cls(d["run_id"], int(d["batches"]), d["metric"], d["value"])


@dataclass(frozen=True)
class ConvergenceTarget:
    metric: str
    threshold: float
    direction: str = "at-least"

    def __post_init__(self):
        if self.direction not in ("at-least", "at-most"):
            raise ConfigError(f"direction must be 'at-least' or 'at-most', got {self.direction!r}")
        if not math.isfinite(self.threshold):
            raise ConfigError("convergence threshold must be finite")

    def satisfied(self, value: float) -> bool:
        if self.direction == "at-least":
            return value >= self.threshold
        return value <= self.threshold


@dataclass
class RunTrace:
    run_id: str
    events: list = field(default_factory=list)
    diverged: bool = False
    meta: dict = field(default_factory=dict)
    probes: list = field(default_factory=list)
    # final simulator state, kept in memory only
    state: object = field(default=None, repr=False, compare=False)

    def record(self, batches, metric, value):
        event = MetricsEvent(self.run_id, int(batches), metric, value)
        if self.events and event.batches < self.events[-1].batches:
            raise ValueError("batches_processed must be non-decreasing within a run")
        self.events.append(event)
        return event

    def series(self, metric):
        pts = [(e.batches, e.value) for e in self.events if e.metric == metric]
        if not pts:
            return np.empty(0, np.int64), np.empty(0)
        b, v = zip(*pts)
        return np.asarray(b), np.asarray(v, dtype=np.float64)

    def final(self, metric):
        _, v = self.series(metric)
        return float(v[-1]) if v.size else math.nan

    def to_jsonl(self) -> str:
        return "".join(e.to_json() + "\n" for e in self.events)

    def write(self, path):
        Path(path).write_text(self.to_jsonl())

    @classmethod
    def from_jsonl(cls, text: str, run_id=None) -> "RunTrace":
        events = [MetricsEvent.from_json(line) for line in text.splitlines() if line.strip()]
        rid = run_id or (events[0].run_id if events else "")
        trace = cls(rid, events)
        trace.diverged = any(e.metric == "diverged" for e in events)
        return trace

    @classmethod
    def read(cls, path) -> "RunTrace":
        return cls.from_jsonl(Path(path).read_text())


class NotReached:
    """Sentinel for a run that never met its target inside the budget."""

    def __repr__(self):
        return "NotReached"

    def __bool__(self):
        return False


NOT_REACHED = NotReached()


def detect_convergence(trace: RunTrace, target: ConvergenceTarget, sustained: int = 1):
    """First ``batches`` at which ``target`` holds, or ``NOT_REACHED``.

    ``sustained > 1`` requires that many consecutive satisfying evaluations and
    reports the first of them.
    """
    batches, values = trace.series(target.metric)
    if batches.size == 0:
        raise UnknownMetric(target.metric)
    run = 0
    for i, (b, v) in enumerate(zip(batches, values)):
        if math.isfinite(v) and target.satisfied(v):
            run += 1
            if run >= sustained:
                return int(batches[i - sustained + 1])
        else:
            run = 0
    return NOT_REACHED


@dataclass
class RunSummary:
    run_id: str
    workload: str
    optimizer: str
    staleness: int
    workers: int
    seed: int
    batches_to_target: object
    final_metric: float
    fingerprint: str = ""

    @property
    def reached(self) -> bool:
        return self.batches_to_target is not NOT_REACHED and self.batches_to_target is not None

    def row(self):
        btt = self.batches_to_target if self.reached else "NotReached"
        return [
            self.run_id, self.workload, self.optimizer, self.staleness, self.workers,
            self.seed, btt, repr(float(self.final_metric)),
        ]


def aggregate_seeds(summaries: Iterable[RunSummary]):
    """``(mean, sample std, n)`` of batches-to-target over runs that reached it."""
    values = [s.batches_to_target for s in summaries if s.reached]
    n = len(values)
    if n == 0:
        return math.nan, math.nan, 0
    arr = np.asarray(values, dtype=np.float64)
    std = float(arr.std(ddof=1)) if n > 1 else 0.0
    return float(arr.mean()), std, n


@dataclass
class SlowdownRow:
    staleness: int
    mean_ratio: float
    std: float
    n: int
    omitted: int


def normalize_slowdown(by_staleness: dict):
    """Normalise mean batches-to-target by the ``s=0`` mean within one group.

    ``by_staleness`` maps staleness to the list of seed summaries.  Returns
    ``(ratios, rows, omitted)``: the ratio map for stalenesses with at least
    one converged run, a ``SlowdownRow`` per staleness, and the stalenesses for
    which no run converged.
    """
    base = by_staleness.get(0)
    base_mean, _, base_n = aggregate_seeds(base or [])
    if not base or base_n == 0:
        raise MissingBaseline("group has no converged s=0 run")
    ratios, rows, omitted = {}, [], []
    for s in sorted(by_staleness):
        runs = by_staleness[s]
        mean, _, n = aggregate_seeds(runs)
        missing = sum(1 for r in runs if not r.reached)
        if n == 0:
            omitted.append(s)
            rows.append(SlowdownRow(s, math.nan, math.nan, 0, missing))
            continue
        per_run = np.array([r.batches_to_target for r in runs if r.reached], float) / base_mean
        ratio = 1.0 if s == 0 else mean / base_mean
        ratios[s] = ratio
        std = float(per_run.std(ddof=1)) if n > 1 else 0.0
        rows.append(SlowdownRow(s, ratio, std, n, missing))
    return ratios, rows, omitted


def write_summary_rows(path, summaries, append=True):
    path = Path(path)
    new = not path.exists() or not append
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(SUMMARY_HEADER)
        for s in summaries:
            w.writerow(s.row())


def read_summary(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def format_slowdown_csv(groups: dict) -> str:
    """``groups`` maps a group label to its list of ``SlowdownRow``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SLOWDOWN_HEADER)
    for label, rows in groups.items():
        for r in rows:
            ratio = "" if math.isnan(r.mean_ratio) else repr(float(r.mean_ratio))
            std = "" if math.isnan(r.std) else repr(float(r.std))
            w.writerow([label, r.staleness, ratio, std, r.n, r.omitted])
    return buf.getvalue()
