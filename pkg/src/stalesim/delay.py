"""Delay laws for in-flight updates and the transit queue that holds them.

An update generated by worker ``p`` at iteration ``t`` is delivered to every
worker ``p'`` (``p`` included) at the start of iteration ``t + 1 + r``, where
``r`` is drawn from one of the delay laws below.
"""

from __future__ import annotations

import heapq
import warnings
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from stalesim.errors import ConfigError, InfeasibleMean


@dataclass(frozen=True)
class UniformBounded:
    """``r ~ Categorical(0, ..., s-1)``; ``s`` of 0 or 1 means no delay."""

    staleness: int

    def __post_init__(self):
        if int(self.staleness) != self.staleness or self.staleness < 0:
            raise ConfigError(f"staleness must be a non-negative integer, got {self.staleness!r}")

    @property
    def max_lag(self) -> int:
        """Largest possible ``arrival - gen_iter``."""
        return max(self.staleness, 1)

    @property
    def mean_delay(self) -> float:
        return max(self.staleness - 1, 0) / 2.0


@dataclass(frozen=True)
class GeometricStraggler:
    """Per-source geometric delays, with a random straggler set redrawn every iteration."""

    p_strag: float = 0.1
    p_fast: float = 1.0
    straggler_count: int = 1
    cap: int = 100

    def __post_init__(self):
        for name in ("p_strag", "p_fast"):
            p = getattr(self, name)
            if not 0.0 < p <= 1.0:
                raise ConfigError(f"{name} must lie in (0, 1], got {p!r}")
        if self.straggler_count < 0:
            raise ConfigError("straggler_count must be non-negative")
        if self.cap < 1:
            raise ConfigError("cap must be >= 1")

    @property
    def max_lag(self) -> int:
        return self.cap + 1

    def validate_workers(self, workers: int) -> None:
        if self.straggler_count > workers:
            raise ConfigError(
                f"straggler_count={self.straggler_count} exceeds worker count {workers}"
            )


DelaySpec = Union[UniformBounded, GeometricStraggler]


def sample_delay_uniform(s: int, rng: np.random.Generator) -> int:
    if s < 0:
        raise ValueError("s must be non-negative")
    if s <= 1:
        return 0
    return int(rng.integers(0, s))


def geometric_mean(p: float) -> float:
    """Mean of the geometric law on {0, 1, 2, ...} with success probability ``p``."""
    return (1.0 - p) / p


def _truncated_geometric(p, rng: np.random.Generator, cap: int, size=None):
    # numpy's geometric counts trials (support starts at 1)
    draws = rng.geometric(p, size=size) - 1
    return np.minimum(draws, cap)


def sample_delay_block(
    spec: DelaySpec, workers: int, n_iterations: int, rng: np.random.Generator
) -> np.ndarray:
    """Delay matrices for ``n_iterations`` consecutive iterations, shape ``(n, P, P)``.

    Entry ``[t, p, q]`` is the delay of source ``p``'s update towards
    destination ``q`` at the ``t``-th iteration of the block.
    """
    if workers < 1:
        raise ValueError("need at least one worker")
    shape = (n_iterations, workers, workers)
    if isinstance(spec, UniformBounded):
        if spec.staleness <= 1:
            return np.zeros(shape, dtype=np.int64)
        return rng.integers(0, spec.staleness, size=shape, dtype=np.int64)
    if isinstance(spec, GeometricStraggler):
        spec.validate_workers(workers)
        # a uniformly random subset per iteration: the k smallest of P uniform keys
        keys = rng.random((n_iterations, workers))
        ranks = np.argsort(np.argsort(keys, axis=1), axis=1)
        stragglers = ranks < spec.straggler_count
        p = np.where(stragglers, spec.p_strag, spec.p_fast)
        rows = _truncated_geometric(p, rng, spec.cap)
        return np.repeat(rows[:, :, None], workers, axis=2).astype(np.int64)
    raise TypeError(f"unknown delay spec {spec!r}")


def sample_iteration_delays(
    spec: DelaySpec, workers: int, iteration: int, rng: np.random.Generator
) -> np.ndarray:
    """The ``workers x workers`` delay matrix for one iteration.

    Row ``p`` holds the delays of source ``p`` towards every destination.
    ``iteration`` is accepted for symmetry with the simulation loop; the draws
    depend only on ``rng``.
    """
    return sample_delay_block(spec, workers, 1, rng)[0]


class DelayStream:
    """Hands out one delay matrix per iteration, drawing them ``block`` iterations at a time."""

    def __init__(self, spec: DelaySpec, workers: int, rng: np.random.Generator, block: int = 256):
        self.spec = spec
        self.workers = workers
        self.rng = rng
        self.block = block
        self._buf = None
        self._pos = 0

    def next(self) -> np.ndarray:
        if self._buf is None or self._pos == len(self._buf):
            self._buf = sample_delay_block(self.spec, self.workers, self.block, self.rng)
            self._pos = 0
        out = self._buf[self._pos]
        self._pos += 1
        return out


def match_mean_geometric(
    s_uniform: int, p_strag: float, straggler_count: int, workers: int
) -> float:
    """Non-straggler success probability giving the same mean delay as ``UniformBounded(s_uniform)``.

    Solves ``f * E[geom(p_strag)] + (1 - f) * E[geom(p_fast)] = (s_uniform - 1) / 2``
    with ``f = straggler_count / workers``.
    """
    if not 0 <= straggler_count <= workers:
        raise ConfigError("straggler_count must lie in [0, workers]")
    target = max(s_uniform - 1, 0) / 2.0
    frac = straggler_count / workers
    if straggler_count == workers:
        warnings.warn(
            "every worker is a straggler; the non-straggler rate is undefined, using p_fast=1",
            stacklevel=2,
        )
        return 1.0
    remaining = target - frac * geometric_mean(p_strag)
    if remaining < 0:
        raise InfeasibleMean(
            f"stragglers contribute mean {frac * geometric_mean(p_strag):.4g} "
            f"which exceeds the target mean {target:.4g}"
        )
    fast_mean = remaining / (1.0 - frac)
    return 1.0 / (1.0 + fast_mean)


@dataclass(frozen=True)
class UpdateMsg:
    source: int
    gen_iter: int
    delta: object  # dense ndarray or SparseDelta


@dataclass
class TransitQueue:
    """In-flight updates keyed by arrival iteration.

    ``max_lag``, when set, is checked on every scheduled entry so a
    mis-sampled delay fails loudly instead of silently breaking the staleness bound.
    """

    max_lag: int | None = None
    _heap: list = field(default_factory=list)
    scheduled: int = 0
    drained: int = 0

    def __len__(self) -> int:
        return len(self._heap)

    def schedule(self, msg: UpdateMsg, delays) -> None:
        for dest, r in enumerate(np.asarray(delays).tolist()):
            arrival = msg.gen_iter + 1 + int(r)
            lag = arrival - msg.gen_iter
            if lag < 1 or (self.max_lag is not None and lag > self.max_lag):
                raise AssertionError(
                    f"delay {r} from worker {msg.source} violates the staleness bound"
                )
            heapq.heappush(self._heap, (arrival, msg.gen_iter, msg.source, dest, msg))
            self.scheduled += 1

    def drain(self, iteration: int) -> list[tuple[int, UpdateMsg]]:
        """Pop every entry due at or before ``iteration``.

        Entries come out ordered by ``(gen_iter, source, destination)``.
        """
        due = []
        while self._heap and self._heap[0][0] <= iteration:
            due.append(heapq.heappop(self._heap))
        due.sort(key=lambda e: (e[1], e[2], e[3]))
        self.drained += len(due)
        return [(e[3], e[4]) for e in due]

    def pending_arrivals(self) -> list[int]:
        return sorted(e[0] for e in self._heap)

    def oldest_pending_gen_iter(self) -> int | None:
        if not self._heap:
            return None
        return min(e[1] for e in self._heap)
