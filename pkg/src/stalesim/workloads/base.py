"""Common workload interface, parameter layouts and per-worker batch samplers."""

from __future__ import annotations

from dataclasses import dataclass
from math import prod

import numpy as np


@dataclass
class Computed:
    """Result of one worker's batch computation.

    ``kind`` is ``"grad"`` when ``vector`` must pass through the optimizer,
    ``"delta"`` when it is already the additive update (Gibbs count deltas).
    """

    kind: str
    vector: object
    loss: float | None = None


class Workload:
    """Base class for everything the simulator can train.

    Subclasses define the data items that get sharded across workers, the
    parameter vector, how a batch turns into an update and how quality is
    measured on worker 0's cache.
    """

    name = "workload"
    metric = "loss"
    sparse = False
    # True when ``compute`` returns ready-made deltas that bypass the optimizer
    emits_deltas = False
    shuffle_batches = True
    supports_probe = True

    def n_items(self) -> int:
        raise NotImplementedError

    def dim(self) -> int:
        raise NotImplementedError

    def default_batch_size(self, workers: int) -> int:
        return 32

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def init_worker_states(self, shards, params, rng):
        """Worker-local, non-shared state; ``params`` may be updated in place."""
        return [None] * len(shards)

    def compute(self, params, worker_state, batch, rng) -> Computed:
        raise NotImplementedError

    def evaluate(self, params, worker_states=None) -> float:
        raise NotImplementedError

    def gradient(self, params, indices) -> np.ndarray:
        """Exact mean gradient over ``indices`` (dense)."""
        raise NotImplementedError

    def objective(self, params, indices) -> float:
        raise NotImplementedError


class Layout:
    """Named views into one flat parameter vector."""

    def __init__(self, shapes):
        self.shapes = list(shapes)
        self.offsets = {}
        off = 0
        for name, shape in self.shapes:
            size = prod(shape)
            self.offsets[name] = (off, off + size, tuple(shape))
            off += size
        self.size = off

    def views(self, vector):
        return {
            name: vector[a:b].reshape(shape) for name, (a, b, shape) in self.offsets.items()
        }

    def slice(self, name):
        a, b, _ = self.offsets[name]
        return slice(a, b)


def glorot_uniform(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def shard_items(n_items: int, workers: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Seeded shuffle, then contiguous equal split; the remainder goes to the last shard."""
    perm = rng.permutation(n_items)
    base = n_items // workers
    shards = [perm[p * base : (p + 1) * base] for p in range(workers - 1)]
    shards.append(perm[(workers - 1) * base :])
    return shards


class BatchSampler:
    """Walks a worker's shard in epochs.

    With ``shuffle`` the shard is permuted at the start of each epoch and a
    short tail is dropped; without it the shard is read cyclically in order.
    """

    def __init__(self, shard, batch_size, rng, shuffle=True):
        self.shard = np.asarray(shard)
        self.batch_size = max(1, min(int(batch_size), max(len(self.shard), 1)))
        self.rng = rng
        self.shuffle = shuffle
        self._order = None
        self._pos = 0

    def next(self) -> np.ndarray:
        n = len(self.shard)
        if n == 0:
            return self.shard
        if not self.shuffle:
            idx = (self._pos + np.arange(self.batch_size)) % n
            self._pos = (self._pos + self.batch_size) % n
            return self.shard[idx]
        if self._order is None or self._pos + self.batch_size > n:
            self._order = self.rng.permutation(n)
            self._pos = 0
        batch = self.shard[self._order[self._pos : self._pos + self.batch_size]]
        self._pos += self.batch_size
        return batch
