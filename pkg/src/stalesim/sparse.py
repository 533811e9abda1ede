"""Sparse parameter deltas (index/value pairs into a flat parameter vector)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SparseDelta:
    indices: np.ndarray
    values: np.ndarray
    dim: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        val = np.asarray(self.values, dtype=np.float64)
        if idx.shape != val.shape or idx.ndim != 1:
            raise ValueError("indices and values must be 1-d arrays of equal length")
        if idx.size and (idx.min() < 0 or idx.max() >= self.dim):
            raise IndexError("sparse delta index outside the parameter space")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)

    @classmethod
    def empty(cls, dim: int) -> "SparseDelta":
        return cls(np.empty(0, np.int64), np.empty(0), dim)

    @classmethod
    def from_dense(cls, dense: np.ndarray) -> "SparseDelta":
        idx = np.flatnonzero(dense)
        return cls(idx, dense[idx], dense.size)

    def __len__(self) -> int:
        return self.indices.size

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        np.add.at(out, self.indices, self.values)
        return out

    def scaled(self, factor: float) -> "SparseDelta":
        return SparseDelta(self.indices, factor * self.values, self.dim)

    def add_into(self, target: np.ndarray) -> None:
        np.add.at(target, self.indices, self.values)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))


def add_delta(target: np.ndarray, delta) -> None:
    """Accumulate a dense or sparse delta into ``target`` in place."""
    if isinstance(delta, SparseDelta):
        delta.add_into(target)
    else:
        target += delta


def densify(delta, dim: int | None = None) -> np.ndarray:
    if isinstance(delta, SparseDelta):
        return delta.to_dense()
    return np.asarray(delta, dtype=np.float64)
