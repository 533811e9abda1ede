"""Per-worker update rules turning a raw gradient into an additive parameter delta.

State lives with the generating worker; the delta that leaves ``apply`` is
what travels through the transit queue and is summed into every cache.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from stalesim.errors import ConfigError, NonFiniteError, UnsupportedOptimizer
from stalesim.sparse import SparseDelta


def _check_rate(name, value, upper=1.0):
    if not 0.0 <= value < upper:
        raise ConfigError(f"{name} must lie in [0, {upper}), got {value!r}")


@dataclass(frozen=True)
class SGD:
    lr: float = 0.01
    # optional step-indexed stepsize, called with the worker's step count
    schedule: Optional[Callable[[int], float]] = field(default=None, compare=False)

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")

    def rate(self, step: int) -> float:
        return self.schedule(step) if self.schedule is not None else self.lr


@dataclass(frozen=True)
class Momentum:
    lr: float = 0.01
    momentum: float = 0.9

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")
        _check_rate("momentum", self.momentum)


@dataclass(frozen=True)
class Adam:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0 or self.eps <= 0:
            raise ConfigError("learning rate and eps must be positive")
        _check_rate("beta1", self.beta1)
        _check_rate("beta2", self.beta2)


@dataclass(frozen=True)
class Adagrad:
    lr: float = 0.01
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0 or self.eps <= 0:
            raise ConfigError("learning rate and eps must be positive")


@dataclass(frozen=True)
class RMSProp:
    lr: float = 0.01
    decay: float = 0.9
    momentum: float = 0.0
    eps: float = 1e-10

    def __post_init__(self):
        if self.lr <= 0 or self.eps <= 0:
            raise ConfigError("learning rate and eps must be positive")
        _check_rate("decay", self.decay)
        _check_rate("momentum", self.momentum)


OptimizerSpec = Union[SGD, Momentum, Adam, Adagrad, RMSProp]

OPTIMIZERS = {
    "sgd": SGD,
    "momentum": Momentum,
    "adam": Adam,
    "adagrad": Adagrad,
    "rmsprop": RMSProp,
}


@dataclass
class OptimizerState:
    step_count: int = 0
    moment1: Optional[np.ndarray] = None
    moment2: Optional[np.ndarray] = None
    velocity: Optional[np.ndarray] = None
    accumulator: Optional[np.ndarray] = None


def init_state(spec: OptimizerSpec, dim: int) -> OptimizerState:
    state = OptimizerState()
    if isinstance(spec, Momentum):
        state.velocity = np.zeros(dim)
    elif isinstance(spec, Adam):
        state.moment1 = np.zeros(dim)
        state.moment2 = np.zeros(dim)
    elif isinstance(spec, Adagrad):
        state.accumulator = np.zeros(dim)
    elif isinstance(spec, RMSProp):
        state.moment2 = np.zeros(dim)
        if spec.momentum:
            state.velocity = np.zeros(dim)
    return state


def apply(state: OptimizerState, spec: OptimizerSpec, grad: np.ndarray) -> np.ndarray:
    """Advance ``state`` by one step and return the delta to add to the parameters."""
    if isinstance(grad, SparseDelta):
        return apply_sparse(state, spec, grad)
    g = np.asarray(grad, dtype=np.float64)
    state.step_count += 1
    t = state.step_count

    if isinstance(spec, SGD):
        delta = -spec.rate(t - 1) * g
    elif isinstance(spec, Momentum):
        v = state.velocity
        v *= spec.momentum
        v += g
        delta = -spec.lr * v
    elif isinstance(spec, Adam):
        m, v = state.moment1, state.moment2
        m *= spec.beta1
        m += (1.0 - spec.beta1) * g
        v *= spec.beta2
        v += (1.0 - spec.beta2) * g * g
        m_hat = m / (1.0 - spec.beta1**t)
        v_hat = v / (1.0 - spec.beta2**t)
        delta = -spec.lr * m_hat / (np.sqrt(v_hat) + spec.eps)
    elif isinstance(spec, Adagrad):
        a = state.accumulator
        a += g * g
        delta = -spec.lr * g / (np.sqrt(a) + spec.eps)
    elif isinstance(spec, RMSProp):
        r = state.moment2
        r *= spec.decay
        r += (1.0 - spec.decay) * g * g
        step = spec.lr * g / np.sqrt(r + spec.eps)
        if state.velocity is not None:
            state.velocity *= spec.momentum
            state.velocity += step
            step = state.velocity
        delta = -step
    else:
        raise UnsupportedOptimizer(f"unknown optimizer spec {spec!r}")

    if not np.all(np.isfinite(delta)):
        raise NonFiniteError(f"{type(spec).__name__} produced a non-finite delta")
    return delta


def apply_sparse(state: OptimizerState, spec: OptimizerSpec, grad: SparseDelta) -> SparseDelta:
    """SGD on a sparse gradient: only the coordinates present are scaled."""
    if not isinstance(spec, SGD):
        raise UnsupportedOptimizer(
            f"{type(spec).__name__} keeps per-coordinate state; sparse workloads support SGD only"
        )
    state.step_count += 1
    delta = grad.scaled(-spec.rate(state.step_count - 1))
    if not delta.is_finite():
        raise NonFiniteError("SGD produced a non-finite sparse delta")
    return delta
