"""Fully connected ReLU networks with a softmax output; depth 0 is multi-class logistic regression."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from stalesim.errors import ConfigError, NonFiniteError
from stalesim.workloads.base import Computed, Layout, Workload, glorot_uniform
from stalesim.workloads.data import ClassificationData


@dataclass(frozen=True)
class NetSpec:
    input_dim: int
    output_dim: int
    depth: int = 0
    width: int = 256

    def __post_init__(self):
        if not 0 <= self.depth <= 6:
            raise ConfigError("network depth must lie in 0..6")

    def layer_sizes(self):
        return [self.input_dim] + [self.width] * self.depth + [self.output_dim]

    def layout(self) -> Layout:
        return _net_layout(self)


@lru_cache(maxsize=None)
def _net_layout(spec: NetSpec) -> Layout:
    sizes = spec.layer_sizes()
    shapes = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        shapes += [(f"W{i}", (a, b)), (f"b{i}", (b,))]
    return Layout(shapes)


def init_net(spec: NetSpec, rng) -> np.ndarray:
    layout = spec.layout()
    params = np.zeros(layout.size)
    views = layout.views(params)
    sizes = spec.layer_sizes()
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        views[f"W{i}"][...] = glorot_uniform(rng, a, b)
    return params


def _log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def dnn_logits(spec: NetSpec, params, x):
    views = spec.layout().views(params)
    h = x
    for i in range(spec.depth):
        h = np.maximum(h @ views[f"W{i}"] + views[f"b{i}"], 0.0)
    return h @ views[f"W{spec.depth}"] + views[f"b{spec.depth}"]


def dnn_forward_backward(spec: NetSpec, params, x, y):
    """Mean softmax cross-entropy over the batch and its gradient w.r.t. ``params``."""
    if len(y) == 0:
        raise ValueError("empty batch")
    layout = spec.layout()
    views = layout.views(params)
    acts = [x]
    h = x
    for i in range(spec.depth):
        h = np.maximum(h @ views[f"W{i}"] + views[f"b{i}"], 0.0)
        acts.append(h)
    logits = h @ views[f"W{spec.depth}"] + views[f"b{spec.depth}"]
    logp = _log_softmax(logits)
    n = len(y)
    loss = -logp[np.arange(n), y].mean()

    grad = np.zeros_like(params)
    gviews = layout.views(grad)
    d = np.exp(logp)
    d[np.arange(n), y] -= 1.0
    d /= n
    for i in range(spec.depth, -1, -1):
        gviews[f"W{i}"][...] = acts[i].T @ d
        gviews[f"b{i}"][...] = d.sum(axis=0)
        if i:
            d = (d @ views[f"W{i}"].T) * (acts[i] > 0)
    if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
        raise NonFiniteError("network loss or gradient is not finite")
    return float(loss), grad


def dnn_accuracy(spec: NetSpec, params, x, y) -> float:
    # argmax returns the first maximum, so ties go to the lowest class index
    pred = np.argmax(dnn_logits(spec, params, x), axis=1)
    return float(np.mean(pred == y))


class DenseNet(Workload):
    name = "dnn"
    metric = "test_accuracy"

    def __init__(self, data: ClassificationData, depth=0, width=256):
        self.data = data
        self.spec = NetSpec(data.input_dim, data.n_classes, depth, width)
        self._dim = self.spec.layout().size

    def n_items(self):
        return len(self.data.y_train)

    def dim(self):
        return self._dim

    def init_params(self, rng):
        return init_net(self.spec, rng)

    def compute(self, params, worker_state, batch, rng):
        loss, grad = dnn_forward_backward(
            self.spec, params, self.data.x_train[batch], self.data.y_train[batch]
        )
        return Computed("grad", grad, loss)

    def gradient(self, params, indices):
        return dnn_forward_backward(
            self.spec, params, self.data.x_train[indices], self.data.y_train[indices]
        )[1]

    def objective(self, params, indices):
        return dnn_forward_backward(
            self.spec, params, self.data.x_train[indices], self.data.y_train[indices]
        )[0]

    def evaluate(self, params, worker_states=None):
        return dnn_accuracy(self.spec, params, self.data.x_test, self.data.y_test)
