"""Variational autoencoder trained by black-box VI with the reparameterization trick."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from stalesim.errors import ConfigError, NonFiniteError
from stalesim.workloads.base import Computed, Layout, Workload, glorot_uniform
from stalesim.workloads.data import ClassificationData


@dataclass(frozen=True)
class VAESpec:
    input_dim: int
    latent_dim: int = 32
    depth: int = 1
    width: int = 256

    def __post_init__(self):
        if not 1 <= self.depth <= 3:
            raise ConfigError("VAE depth must lie in 1..3")


@lru_cache(maxsize=None)
def vae_layout(spec: VAESpec) -> Layout:
    shapes = []
    prev = spec.input_dim
    for i in range(spec.depth):
        shapes += [(f"eW{i}", (prev, spec.width)), (f"eb{i}", (spec.width,))]
        prev = spec.width
    shapes += [
        ("muW", (prev, spec.latent_dim)), ("mub", (spec.latent_dim,)),
        ("lvW", (prev, spec.latent_dim)), ("lvb", (spec.latent_dim,)),
    ]
    prev = spec.latent_dim
    for i in range(spec.depth):
        shapes += [(f"dW{i}", (prev, spec.width)), (f"db{i}", (spec.width,))]
        prev = spec.width
    shapes += [("oW", (prev, spec.input_dim)), ("ob", (spec.input_dim,))]
    return Layout(shapes)


def init_vae(spec: VAESpec, rng) -> np.ndarray:
    layout = vae_layout(spec)
    params = np.zeros(layout.size)
    for name, view in layout.views(params).items():
        if view.ndim == 2:
            view[...] = glorot_uniform(rng, *view.shape)
    return params


def kl_standard_normal(mu, logvar):
    """KL(N(mu, exp(logvar)) || N(0, I)) summed over latent dimensions, per row."""
    return -0.5 * np.sum(1.0 + logvar - mu * mu - np.exp(logvar), axis=-1)


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def vae_loss_and_grad(spec: VAESpec, params, x, eps, with_grad=True):
    """Negative ELBO averaged over the batch, with its gradient.

    Reconstruction uses a unit-variance Gaussian likelihood around a sigmoid
    decoder mean; the constant ``0.5 * D * log(2 pi)`` is dropped.  ``eps``
    holds one standard-normal draw per sample and latent dimension.
    """
    n = x.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    layout = vae_layout(spec)
    v = layout.views(params)
    d = spec.depth

    enc = [x]
    h = x
    for i in range(d):
        h = np.maximum(h @ v[f"eW{i}"] + v[f"eb{i}"], 0.0)
        enc.append(h)
    mu = h @ v["muW"] + v["mub"]
    logvar = h @ v["lvW"] + v["lvb"]
    std = np.exp(0.5 * logvar)
    z = mu + std * eps
    dec = [z]
    h = z
    for i in range(d):
        h = np.maximum(h @ v[f"dW{i}"] + v[f"db{i}"], 0.0)
        dec.append(h)
    out = _sigmoid(h @ v["oW"] + v["ob"])

    diff = out - x
    recon = 0.5 * np.sum(diff * diff, axis=1)
    kl = kl_standard_normal(mu, logvar)
    loss = float(np.mean(recon + kl))
    if not np.isfinite(loss):
        raise NonFiniteError("VAE loss is not finite")
    if not with_grad:
        return loss, None

    grad = np.zeros_like(params)
    g = layout.views(grad)
    delta = diff * out * (1.0 - out) / n
    g["oW"][...] = dec[d].T @ delta
    g["ob"][...] = delta.sum(axis=0)
    back = delta @ v["oW"].T
    for i in range(d - 1, -1, -1):
        back = back * (dec[i + 1] > 0)
        g[f"dW{i}"][...] = dec[i].T @ back
        g[f"db{i}"][...] = back.sum(axis=0)
        back = back @ v[f"dW{i}"].T
    dz = back
    dmu = dz + mu / n
    dlogvar = dz * eps * 0.5 * std + 0.5 * (np.exp(logvar) - 1.0) / n
    henc = enc[d]
    g["muW"][...] = henc.T @ dmu
    g["mub"][...] = dmu.sum(axis=0)
    g["lvW"][...] = henc.T @ dlogvar
    g["lvb"][...] = dlogvar.sum(axis=0)
    back = dmu @ v["muW"].T + dlogvar @ v["lvW"].T
    for i in range(d - 1, -1, -1):
        back = back * (enc[i + 1] > 0)
        g[f"eW{i}"][...] = enc[i].T @ back
        g[f"eb{i}"][...] = back.sum(axis=0)
        if i:
            back = back @ v[f"eW{i}"].T
    if not np.all(np.isfinite(grad)):
        raise NonFiniteError("VAE gradient is not finite")
    return loss, grad


class VariationalAutoencoder(Workload):
    name = "vae"
    metric = "test_loss"

    def __init__(self, data: ClassificationData, depth=1, latent_dim=32, width=256, eval_seed=0):
        self.data = data
        self.spec = VAESpec(data.input_dim, latent_dim, depth, width)
        self._dim = vae_layout(self.spec).size
        # frozen noise keeps evaluation and probe gradients pure functions of params
        eval_rng = np.random.default_rng(eval_seed)
        self.eval_eps = eval_rng.standard_normal((len(data.x_test), latent_dim))
        self.probe_eps = eval_rng.standard_normal((len(data.x_train), latent_dim))

    def n_items(self):
        return len(self.data.x_train)

    def dim(self):
        return self._dim

    def init_params(self, rng):
        return init_vae(self.spec, rng)

    def compute(self, params, worker_state, batch, rng):
        eps = rng.standard_normal((len(batch), self.spec.latent_dim))
        loss, grad = vae_loss_and_grad(self.spec, params, self.data.x_train[batch], eps)
        return Computed("grad", grad, loss)

    def gradient(self, params, indices):
        return vae_loss_and_grad(
            self.spec, params, self.data.x_train[indices], self.probe_eps[indices]
        )[1]

    def objective(self, params, indices):
        return vae_loss_and_grad(
            self.spec, params, self.data.x_train[indices], self.probe_eps[indices], with_grad=False
        )[0]

    def evaluate(self, params, worker_states=None):
        return vae_loss_and_grad(
            self.spec, params, self.data.x_test, self.eval_eps, with_grad=False
        )[0]
