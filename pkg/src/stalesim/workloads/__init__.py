"""Model families the simulator can train, plus their datasets."""

from stalesim.errors import ConfigError
from stalesim.workloads.base import BatchSampler, Computed, Layout, Workload, shard_items
from stalesim.workloads.data import (
    ClassificationData,
    Corpus,
    RatingsData,
    load_dataset,
)
from stalesim.workloads.lda import LDA, lda_gibbs_batch, lda_loglik
from stalesim.workloads.mf import MatrixFactorization, mf_gradient, mf_loss
from stalesim.workloads.nets import DenseNet, NetSpec, dnn_accuracy, dnn_forward_backward
from stalesim.workloads.quadratic import Quadratic
from stalesim.workloads.vae import VAESpec, VariationalAutoencoder, vae_loss_and_grad

WORKLOAD_KINDS = ("dnn", "mlr", "mf", "lda", "vae", "quadratic")


def build_workload(kind, dataset=None, **params):
    """Construct a workload; ``dataset`` is required for every kind but ``quadratic``."""
    if kind in ("dnn", "mlr"):
        depth = 0 if kind == "mlr" else params.pop("depth", 1)
        return DenseNet(dataset, depth=depth, **params)
    if kind == "mf":
        return MatrixFactorization(dataset, **params)
    if kind == "lda":
        return LDA(dataset, **params)
    if kind == "vae":
        return VariationalAutoencoder(dataset, **params)
    if kind == "quadratic":
        return Quadratic(**params)
    raise ConfigError(f"unknown workload kind {kind!r}")


__all__ = [
    "BatchSampler", "ClassificationData", "Computed", "Corpus", "DenseNet", "LDA", "Layout",
    "MatrixFactorization", "NetSpec", "Quadratic", "RatingsData", "VAESpec",
    "VariationalAutoencoder", "WORKLOAD_KINDS", "Workload", "build_workload", "dnn_accuracy",
    "dnn_forward_backward", "lda_gibbs_batch", "lda_loglik", "load_dataset", "mf_gradient",
    "mf_loss", "shard_items", "vae_loss_and_grad",
]
