"""Latent Dirichlet allocation by collapsed Gibbs sampling over shared count statistics.

The shared parameter vector is ``[phi (W x K, row-major), phi_tilde (K)]``.
Topic assignments ``z`` and document-topic counts ``theta`` stay on the
worker that owns the documents.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
from scipy.special import gammaln

from stalesim.errors import NonFiniteError
from stalesim.sparse import SparseDelta
from stalesim.workloads.base import Computed, Workload
from stalesim.workloads.data import Corpus


@numba.njit(cache=True)
def _gibbs_sweep(docs, offsets, words, z, theta, phi, phi_t, alpha, beta, w_beta, uniforms):
    n_topics = phi_t.shape[0]
    weights = np.empty(n_topics)
    u_pos = 0
    for d in docs:
        for t in range(offsets[d], offsets[d + 1]):
            w = words[t]
            k_old = z[t]
            theta[d, k_old] -= 1.0
            phi[w, k_old] -= 1.0
            phi_t[k_old] -= 1.0
            total = 0.0
            for k in range(n_topics):
                pw = phi[w, k]
                pt = phi_t[k]
                if pw < 0.0:
                    pw = 0.0
                if pt < 0.0:
                    pt = 0.0
                total += (theta[d, k] + alpha) * (pw + beta) / (pt + w_beta)
                weights[k] = total
            u = uniforms[u_pos]
            u_pos += 1
            if total > 0.0:
                target = u * total
                k_new = n_topics - 1
                for k in range(n_topics):
                    if target < weights[k]:
                        k_new = k
                        break
            else:
                k_new = min(int(u * n_topics), n_topics - 1)
            z[t] = k_new
            theta[d, k_new] += 1.0
            phi[w, k_new] += 1.0
            phi_t[k_new] += 1.0


def lda_conditional(theta_d, phi_w, phi_t, alpha, beta, vocab_size):
    """Normalised full conditional over topics for one token (its own count already removed)."""
    weights = (theta_d + alpha) * (np.maximum(phi_w, 0) + beta) / (
        np.maximum(phi_t, 0) + vocab_size * beta
    )
    total = weights.sum()
    if total <= 0:
        return np.full(len(phi_t), 1.0 / len(phi_t))
    return weights / total


@dataclass
class LDAWorkerState:
    docs: np.ndarray  # global ids, in shard order
    offsets: np.ndarray  # local CSR offsets
    words: np.ndarray
    z: np.ndarray
    theta: np.ndarray
    local_index: dict

    def local_docs(self, global_ids):
        return np.array([self.local_index[int(g)] for g in global_ids], dtype=np.int64)


def lda_gibbs_batch(phi, phi_t, state: LDAWorkerState, batch_docs, alpha, beta, rng):
    """Resample every token of ``batch_docs`` and return the net count delta.

    ``phi``/``phi_t`` are the worker's cached counts and are not modified; the
    sweep runs on a private copy that accumulates this batch's own changes.
    Returns ``(delta_phi, delta_phi_t)`` as dense arrays.
    """
    local = state.local_docs(batch_docs)
    n_tokens = int(sum(state.offsets[d + 1] - state.offsets[d] for d in local))
    uniforms = rng.random(n_tokens)
    work_phi = np.array(phi, dtype=np.float64, copy=True)
    work_t = np.array(phi_t, dtype=np.float64, copy=True)
    _gibbs_sweep(
        local, state.offsets, state.words, state.z, state.theta,
        work_phi, work_t, float(alpha), float(beta), float(phi.shape[0] * beta), uniforms,
    )
    return work_phi - phi, work_t - phi_t


def lda_loglik(phi, phi_t, theta, alpha, beta) -> float:
    """Complete-data log likelihood ``log p(w | z) + log p(z)`` (Dirichlet-multinomial form).

    Negative counts, which stale caches can transiently hold, are clamped to 0.
    """
    phi = np.maximum(np.asarray(phi, dtype=np.float64), 0.0)
    phi_t = np.maximum(np.asarray(phi_t, dtype=np.float64), 0.0)
    theta = np.asarray(theta, dtype=np.float64)
    vocab, n_topics = phi.shape
    ll_words = n_topics * (gammaln(vocab * beta) - vocab * gammaln(beta))
    ll_words += np.sum(gammaln(phi + beta)) - np.sum(gammaln(phi_t + vocab * beta))
    n_docs = theta.shape[0]
    ll_topics = n_docs * (gammaln(n_topics * alpha) - n_topics * gammaln(alpha))
    ll_topics += np.sum(gammaln(theta + alpha)) - np.sum(gammaln(theta.sum(axis=1) + n_topics * alpha))
    value = float(ll_words + ll_topics)
    if not np.isfinite(value):
        raise NonFiniteError("LDA log likelihood is not finite")
    return value


class LDA(Workload):
    name = "lda"
    metric = "loglik"
    sparse = True
    emits_deltas = True
    shuffle_batches = False
    supports_probe = False

    def __init__(self, corpus: Corpus, n_topics=10, alpha=0.1, beta=0.1):
        self.corpus = corpus
        self.n_topics = n_topics
        self.alpha = alpha
        self.beta = beta
        self.vocab_size = corpus.vocab_size
        self._phi_size = self.vocab_size * n_topics

    def n_items(self):
        return self.corpus.n_docs

    def dim(self):
        return self._phi_size + self.n_topics

    def default_batch_size(self, workers):
        return max(1, self.corpus.n_docs // (10 * workers))

    def split(self, params):
        phi = params[: self._phi_size].reshape(self.vocab_size, self.n_topics)
        return phi, params[self._phi_size :]

    def init_params(self, rng):
        return np.zeros(self.dim())

    def init_worker_states(self, shards, params, rng):
        phi, phi_t = self.split(params)
        states = []
        for shard in shards:
            docs = np.asarray(shard, dtype=np.int64)
            lengths = self.corpus.offsets[docs + 1] - self.corpus.offsets[docs]
            offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
            words = (
                np.concatenate([self.corpus.doc(d) for d in docs]).astype(np.int64)
                if offsets[-1]
                else np.empty(0, np.int64)
            )
            z = rng.integers(0, self.n_topics, size=words.size)
            theta = np.zeros((docs.size, self.n_topics))
            doc_of_token = np.repeat(np.arange(docs.size), lengths)
            np.add.at(theta, (doc_of_token, z), 1.0)
            np.add.at(phi, (words, z), 1.0)
            np.add.at(phi_t, z, 1.0)
            states.append(
                LDAWorkerState(docs, offsets, words, z, theta, {int(g): i for i, g in enumerate(docs)})
            )
        return states

    def compute(self, params, worker_state, batch, rng):
        phi, phi_t = self.split(params)
        d_phi, d_t = lda_gibbs_batch(phi, phi_t, worker_state, batch, self.alpha, self.beta, rng)
        dense = np.concatenate([d_phi.ravel(), d_t])
        return Computed("delta", SparseDelta.from_dense(dense))

    def evaluate(self, params, worker_states=None):
        phi, phi_t = self.split(params)
        if worker_states:
            theta = np.concatenate([s.theta for s in worker_states], axis=0)
        else:
            theta = np.zeros((0, self.n_topics))
        return lda_loglik(phi, phi_t, theta, self.alpha, self.beta)
