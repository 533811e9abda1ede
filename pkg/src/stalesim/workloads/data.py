"""Dataset ingestion (MNIST IDX, MovieLens ratings, bag-of-words) and synthetic generators."""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from stalesim.errors import ConfigError, FormatError, MissingFile

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049

DATA_DIR_ENV = "STALESIM_DATA_DIR"


@dataclass
class ClassificationData:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    n_classes: int

    @property
    def input_dim(self) -> int:
        return self.x_train.shape[1]


@dataclass
class RatingsData:
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    n_rows: int
    n_cols: int
    planted: tuple | None = None

    def __len__(self):
        return self.values.size


@dataclass
class Corpus:
    """Documents stored CSR-style: tokens of doc ``i`` are ``tokens[offsets[i]:offsets[i+1]]``."""

    tokens: np.ndarray
    offsets: np.ndarray
    vocab_size: int

    @property
    def n_docs(self) -> int:
        return self.offsets.size - 1

    def doc(self, i):
        return self.tokens[self.offsets[i] : self.offsets[i + 1]]

    @classmethod
    def from_docs(cls, docs, vocab_size=None):
        lengths = np.array([len(d) for d in docs], dtype=np.int64)
        offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
        tokens = (
            np.concatenate([np.asarray(d, dtype=np.int64) for d in docs])
            if docs and offsets[-1]
            else np.empty(0, np.int64)
        )
        if vocab_size is None:
            vocab_size = int(tokens.max()) + 1 if tokens.size else 0
        return cls(tokens, offsets, int(vocab_size))


def resolve_path(path) -> Path:
    """Relative paths are looked up under ``$STALESIM_DATA_DIR`` when set."""
    p = Path(path)
    root = os.environ.get(DATA_DIR_ENV)
    if not p.is_absolute() and root and not p.exists():
        p = Path(root) / p
    return p


def _open(path):
    path = resolve_path(path)
    if not path.exists():
        raise MissingFile(f"no such file: {path}")
    if path.suffix == ".gz":
        return gzip.open(path, "rb"), path
    return open(path, "rb"), path


def parse_idx(raw: bytes, expected_magic: int | None = None, path=None) -> np.ndarray:
    """Decode an IDX file holding unsigned bytes (type code 0x08)."""
    if len(raw) < 4:
        raise FormatError("truncated IDX header", path=path, position=0)
    magic = struct.unpack(">I", raw[:4])[0]
    if expected_magic is not None and magic != expected_magic:
        raise FormatError(
            f"bad IDX magic {magic:#010x}, expected {expected_magic:#010x}", path=path, position=0
        )
    if magic >> 8 != 0x08:
        raise FormatError(f"unsupported IDX element type in magic {magic:#010x}", path=path, position=0)
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError("truncated IDX dimension block", path=path, position=len(raw))
    shape = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(shape)) if shape else 1
    if len(raw) - header != count:
        raise FormatError(
            f"IDX payload has {len(raw) - header} bytes, header promises {count}",
            path=path,
            position=header,
        )
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(shape)


def load_idx(path, expected_magic=None) -> np.ndarray:
    fh, resolved = _open(path)
    with fh:
        raw = fh.read()
    return parse_idx(raw, expected_magic, path=resolved)


def load_mnist(root) -> ClassificationData:
    """Read the four standard MNIST IDX files (optionally gzipped) from ``root``."""
    root = resolve_path(root)

    def find(stem):
        for name in (stem, stem + ".gz"):
            if (root / name).exists():
                return root / name
        raise MissingFile(f"{stem} not found under {root}")

    x_train = load_idx(find("train-images-idx3-ubyte"), IDX_IMAGES_MAGIC)
    y_train = load_idx(find("train-labels-idx1-ubyte"), IDX_LABELS_MAGIC)
    x_test = load_idx(find("t10k-images-idx3-ubyte"), IDX_IMAGES_MAGIC)
    y_test = load_idx(find("t10k-labels-idx1-ubyte"), IDX_LABELS_MAGIC)
    scale = lambda x: x.reshape(len(x), -1).astype(np.float64) / 255.0
    return ClassificationData(
        scale(x_train), y_train.astype(np.int64), scale(x_test), y_test.astype(np.int64), 10
    )


def load_movielens(path) -> RatingsData:
    """Parse ``UserID::MovieID::Rating::Timestamp`` lines; ids are re-indexed densely."""
    fh, resolved = _open(path)
    users, movies, ratings = [], [], []
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.decode("latin-1").strip()
            if not line:
                continue
            parts = line.split("::")
            if len(parts) != 4:
                raise FormatError("expected 4 '::'-separated fields", path=resolved, position=lineno)
            try:
                users.append(int(parts[0]))
                movies.append(int(parts[1]))
                ratings.append(float(parts[2]))
            except ValueError as exc:
                raise FormatError(str(exc), path=resolved, position=lineno) from None
    if not ratings:
        raise FormatError("no ratings found", path=resolved, position=1)
    u_ids, rows = np.unique(users, return_inverse=True)
    m_ids, cols = np.unique(movies, return_inverse=True)
    return RatingsData(
        rows.astype(np.int64), cols.astype(np.int64), np.asarray(ratings), u_ids.size, m_ids.size
    )


def load_bow(path, vocab_size=None) -> Corpus:
    """One document per line, whitespace-separated integer token ids."""
    fh, resolved = _open(path)
    docs = []
    with fh:
        for lineno, line in enumerate(fh, start=1):
            try:
                docs.append([int(tok) for tok in line.split()])
            except ValueError:
                raise FormatError("non-integer token id", path=resolved, position=lineno) from None
            if any(t < 0 for t in docs[-1]):
                raise FormatError("negative token id", path=resolved, position=lineno)
    corpus = Corpus.from_docs(docs, vocab_size)
    if corpus.tokens.size and corpus.tokens.max() >= corpus.vocab_size:
        raise FormatError("token id exceeds vocab_size", path=resolved)
    return corpus


def gaussian_clusters(
    n_train=6000,
    n_test=2000,
    dim=64,
    n_classes=10,
    clusters_per_class=1,
    separation=3.0,
    noise=1.0,
    seed=0,
) -> ClassificationData:
    """Each class is a mixture of isotropic Gaussian blobs around random centres."""
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, separation / np.sqrt(2.0), size=(n_classes, clusters_per_class, dim))

    def draw(n):
        y = np.arange(n) % n_classes
        y = rng.permutation(y)
        c = rng.integers(0, clusters_per_class, size=n)
        x = centers[y, c] + noise * rng.standard_normal((n, dim))
        return x, y.astype(np.int64)

    x_train, y_train = draw(n_train)
    x_test, y_test = draw(n_test)
    return ClassificationData(x_train, y_train, x_test, y_test, n_classes)


def synthetic_digits(
    n_train=6000,
    n_test=2000,
    side=14,
    n_classes=10,
    clusters_per_class=4,
    noise=0.25,
    seed=0,
) -> ClassificationData:
    """MNIST-like stand-in: pixel intensities in [0, 1] on a ``side x side`` grid.

    Every class owns a few smooth stroke-like prototypes; samples are a
    randomly shifted prototype plus pixel noise, clipped to [0, 1].
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:side, 0:side] / (side - 1)
    protos = np.zeros((n_classes, clusters_per_class, side, side))
    for k in range(n_classes):
        for c in range(clusters_per_class):
            img = np.zeros((side, side))
            for _ in range(3):
                cy, cx = rng.uniform(0.15, 0.85, size=2)
                sy, sx = rng.uniform(0.05, 0.3, size=2)
                img += np.exp(-((yy - cy) ** 2) / (2 * sy**2) - ((xx - cx) ** 2) / (2 * sx**2))
            protos[k, c] = np.clip(img, 0.0, 1.0)

    def draw(n):
        y = rng.permutation(np.arange(n) % n_classes)
        c = rng.integers(0, clusters_per_class, size=n)
        shifts = rng.integers(-1, 2, size=(n, 2))
        x = np.empty((n, side, side))
        for i in range(n):
            x[i] = np.roll(protos[y[i], c[i]], tuple(shifts[i]), axis=(0, 1))
        x += noise * rng.standard_normal(x.shape)
        return np.clip(x, 0.0, 1.0).reshape(n, -1), y.astype(np.int64)

    x_train, y_train = draw(n_train)
    x_test, y_test = draw(n_test)
    return ClassificationData(x_train, y_train, x_test, y_test, n_classes)


def planted_low_rank(
    n_rows=100, n_cols=100, rank=5, noise=0.1, observed=1.0, seed=0
) -> RatingsData:
    """``D = U V^T + noise`` with factor entries ~ N(0, 1/sqrt(rank)) so entries have unit scale."""
    rng = np.random.default_rng(seed)
    scale = rank**-0.25
    U = rng.normal(0.0, scale, size=(n_rows, rank))
    V = rng.normal(0.0, scale, size=(n_cols, rank))
    full = U @ V.T + noise * rng.standard_normal((n_rows, n_cols))
    mask = rng.random((n_rows, n_cols)) < observed
    rows, cols = np.nonzero(mask)
    return RatingsData(rows.astype(np.int64), cols.astype(np.int64), full[rows, cols], n_rows, n_cols, (U, V))


def lda_corpus(
    n_docs=2000, vocab_size=1000, n_topics=10, doc_length=50, alpha=0.1, beta=0.1, seed=0
) -> Corpus:
    """Sample a corpus from the LDA generative process with Poisson document lengths."""
    rng = np.random.default_rng(seed)
    topics = rng.dirichlet(np.full(vocab_size, beta), size=n_topics)
    mixtures = rng.dirichlet(np.full(n_topics, alpha), size=n_docs)
    lengths = np.maximum(rng.poisson(doc_length, size=n_docs), 1)
    docs = []
    for d in range(n_docs):
        z = rng.choice(n_topics, size=lengths[d], p=mixtures[d])
        counts = np.bincount(z, minlength=n_topics)
        words = [rng.choice(vocab_size, size=m, p=topics[k]) for k, m in enumerate(counts) if m]
        docs.append(rng.permutation(np.concatenate(words)))
    return Corpus.from_docs(docs, vocab_size)


GENERATORS = {
    "clusters": gaussian_clusters,
    "digits": synthetic_digits,
    "lowrank": planted_low_rank,
    "lda": lda_corpus,
}


def load_dataset(kind: str, path=None, seed=0, **params):
    """Load a file-backed dataset, or synthesize one when ``path`` is None."""
    if path is not None:
        if kind == "mnist":
            return load_mnist(path)
        if kind == "movielens":
            return load_movielens(path)
        if kind == "bow":
            return load_bow(path, params.get("vocab_size"))
        raise ConfigError(f"no file loader for dataset kind {kind!r}")
    try:
        gen = GENERATORS[kind]
    except KeyError:
        raise ConfigError(f"unknown synthetic dataset {kind!r}") from None
    return gen(seed=seed, **params)
