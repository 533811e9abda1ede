"""Experiment configuration: a flat ``section.key = value`` text format.

Example::

    # DNN on the synthetic digits set, 8 workers
    workload.kind = dnn
    workload.depth = 3
    data.kind = digits
    optimizer.kind = sgd
    optimizer.lr = 0.01
    delay.kind = uniform
    delay.staleness = 4
    run.workers = 8
    run.seeds = 0, 1, 2
    run.budget = 77824
    target.metric = test_accuracy
    target.threshold = 0.92
    sweep.staleness = 0, 4, 16
    output.dir = out/dnn

Lines starting with ``#`` are comments.  Values are parsed as int, float,
``true``/``false`` or string; keys under ``sweep.`` and ``run.seeds`` are
comma-separated lists.
"""

from __future__ import annotations

import copy
import hashlib
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

from stalesim import optim
from stalesim.delay import GeometricStraggler, UniformBounded, match_mean_geometric
from stalesim.errors import ConfigError, MissingFile
from stalesim.metrics import ConvergenceTarget
from stalesim.workloads import build_workload as _build_workload
from stalesim.workloads import data as datasets

SECTIONS = ("workload", "data", "optimizer", "delay", "run", "target", "probe", "theorem", "sweep", "output")
SWEEP_AXES = ("staleness", "workers", "optimizer", "depth")
FILE_KINDS = ("mnist", "movielens", "bow")

DEFAULT_TARGETS = {
    "dnn": ("test_accuracy", 0.92, "at-least"),
    "mlr": ("test_accuracy", 0.92, "at-least"),
    "vae": ("test_loss", 130.0, "at-most"),
    "mf": ("train_loss", 0.5, "at-most"),
}
DEFAULT_DATA = {"dnn": "digits", "mlr": "digits", "vae": "digits", "mf": "lowrank", "lda": "lda"}


def parse_value(text: str):
    text = text.strip()
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ", ".join(format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _is_list_key(key):
    return key.startswith("sweep.") or key == "run.seeds"


def parse_text(text: str) -> dict:
    """Flat ``{dotted_key: value}`` mapping from config text."""
    flat = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if "." not in key or key.split(".", 1)[0] not in SECTIONS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if _is_list_key(key):
            flat[key] = [parse_value(v) for v in value.split(",") if v.strip()]
        else:
            flat[key] = parse_value(value)
    return flat


@dataclass
class ExperimentConfig:
    workload: dict = field(default_factory=lambda: {"kind": "mlr"})
    data: dict = field(default_factory=dict)
    optimizer: dict = field(default_factory=lambda: {"kind": "sgd"})
    delay: dict = field(default_factory=lambda: {"kind": "uniform", "staleness": 0})
    run: dict = field(default_factory=dict)
    target: dict = field(default_factory=dict)
    probe: dict = field(default_factory=dict)
    theorem: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)

    # -- parsing / serialisation ------------------------------------------------

    @classmethod
    def from_flat(cls, flat: dict) -> "ExperimentConfig":
        sections = {name: {} for name in SECTIONS}
        for key, value in flat.items():
            sec, sub = key.split(".", 1)
            sections[sec][sub] = value
        cfg = cls(**{k: v for k, v in sections.items() if v or k not in ("workload", "optimizer", "delay")})
        cfg.validate()
        return cfg

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        return cls.from_flat(parse_text(text))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        cfg = cls.from_text(path.read_text())
        cfg.source = path
        return cfg

    def flat(self) -> dict:
        out = {}
        for sec in SECTIONS:
            for key, value in sorted(getattr(self, sec).items()):
                out[f"{sec}.{key}"] = value
        return out

    def to_text(self) -> str:
        return "".join(f"{k} = {format_value(v)}\n" for k, v in self.flat().items())

    def copy(self) -> "ExperimentConfig":
        return copy.deepcopy(self)

    # -- typed accessors -------------------------------------------------------

    @property
    def kind(self) -> str:
        return self.workload.get("kind", "mlr")

    @property
    def workers(self) -> int:
        return int(self.run.get("workers", 1))

    @property
    def seeds(self) -> list:
        seeds = self.run.get("seeds", [0])
        return [int(s) for s in (seeds if isinstance(seeds, list) else [seeds])]

    @property
    def budget(self) -> int:
        return int(self.run.get("budget", 77824))

    @property
    def eval_interval(self) -> int:
        return int(self.run.get("eval_interval", 50))

    @property
    def batch_size(self):
        bs = self.run.get("batch_size")
        return None if bs is None else int(bs)

    @property
    def staleness(self) -> int:
        return int(self.delay.get("staleness", self.delay.get("match_staleness", 0)))

    @property
    def outdir(self) -> Path:
        return Path(self.output.get("dir", "stalesim_out"))

    def validate(self) -> None:
        if self.kind not in ("dnn", "mlr", "mf", "lda", "vae", "quadratic"):
            raise ConfigError(f"unknown workload.kind {self.kind!r}")
        if self.workers < 1:
            raise ConfigError("run.workers must be >= 1")
        if self.budget < 0:
            raise ConfigError("run.budget must be >= 0")
        if self.eval_interval < 1:
            raise ConfigError("run.eval_interval must be >= 1")
        if not self.seeds:
            raise ConfigError("run.seeds must not be empty")
        if self.optimizer.get("kind", "sgd") not in optim.OPTIMIZERS:
            raise ConfigError(f"unknown optimizer.kind {self.optimizer.get('kind')!r}")
        if self.delay.get("kind", "uniform") not in ("uniform", "geometric"):
            raise ConfigError(f"unknown delay.kind {self.delay.get('kind')!r}")
        for axis, values in self.sweep.items():
            if axis not in SWEEP_AXES:
                raise ConfigError(f"unknown sweep axis {axis!r}")
            if not values:
                raise ConfigError(f"sweep.{axis} is empty")
        path = self.data.get("path")
        if path is not None and not datasets.resolve_path(path).exists():
            raise ConfigError(f"data file not found: {path}")
        # build the cheap objects eagerly so errors surface at load time
        build_optimizer(self)
        build_delay(self)
        build_target(self)

    def fingerprint(self) -> str:
        flat = self.flat()
        for key in ("run.seeds", "output.dir"):
            flat.pop(key, None)
        text = "".join(f"{k}={format_value(v)}\n" for k, v in sorted(flat.items()))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def run_id(self, seed: int) -> str:
        return hashlib.sha256(f"{self.fingerprint()}:{seed}".encode()).hexdigest()[:12]


def build_optimizer(cfg: ExperimentConfig):
    params = dict(cfg.optimizer)
    kind = params.pop("kind", "sgd")
    cls = optim.OPTIMIZERS.get(kind)
    if cls is None:
        raise ConfigError(f"unknown optimizer {kind!r}")
    try:
        return cls(**params)
    except TypeError as exc:
        raise ConfigError(f"bad optimizer parameters: {exc}") from None


def build_delay(cfg: ExperimentConfig):
    params = dict(cfg.delay)
    kind = params.pop("kind", "uniform")
    if kind == "uniform":
        return UniformBounded(int(params.get("staleness", 0)))
    p_strag = float(params.get("p_strag", 0.1))
    count = int(params.get("stragglers", 1))
    cap = int(params.get("cap", 100))
    if "match_staleness" in params:
        p_fast = match_mean_geometric(int(params["match_staleness"]), p_strag, count, cfg.workers)
    else:
        p_fast = float(params.get("p_fast", 1.0))
    spec = GeometricStraggler(p_strag, p_fast, count, cap)
    spec.validate_workers(cfg.workers)
    return spec


def build_target(cfg: ExperimentConfig):
    default = DEFAULT_TARGETS.get(cfg.kind)
    metric = cfg.target.get("metric", default[0] if default else None)
    if metric is None or cfg.target.get("enabled", True) is False:
        return None
    if "threshold" in cfg.target:
        threshold = float(cfg.target["threshold"])
    elif default and metric == default[0]:
        threshold = default[1]
    else:
        raise ConfigError("target.threshold is required")
    direction = cfg.target.get("direction", default[2] if default and metric == default[0] else "at-least")
    return ConvergenceTarget(metric, threshold, direction)


def _freeze(d):
    return tuple(sorted((k, tuple(v) if isinstance(v, list) else v) for k, v in d.items()))


@lru_cache(maxsize=8)
def _load_data_cached(frozen):
    params = dict(frozen)
    kind = params.pop("kind")
    path = params.pop("path", None)
    seed = params.pop("seed", 0)
    return datasets.load_dataset(kind, path, seed=seed, **params)


def build_dataset(cfg: ExperimentConfig):
    if cfg.kind == "quadratic":
        return None
    params = dict(cfg.data)
    params.setdefault("kind", DEFAULT_DATA[cfg.kind])
    if params["kind"] in FILE_KINDS and "path" not in params:
        raise ConfigError(f"data.kind={params['kind']} needs data.path")
    try:
        return _load_data_cached(_freeze(params))
    except TypeError as exc:
        raise ConfigError(f"bad data parameters: {exc}") from None
    except MissingFile as exc:
        raise ConfigError(str(exc)) from None


def build_workload(cfg: ExperimentConfig, dataset=None):
    params = {k: v for k, v in cfg.workload.items() if k != "kind"}
    if cfg.kind == "lda" and "topics" in params:
        params["n_topics"] = params.pop("topics")
    if cfg.kind == "mf" and "lambda" in params:
        params["lam"] = params.pop("lambda")
    if dataset is None:
        dataset = build_dataset(cfg)
    try:
        return _build_workload(cfg.kind, dataset, **params)
    except TypeError as exc:
        raise ConfigError(f"bad workload parameters: {exc}") from None
