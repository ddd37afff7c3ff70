"""Configuration-driven experiments: train a strategy, attack it, report.

A run is a pure function of its :class:`ExperimentConfig` (including the
four seeds) apart from the wall-clock ``runtime`` field.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
import os
import tempfile
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from importlib import metadata
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from . import attacks
from .data import (CsvSchema, Dataset, SplitSpec, load_csv, load_german_credit, split,
                   standardize, synthetic_gaussian)
from .errors import ConfigError, SgldPrivacyError
from .net_core import LossBound, MlpArchitecture, init_params
from .optimizers import GaussianPrior, OptimizerState, StepSchedule
from .posterior import EnsemblePredictor, PosteriorSampleSet, collect, save_snapshots
from .training import steps_per_epoch, train

STRATEGIES = {
    # name: (optimizer kind, ensemble, dropout)
    "sgd": ("sgd", False, False),
    "sgd_ensemble": ("sgd", True, False),
    "dropout": ("sgd", False, True),
    "rmsprop": ("rmsprop", False, False),
    "sgld": ("sgld", False, False),
    "sgld_ensemble": ("sgld", True, False),
    "psgld": ("psgld", False, False),
    "psgld_ensemble": ("psgld", True, False),
}


@dataclass
class DatasetConfig:
    source: str = "german_credit"  # german_credit | synthetic | csv
    path: str | None = None
    schema: str | None = None
    variant: str = "categorical"
    n_per_class: int = 500
    dim: int = 2
    separation: float = 6.0
    synthetic_seed: int = 0
    standardize: bool = True


@dataclass
class SplitConfig:
    train: int = 400
    holdout: int = 300
    test: int = 300


@dataclass
class ModelConfig:
    hidden: list = field(default_factory=lambda: [256, 128])
    activation: str = "relu"
    dropout_rate: float = 0.5


@dataclass
class OptimizerConfig:
    lr: float = 1e-3
    schedule: str = "halving"
    halving_period: int = 5
    poly_b: float = 1.0
    poly_gamma: float = 0.55
    batch_size: int = 32
    epochs: int = 30
    prior_variance: float = 1.0
    alpha: float = 0.99
    damping: float = 1e-5
    data_scaling: str = "dataset"


@dataclass
class PosteriorConfig:
    burn_in_fraction: float = 0.5
    thinning: int = 1
    ensemble_k: int = 3


@dataclass
class Seeds:
    split: int = 0
    init: int = 1
    data_order: int = 2
    noise: int = 3


@dataclass
class ExperimentConfig:
    strategy: str = "sgld"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    posterior: PosteriorConfig = field(default_factory=PosteriorConfig)
    seeds: Seeds = field(default_factory=Seeds)
    loss_bound: float = 5.0
    lam: float = 0.5
    nonmember_pool: str = "test"

    def validate(self) -> "ExperimentConfig":
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; choose from {sorted(STRATEGIES)}")
        if self.dataset.source not in ("german_credit", "synthetic", "csv"):
            raise ConfigError(f"unknown dataset source {self.dataset.source!r}")
        if self.dataset.source == "csv" and not (self.dataset.path and self.dataset.schema):
            raise ConfigError("csv datasets need both path and schema")
        if self.nonmember_pool not in ("test", "holdout"):
            raise ConfigError("nonmember_pool must be 'test' or 'holdout'")
        if self.split.train < 1 or min(self.split.holdout, self.split.test) < 0:
            raise ConfigError("split counts must be non-negative with a nonempty train set")
        if self.optimizer.batch_size < 1 or self.optimizer.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")
        if not 0.0 <= self.posterior.burn_in_fraction < 1.0:
            raise ConfigError("burn_in_fraction must lie in [0, 1)")
        if self.posterior.thinning < 1 or self.posterior.ensemble_k < 1:
            raise ConfigError("thinning and ensemble_k must be >= 1")
        if not 0.0 < self.lam < 1.0:
            raise ConfigError("lam must lie strictly in (0, 1)")
        if any(int(h) < 1 for h in self.model.hidden):
            raise ConfigError("hidden sizes must be positive")
        LossBound(self.loss_bound)
        GaussianPrior(self.optimizer.prior_variance)
        self.schedule(1)
        return self

    def schedule(self, spe: int) -> StepSchedule:
        o = self.optimizer
        return StepSchedule(o.schedule, o.lr, o.halving_period, spe, o.poly_b, o.poly_gamma)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict | None) -> "ExperimentConfig":
        return _build(cls, d or {}, "").validate()

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path) as f:
            return cls.from_dict(yaml.safe_load(f))

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes).validate()

    def with_overrides(self, assignments: Sequence[str]) -> "ExperimentConfig":
        """Apply ``section.key=value`` strings; values are parsed as YAML."""
        d = self.to_dict()
        for a in assignments:
            if "=" not in a:
                raise ConfigError(f"override {a!r} is not of the form key=value")
            key, raw = a.split("=", 1)
            *path, leaf = key.strip().split(".")
            node = d
            for p in path:
                if not isinstance(node.get(p), dict):
                    raise ConfigError(f"unknown config section {p!r} in {key!r}")
                node = node[p]
            if leaf not in node:
                raise ConfigError(f"unknown config key {key!r}")
            node[leaf] = yaml.safe_load(raw)
        return ExperimentConfig.from_dict(d)


def _coerce(tp, value, where: str):
    if value is None:
        return None
    tp = str(tp)
    try:
        if tp.startswith("float"):
            return float(value)
        if tp.startswith("int"):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if tp.startswith("bool"):
            if not isinstance(value, bool):
                raise ValueError
            return value
        if tp.startswith("list"):
            return [int(v) for v in value]
        if tp.startswith("str"):
            return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value {value!r} for {where}") from None
    return value


def _build(cls, d: dict, prefix: str):
    if not isinstance(d, dict):
        raise ConfigError(f"section {prefix or 'root'} must be a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(d) - set(fields)
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(prefix + k for k in unknown)}")
    kwargs = {}
    for name, f in fields.items():
        if name not in d:
            continue
        sub = _SECTIONS.get(name) if cls is ExperimentConfig else None
        if sub is not None:
            kwargs[name] = _build(sub, d[name] or {}, f"{prefix}{name}.")
        else:
            kwargs[name] = _coerce(f.type, d[name], prefix + name)
    return cls(**kwargs)


_SECTIONS = {"dataset": DatasetConfig, "split": SplitConfig, "model": ModelConfig,
             "optimizer": OptimizerConfig, "posterior": PosteriorConfig, "seeds": Seeds}


def config_hash(config: ExperimentConfig) -> str:
    canon = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def seed_bundle(master: int) -> Seeds:
    """Derive the four seeds from one master seed.

    ``numpy.random.SeedSequence(master).generate_state(4)`` gives, in
    order, the split, init, data-order and noise seeds.
    """
    s = np.random.SeedSequence(int(master)).generate_state(4)
    return Seeds(split=int(s[0]), init=int(s[1]), data_order=int(s[2]), noise=int(s[3]))


@dataclass
class MetricsRecord:
    strategy: str
    auc: float
    f1: float
    acc: float
    train_acc: float
    test_acc: float
    gap: float
    runtime: float = 0.0
    config_hash: str = ""

    def without_runtime(self) -> "MetricsRecord":
        return dataclasses.replace(self, runtime=0.0)


@dataclass
class ExperimentResult:
    record: MetricsRecord
    config: ExperimentConfig
    train: Dataset
    holdout: Dataset
    test: Dataset
    sample_set: PosteriorSampleSet
    predictor: EnsemblePredictor
    report: attacks.AttackReport
    scores: attacks.AttackScoreSet


@contextmanager
def _stage(name: str):
    try:
        yield
    except SgldPrivacyError as e:
        raise type(e)(f"[{name}] {e}") from e


def load_dataset(cfg: DatasetConfig) -> Dataset:
    if cfg.source == "german_credit":
        return load_german_credit(cfg.path, cfg.variant)
    if cfg.source == "synthetic":
        return synthetic_gaussian(cfg.n_per_class, cfg.dim, cfg.separation, cfg.synthetic_seed)
    return load_csv(cfg.path, CsvSchema.from_file(cfg.schema))


def prepare_data(config: ExperimentConfig) -> tuple[Dataset, Dataset, Dataset]:
    with _stage("data"):
        ds = load_dataset(config.dataset)
        sp = config.split
        tr, ho, te = split(ds, SplitSpec(sp.train, sp.holdout, sp.test, config.seeds.split))
        if config.dataset.standardize:
            tr, (ho, te), _ = standardize(tr, [ho, te])
        return tr, ho, te


def build_architecture(config: ExperimentConfig, n_features: int, n_classes: int) -> MlpArchitecture:
    _, _, dropout = STRATEGIES[config.strategy]
    sizes = (n_features, *config.model.hidden, n_classes)
    return MlpArchitecture(sizes, config.model.activation,
                           config.model.dropout_rate if dropout else 0.0)


def build_predictor(config: ExperimentConfig, sample_set: PosteriorSampleSet) -> EnsemblePredictor:
    _, ensemble, _ = STRATEGIES[config.strategy]
    k = min(config.posterior.ensemble_k, len(sample_set)) if ensemble else 1
    return EnsemblePredictor(sample_set, mode="last_k", k=k)


def _accuracy(predictor, ds: Dataset) -> float:
    if len(ds) == 0:
        return float("nan")
    return float(np.mean(np.argmax(predictor(ds.X), axis=1) == ds.y))


def evaluate(config: ExperimentConfig, predictor, train_ds: Dataset, holdout: Dataset,
             test: Dataset) -> tuple[MetricsRecord, attacks.AttackReport, attacks.AttackScoreSet]:
    bound = LossBound(config.loss_bound)
    nonmembers = test if config.nonmember_pool == "test" else holdout
    with _stage("attack"):
        scores = attacks.score_samples(predictor, (train_ds.X, train_ds.y),
                                       (nonmembers.X, nonmembers.y), bound)
        threshold = attacks.mean_train_loss_threshold(predictor, train_ds.X, train_ds.y, bound)
        report = attacks.fixed_threshold_attack(scores, threshold, auc=attacks.roc_auc(scores))
    train_acc = _accuracy(predictor, train_ds)
    test_acc = _accuracy(predictor, test)
    record = MetricsRecord(config.strategy, report.auc, report.f1, report.accuracy,
                           train_acc, test_acc, train_acc - test_acc,
                           config_hash=config_hash(config))
    return record, report, scores


def execute(config: ExperimentConfig) -> ExperimentResult:
    """Train, collect snapshots and attack; nothing is written to disk."""
    config.validate()
    t_start = time.perf_counter()
    tr, ho, te = prepare_data(config)
    kind, _, _ = STRATEGIES[config.strategy]
    o = config.optimizer
    with _stage("model"):
        arch = build_architecture(config, tr.n_features, tr.class_count)
        params = init_params(arch, config.seeds.init)
    with _stage("train"):
        spe = steps_per_epoch(len(tr), o.batch_size)
        total = spe * o.epochs
        burn_in = min(int(config.posterior.burn_in_fraction * total), total - 1)
        state = OptimizerState(kind, config.schedule(spe),
                               GaussianPrior(o.prior_variance) if kind in ("sgld", "psgld") else None,
                               alpha=o.alpha, damping=o.damping, noise_seed=config.seeds.noise,
                               data_scaling=o.data_scaling)
        run = train(params, tr.X, tr.y, state, o.batch_size, o.epochs,
                    config.seeds.data_order, record_from=burn_in,
                    bound=LossBound(config.loss_bound))
    with _stage("posterior"):
        sample_set = collect(run, burn_in, config.posterior.thinning)
        predictor = build_predictor(config, sample_set)
    record, report, scores = evaluate(config, predictor, tr, ho, te)
    record.runtime = time.perf_counter() - t_start
    return ExperimentResult(record, config, tr, ho, te, sample_set, predictor, report, scores)


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    with os.fdopen(fd, "w") as f:
        f.write(text)
    os.replace(tmp, path)


def code_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def write_manifest(config: ExperimentConfig, out_dir, extra: dict | None = None) -> None:
    manifest = {"config": config.to_dict(), "config_hash": config_hash(config),
                "seeds": asdict(config.seeds), "code_version": code_version()}
    manifest.update(extra or {})
    _atomic_write(Path(out_dir) / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True))


def run_experiment(config: ExperimentConfig, output_dir=None) -> MetricsRecord:
    """Run one strategy; with ``output_dir`` also persist manifest, snapshots, scores and metrics."""
    result = execute(config)
    if output_dir is not None:
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        with _stage("persist"):
            write_manifest(config, out)
            used = result.sample_set.last(result.predictor.k)
            save_snapshots(used, out / "snapshots.bin")
            attacks.write_scores(result.scores, out / "scores.csv")
            attacks.write_roc(result.scores, out / "roc.csv")
            emit([result.record], out / "metrics.csv", "delimited")
            emit([result.record], out / "metrics.json", "structured", configs=[config])
    return result.record


def compare_strategies(configs: Sequence[ExperimentConfig]) -> list[MetricsRecord]:
    """One record per config; all rows must share data and split so the comparison is paired."""
    if not configs:
        raise ConfigError("need at least one config")
    ref = configs[0]
    for c in configs[1:]:
        if c.seeds.split != ref.seeds.split:
            raise ConfigError("all rows must share one split seed")
        if c.dataset != ref.dataset or c.split != ref.split:
            raise ConfigError("all rows must share one dataset and split")
    return [run_experiment(c) for c in configs]


def sweep(base: ExperimentConfig, strategies: Sequence[str],
          master_seeds: Sequence[int]) -> dict[str, list[MetricsRecord]]:
    """Paired comparison repeated over seed bundles; returns records per strategy."""
    out: dict[str, list[MetricsRecord]] = {s: [] for s in strategies}
    for m in master_seeds:
        seeds = seed_bundle(m)
        rows = compare_strategies([base.replace(strategy=s, seeds=seeds) for s in strategies])
        for s, r in zip(strategies, rows):
            out[s].append(r)
    return out


def average_records(records: Sequence[MetricsRecord]) -> MetricsRecord:
    if not records:
        raise ConfigError("nothing to average")
    mean = {f: float(np.mean([getattr(r, f) for r in records]))
            for f in ("auc", "f1", "acc", "train_acc", "test_acc", "runtime")}
    return MetricsRecord(records[0].strategy, mean["auc"], mean["f1"], mean["acc"],
                         mean["train_acc"], mean["test_acc"], mean["train_acc"] - mean["test_acc"],
                         mean["runtime"], "mean-of-%d" % len(records))


DELIMITED_COLUMNS = ("strategy", "auc", "f1", "acc", "train", "test", "gap", "runtime", "config_hash")
_FIELD_FOR = {"train": "train_acc", "test": "test_acc"}


def emit(records: Sequence[MetricsRecord], path, fmt: str = "delimited",
         configs: Sequence[ExperimentConfig] | None = None) -> None:
    """Write records as CSV (fixed column order) or JSON (records plus configs)."""
    path = Path(path)
    if fmt == "delimited":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(DELIMITED_COLUMNS)
        for r in records:
            row = [getattr(r, _FIELD_FOR.get(c, c)) for c in DELIMITED_COLUMNS]
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])
        text = buf.getvalue()
    elif fmt == "structured":
        payload = {"records": [asdict(r) for r in records],
                   "configs": [c.to_dict() for c in configs] if configs else []}
        text = json.dumps(payload, indent=2)
    else:
        raise ConfigError(f"unknown format {fmt!r}")
    try:
        _atomic_write(path, text)
    except OSError as e:
        raise SgldPrivacyError(f"cannot write {path}: {e}") from e


def read_records(path) -> list[MetricsRecord]:
    path = Path(path)
    if path.suffix == ".json":
        return [MetricsRecord(**r) for r in json.loads(path.read_text())["records"]]
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    out = []
    for r in rows:
        vals = {_FIELD_FOR.get(c, c): r[c] for c in DELIMITED_COLUMNS}
        for k in ("auc", "f1", "acc", "train_acc", "test_acc", "gap", "runtime"):
            vals[k] = float(vals[k])
        out.append(MetricsRecord(**vals))
    return out


def format_table(records: Sequence[MetricsRecord]) -> str:
    head = f"{'strategy':<16}{'AUC':>8}{'F1':>8}{'Acc':>8}{'Train':>8}{'Test':>8}{'Gap':>8}"
    lines = [head, "-" * len(head)]
    for r in records:
        lines.append(f"{r.strategy:<16}{r.auc:8.3f}{r.f1:8.3f}{r.acc:8.3f}"
                     f"{r.train_acc:8.3f}{r.test_acc:8.3f}{r.gap:8.3f}")
    return "\n".join(lines)


def is_finite_record(r: MetricsRecord) -> bool:
    return all(math.isfinite(getattr(r, f)) for f in ("auc", "f1", "acc", "train_acc", "test_acc"))
