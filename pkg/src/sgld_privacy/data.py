"""Tabular dataset loading, splitting and preprocessing.

Schemas are small YAML files declaring the delimiter, which column holds
the label and which columns are categorical (one-hot encoded).  Columns may
be referenced by 0-based index or, when the file has a header, by name.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from .errors import ConfigError, EncodingError, ParseError
from .net_core import Sample


@dataclass(frozen=True)
class CsvSchema:
    label_column: int | str
    categorical_columns: tuple = ()
    delimiter: str = ","
    header: bool = False
    positive_label: str | None = None
    column_names: tuple = ()
    n_columns: int | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "CsvSchema":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown schema keys: {sorted(extra)}")
        if "label_column" not in d:
            raise ConfigError("schema must declare label_column")
        d = dict(d)
        d["categorical_columns"] = tuple(d.get("categorical_columns", ()))
        d["column_names"] = tuple(d.get("column_names", ()))
        if d.get("positive_label") is not None:
            d["positive_label"] = str(d["positive_label"])
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "CsvSchema":
        with open(path) as f:
            return cls.from_dict(yaml.safe_load(f) or {})


@dataclass
class CategoricalEncoder:
    """Per-column level lists; levels are kept in first-seen order."""

    levels: dict[int, list[str]]

    def encode(self, col: int, value: str, row_number: int | None = None) -> list[float]:
        try:
            idx = self.levels[col].index(value)
        except ValueError:
            where = f" (row {row_number})" if row_number is not None else ""
            raise EncodingError(f"unknown category {value!r} in column {col}{where}") from None
        out = [0.0] * len(self.levels[col])
        out[idx] = 1.0
        return out


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    feature_names: list[str]
    class_count: int
    provenance: str = ""
    label_mapping: dict[str, int] = field(default_factory=dict)
    encoder: CategoricalEncoder | None = field(default=None, repr=False)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise ParseError(f"inconsistent shapes X={self.X.shape}, y={self.y.shape}")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.class_count):
            raise ParseError("class index out of range")

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def samples(self) -> list[Sample]:
        return [Sample(x, int(c)) for x, c in zip(self.X, self.y)]

    def subset(self, indices, provenance: str | None = None) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return replace(self, X=self.X[indices], y=self.y[indices],
                       provenance=provenance if provenance is not None else self.provenance)


def _split_line(line: str, delimiter: str) -> list[str]:
    if delimiter in ("whitespace", " "):
        return line.split()
    return next(csv.reader([line], delimiter=delimiter))


def _label_order(labels: Sequence[str], positive: str | None) -> list[str]:
    uniq = sorted(set(labels))
    try:
        uniq = sorted(uniq, key=float)
    except ValueError:
        pass
    if positive is not None:
        if positive not in uniq:
            raise ParseError(f"positive label {positive!r} not present in file")
        uniq.remove(positive)
        uniq.append(positive)
    return uniq


def load_csv(path, schema: CsvSchema) -> Dataset:
    """Read a delimited file into a Dataset.

    Categorical columns are one-hot encoded, everything else is parsed as a
    float.  Labels map to 0-based indices; with ``positive_label`` set that
    label gets the highest index (class 1 for binary problems).
    """
    text = Path(path).read_text()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    names = list(schema.column_names)
    if schema.header:
        if not lines:
            raise ParseError(f"{path}: empty file")
        names = _split_line(lines[0], schema.delimiter)
        lines = lines[1:]
    rows = [(i + 1 + int(schema.header), _split_line(ln, schema.delimiter))
            for i, ln in enumerate(lines)]
    if not rows:
        raise ParseError(f"{path}: no data rows")
    width = schema.n_columns or len(names) or len(rows[0][1])
    for row_number, cells in rows:
        if len(cells) != width:
            raise ParseError(f"{path}: row {row_number} has {len(cells)} columns, expected {width}")

    def resolve(col) -> int:
        if isinstance(col, int):
            if not 0 <= col < width:
                raise ConfigError(f"column index {col} out of range")
            return col
        if col not in names:
            raise ConfigError(f"unknown column {col!r}")
        return names.index(col)

    label_col = resolve(schema.label_column)
    cat_cols = {resolve(c) for c in schema.categorical_columns}
    feature_cols = [c for c in range(width) if c != label_col]

    levels: dict[int, list[str]] = {c: [] for c in sorted(cat_cols)}
    for _, cells in rows:
        for c in levels:
            if cells[c] not in levels[c]:
                levels[c].append(cells[c])
    encoder = CategoricalEncoder(levels)

    feature_names = []
    for c in feature_cols:
        base = names[c] if names else f"col{c}"
        if c in cat_cols:
            feature_names.extend(f"{base}={lvl}" for lvl in levels[c])
        else:
            feature_names.append(base)

    X = []
    for row_number, cells in rows:
        feats = []
        for c in feature_cols:
            if c in cat_cols:
                feats.extend(encoder.encode(c, cells[c], row_number))
            else:
                try:
                    feats.append(float(cells[c]))
                except ValueError:
                    raise ParseError(f"{path}: row {row_number}, column {c}: "
                                     f"cannot parse {cells[c]!r} as a number") from None
        X.append(feats)
    X = np.asarray(X, dtype=np.float64)
    if not np.all(np.isfinite(X)):
        raise ParseError(f"{path}: non-finite feature values")

    raw_labels = [cells[label_col] for _, cells in rows]
    order = _label_order(raw_labels, schema.positive_label)
    mapping = {lab: i for i, lab in enumerate(order)}
    y = np.asarray([mapping[lab] for lab in raw_labels])
    return Dataset(X, y, feature_names, len(order), provenance=str(path),
                   label_mapping=mapping, encoder=encoder)


def save_csv(dataset: Dataset, path) -> None:
    """Write encoded features plus the class index as a headed CSV.

    Floats are written with ``repr`` so a reload is bit-exact.
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(dataset.feature_names) + ["label"])
    for x, c in zip(dataset.X, dataset.y):
        w.writerow([repr(float(v)) for v in x] + [int(c)])
    Path(path).write_text(buf.getvalue())


def saved_csv_schema() -> CsvSchema:
    """Schema matching the files written by :func:`save_csv`."""
    return CsvSchema(label_column="label", header=True)


@dataclass(frozen=True)
class SplitSpec:
    train_count: int
    holdout_count: int
    test_count: int
    seed: int = 0


def split(dataset: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Seeded shuffle followed by a contiguous train/holdout/test partition."""
    counts = (spec.train_count, spec.holdout_count, spec.test_count)
    if any(c < 0 for c in counts) or sum(counts) > len(dataset):
        raise ConfigError(f"split counts {counts} infeasible for {len(dataset)} rows")
    perm = np.random.default_rng(spec.seed).permutation(len(dataset))
    a, b, c = np.cumsum(counts)
    return (dataset.subset(perm[:a], f"{dataset.provenance}[train]"),
            dataset.subset(perm[a:b], f"{dataset.provenance}[holdout]"),
            dataset.subset(perm[b:c], f"{dataset.provenance}[test]"))


@dataclass(frozen=True)
class Scaler:
    mean: np.ndarray
    std: np.ndarray

    def transform(self, dataset: Dataset) -> Dataset:
        return replace(dataset, X=(dataset.X - self.mean) / self.std)


def standardize(train: Dataset, others: Sequence[Dataset] = ()):
    """Z-score every split with statistics from ``train`` only.

    Zero-variance features are centred but not scaled.
    Returns ``(train, others, scaler)``.
    """
    if len(train) == 0:
        raise ConfigError("cannot standardize on an empty training set")
    mean = train.X.mean(axis=0)
    std = train.X.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    scaler = Scaler(mean, std)
    return scaler.transform(train), [scaler.transform(d) for d in others], scaler


def synthetic_gaussian(n_per_class: int, dim: int, separation: float, seed: int) -> Dataset:
    """Two unit-variance isotropic clusters centred at -/+ separation/2 along the first axis."""
    if n_per_class < 1 or dim < 1:
        raise ConfigError("n_per_class and dim must be >= 1")
    rng = np.random.default_rng(seed)
    centre = np.zeros(dim)
    centre[0] = separation / 2.0
    X = np.concatenate([rng.standard_normal((n_per_class, dim)) - centre,
                        rng.standard_normal((n_per_class, dim)) + centre])
    y = np.repeat([0, 1], n_per_class)
    perm = rng.permutation(2 * n_per_class)
    return Dataset(X[perm], y[perm], [f"x{i}" for i in range(dim)], 2,
                   provenance=f"synthetic_gaussian(n={n_per_class}, dim={dim}, "
                              f"sep={separation}, seed={seed})")


GERMAN_VARIANTS = {"categorical": ("german.data", "german.yaml"),
                   "numeric": ("german.data-numeric", "german_numeric.yaml")}


def german_schema_path(variant: str = "categorical") -> Path:
    return Path(str(resources.files("sgld_privacy") / "datasets" / GERMAN_VARIANTS[variant][1]))


def load_german_credit(path=None, variant: str = "categorical") -> Dataset:
    """UCI Statlog German Credit; "good credit" is class 1.

    The categorical-code file ships with the package.  The numeric variant
    has to be supplied via ``path``.
    """
    if variant not in GERMAN_VARIANTS:
        raise ConfigError(f"unknown German Credit variant {variant!r}")
    data_name, _ = GERMAN_VARIANTS[variant]
    if path is None:
        path = Path(str(resources.files("sgld_privacy") / "datasets" / data_name))
    return load_csv(path, CsvSchema.from_file(german_schema_path(variant)))
