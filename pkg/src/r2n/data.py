"""Datasets: synthetic benchmarks, label noise, CSV ingestion, splits, export."""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .dnf import FeatureMeta, PredefinedLiteral, halfspace_literals, render_literal
from .errors import DataError
from .model import ModelParams, literal_forward, write_text_atomic

log = logging.getLogger(__name__)


def _frozen(a, dtype) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Raw features, predefined literal columns and binary labels.

    ``X`` stays in raw units. The model sees ``normalized()``, a min-max map
    with statistics ``lo``/``hi``. When ``domain`` is known (synthetic data on
    the unit box) the statistics are the domain itself, so normalization is
    the identity there.
    """

    X: np.ndarray
    y: np.ndarray
    P: np.ndarray | None = None
    feature_names: tuple[str, ...] = ()
    predefined: tuple[PredefinedLiteral, ...] = ()
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    domain: np.ndarray | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim != 2:
            raise DataError("X must be a 2-D matrix")
        if not np.all(np.isfinite(X)):
            raise DataError("X contains NaN or infinite values")
        y = np.asarray(self.y)
        if y.shape != (X.shape[0],):
            raise DataError(f"label vector has shape {y.shape}, expected ({X.shape[0]},)")
        if y.size and not np.all((y == 0) | (y == 1)):
            raise DataError("labels must be binary (0/1)")
        P = np.zeros((X.shape[0], 0)) if self.P is None else np.asarray(self.P, dtype=np.float64)
        if P.ndim != 2 or P.shape[0] != X.shape[0]:
            raise DataError("P must have one row per sample")
        if not np.all((P == 0) | (P == 1)):
            raise DataError("predefined literal columns must be exactly 0/1")
        names = tuple(self.feature_names) or tuple(f"x_{i}" for i in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise DataError("one feature name per column required")
        if len(self.predefined) != P.shape[1]:
            raise DataError("one descriptor per predefined column required")
        object.__setattr__(self, "X", _frozen(X, np.float64))
        object.__setattr__(self, "y", _frozen(y, np.int64))
        object.__setattr__(self, "P", _frozen(P, np.float64))
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "predefined", tuple(self.predefined))
        if self.domain is not None:
            dom = _frozen(self.domain, np.float64)
            object.__setattr__(self, "domain", dom)
            lo, hi = dom[:, 0], dom[:, 1]
        elif self.lo is None or self.hi is None:
            lo, hi = _minmax(X)
        else:
            lo, hi = self.lo, self.hi
        lo, hi = _frozen(lo, np.float64), _frozen(hi, np.float64)
        if np.any(lo > hi):
            raise DataError("normalization bounds need lo <= hi")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def n_predefined(self) -> int:
        return self.P.shape[1]

    @property
    def scale(self) -> np.ndarray:
        s = self.hi - self.lo
        return np.where(s > 0, s, 1.0)

    @property
    def bounds(self) -> np.ndarray:
        """Per-feature ``[lo, hi]`` box used to spot constant literals."""
        return np.column_stack([self.lo, self.hi])

    def normalized(self) -> np.ndarray:
        return normalize(self.X, self.lo, self.scale)

    def meta(self) -> FeatureMeta:
        return FeatureMeta(list(self.feature_names), list(self.predefined),
                           self.lo.copy(), self.scale.copy())

    def normalization_stats(self) -> dict[str, list[float]]:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return replace(self, X=self.X[idx], y=self.y[idx], P=self.P[idx])

    def refit(self) -> "Dataset":
        """Recompute normalization statistics from this data (no-op on a known domain)."""
        if self.domain is not None:
            return self
        lo, hi = _minmax(self.X)
        return replace(self, lo=lo, hi=hi)

    def with_stats(self, other: "Dataset") -> "Dataset":
        return replace(self, lo=other.lo, hi=other.hi, domain=other.domain)

    def with_labels(self, y) -> "Dataset":
        return replace(self, y=y)


def _minmax(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if X.shape[0] == 0:
        return np.zeros(X.shape[1]), np.zeros(X.shape[1])
    return X.min(axis=0), X.max(axis=0)


def normalize(X, lo, scale) -> np.ndarray:
    return (np.asarray(X, dtype=np.float64) - lo) / scale


def denormalize(Z, lo, scale) -> np.ndarray:
    return np.asarray(Z, dtype=np.float64) * scale + lo


# Ground-truth benchmark rules. Ratio predicates x_a / x_b > c are evaluated
# as x_a > c * x_b, which agrees on the positive unit box and has no pole.
@dataclass(frozen=True)
class GroundTruthRule:
    name: str
    n_features: int
    text: str
    formula: Callable[[np.ndarray], np.ndarray] = field(repr=False)

    def __call__(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return self.formula(X).astype(np.int64)


def _toy(X):
    x0, x1 = X[:, 0], X[:, 1]
    return (x0 > 1.0 * x1) & (x0 > 0.5)


def _ex1(X):
    return (X[:, 0] > 0.25) | (X[:, 1] < 0.5)


def _ex2(X):
    return (X[:, 0] > 0.5 * X[:, 1]) | (X[:, 4] < 0.25)


def _ex3(X):
    return (X[:, 0] + 0.5 * X[:, 1] > 0.5) | (X[:, 4] < 0.25)


def _ex4(X):
    x0, x1, x2, x3, x4 = X.T
    return ((x0 < 0.2) & (x1 + x2 > 0.5)) | ((x4 > 1.0 * x3) & (x1 < 0.5))


def _ex5(X):
    x0, x1, x2, x3, x4 = X.T
    return ((x4 < 0.2) & (x0 > 0.5 * x1)) | (0.5 * x3 + 0.2 * x1 > 0.5) | (x0 < 0.2)


RULES: dict[str, GroundTruthRule] = {
    r.name: r
    for r in [
        GroundTruthRule("toy", 2, "(x_0/x_1 > 1.0 ∧ x_0 > 0.5)", _toy),
        GroundTruthRule("ex1", 5, "(x_0 > 0.25) ∨ (x_1 < 0.5)", _ex1),
        GroundTruthRule("ex2", 5, "(x_0/x_1 > 0.5) ∨ (x_4 < 0.25)", _ex2),
        GroundTruthRule("ex3", 5, "(x_0 + 0.5·x_1 > 0.5) ∨ (x_4 < 0.25)", _ex3),
        GroundTruthRule("ex4", 5, "(x_0 < 0.2 ∧ x_1 + x_2 > 0.5) ∨ (x_4/x_3 > 1 ∧ x_1 < 0.5)", _ex4),
        GroundTruthRule("ex5", 5,
                        "(x_4 < 0.2 ∧ x_0/x_1 > 0.5) ∨ (0.5·x_3 + 0.2·x_1 > 0.5) ∨ (x_0 < 0.2)",
                        _ex5),
    ]
}


def get_rule(name: str) -> GroundTruthRule:
    try:
        return RULES[name]
    except KeyError:
        raise DataError(f"unknown rule {name!r}; choose from {sorted(RULES)}") from None


def gen_synthetic(rule: str | GroundTruthRule, n: int, seed: int) -> Dataset:
    """``n`` samples uniform on the unit box, labelled by the ground-truth rule."""
    if isinstance(rule, str):
        rule = get_rule(rule)
    if n < 1:
        raise DataError("need at least one sample")
    rng = np.random.default_rng(seed)
    X = rng.random((n, rule.n_features))
    domain = np.tile([0.0, 1.0], (rule.n_features, 1))
    return Dataset(X, rule(X), domain=domain)


def flip_labels(ds: Dataset, fraction: float, seed: int) -> Dataset:
    """Invert exactly ``round(fraction * len(ds))`` distinct labels."""
    if not 0.0 <= fraction <= 1.0:
        raise DataError(f"noise fraction must be in [0, 1], got {fraction}")
    k = int(round(fraction * len(ds)))
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(ds), size=k, replace=False)
    y = ds.y.copy()
    y[idx] = 1 - y[idx]
    return ds.with_labels(y)


def split(ds: Dataset, ratio: float, seed: int) -> tuple[Dataset, Dataset]:
    """Shuffled train/test partition; normalization refit on the train side only."""
    if not 0.0 < ratio < 1.0:
        raise DataError(f"split ratio must be in (0, 1), got {ratio}")
    n_train = int(round(ratio * len(ds)))
    if n_train == 0 or n_train == len(ds):
        raise DataError(f"split of {len(ds)} samples at {ratio} leaves one side empty")
    perm = np.random.default_rng(seed).permutation(len(ds))
    train = ds.subset(np.sort(perm[:n_train])).refit()
    test = ds.subset(np.sort(perm[n_train:])).with_stats(train)
    return train, test


def split_indices(n: int, ratio: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    n_train = int(round(ratio * n))
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


@dataclass
class Schema:
    label: str
    categorical: list[str] = field(default_factory=list)
    numeric: list[str] = field(default_factory=list)
    complements: bool = True

    @classmethod
    def from_dict(cls, d) -> "Schema":
        if "label" not in d:
            raise DataError("schema needs a 'label' entry")
        return cls(d["label"], list(d.get("categorical", [])), list(d.get("numeric", [])),
                   bool(d.get("complements", True)))

    @classmethod
    def from_json(cls, path) -> "Schema":
        return cls.from_dict(json.loads(Path(path).read_text()))


_TRUE = {"1", "1.0", "true", "t", "yes", "y"}
_FALSE = {"0", "0.0", "false", "f", "no", "n"}


def load_csv(path, schema: Schema | dict) -> Dataset:
    """Read a header-first CSV into a :class:`Dataset`.

    Each categorical value ``v`` of column ``c`` becomes the predefined literal
    ``c = v`` followed by its complement ``c != v`` (unless the schema turns
    complements off).
    """
    if isinstance(schema, dict):
        schema = Schema.from_dict(schema)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: missing header row")
        header = [h.strip() for h in reader.fieldnames]
        reader.fieldnames = header
        for col in [schema.label, *schema.categorical, *schema.numeric]:
            if col not in header:
                raise DataError(f"{path}: missing column {col!r}")
        rows = list(reader)
    if not rows:
        raise DataError(f"{path}: no data rows")

    y = np.empty(len(rows), dtype=np.int64)
    X = np.empty((len(rows), len(schema.numeric)))
    for r, row in enumerate(rows):
        line = r + 2  # header is line 1
        raw = (row[schema.label] or "").strip().lower()
        if raw in _TRUE:
            y[r] = 1
        elif raw in _FALSE:
            y[r] = 0
        else:
            raise DataError(f"{path}: row {line}: non-binary label {row[schema.label]!r}")
        for k, col in enumerate(schema.numeric):
            cell = (row[col] or "").strip()
            try:
                X[r, k] = float(cell)
            except ValueError:
                raise DataError(f"{path}: row {line}: cannot parse {col}={cell!r}") from None
            if not np.isfinite(X[r, k]):
                raise DataError(f"{path}: row {line}: non-finite {col}={cell!r}")

    predefined: list[PredefinedLiteral] = []
    columns: list[np.ndarray] = []
    for col in schema.categorical:
        values = np.array([(row[col] or "").strip() for row in rows])
        for v in sorted(set(values)):
            hit = (values == v).astype(np.float64)
            predefined.append(PredefinedLiteral(col, v, True))
            columns.append(hit)
            if schema.complements:
                predefined.append(PredefinedLiteral(col, v, False))
                columns.append(1.0 - hit)
    P = np.column_stack(columns) if columns else np.zeros((len(rows), 0))

    lo, hi = _minmax(X)
    for k in np.flatnonzero(lo == hi):
        log.warning("numeric column %r is constant; it normalizes to 0", schema.numeric[k])
    return Dataset(X, y, P, tuple(schema.numeric), tuple(predefined), lo=lo, hi=hi)


def literal_table(params: ModelParams, ds: Dataset) -> np.ndarray:
    """Eval-mode truth of every AND-layer input, shape ``(len(ds), M)``."""
    learned = literal_forward(ds.normalized(), params, 1.0, mode="eval")
    return np.concatenate([learned, ds.P], axis=1).astype(np.int8)


def literal_names(params: ModelParams, ds: Dataset, precision: int = 2) -> list[str]:
    names = [
        f"phi_{h.index}: {render_literal(h, ds.feature_names, precision)}"
        for h in halfspace_literals(params, ds.meta())
    ]
    names += [f"phi_{params.m + k}: ({d.name})" for k, d in enumerate(ds.predefined)]
    return names


def export_literals(params: ModelParams, ds: Dataset, out=None, precision: int = 2):
    """Binarized literal table (label last) for external rule learners.

    Returns ``(header, table)`` and writes a CSV when ``out`` is given.
    """
    if params.n_predefined != ds.n_predefined:
        raise DataError("dataset and model disagree on the number of predefined literals")
    table = np.column_stack([literal_table(params, ds), ds.y]).astype(np.int8)
    header = literal_names(params, ds, precision) + ["label"]
    if out is not None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(table.tolist())
        write_text_atomic(out, buf.getvalue())
    return header, table


def read_literal_table(path) -> tuple[list[str], np.ndarray, np.ndarray]:
    """Inverse of :func:`export_literals`: ``(literal names, literal table, labels)``."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header, body = rows[0], np.array(rows[1:], dtype=np.int64).reshape(-1, len(rows[0]))
    return header[:-1], body[:, :-1], body[:, -1]


def dataset_to_csv(ds: Dataset, path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([*ds.feature_names, *(d.name for d in ds.predefined), "label"])
    for r in range(len(ds)):
        w.writerow([*(repr(float(v)) for v in ds.X[r]), *(int(v) for v in ds.P[r]), int(ds.y[r])])
    write_text_atomic(path, buf.getvalue())
