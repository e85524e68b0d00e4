"""Covtype ingestion, class-balanced undersampling and min-max scaling."""

from __future__ import annotations

import gzip
import io
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

N_FEATURES = 54
N_CLASSES = 7
# 10 terrain measurements, then 4 wilderness + 40 soil-type indicators
CONTINUOUS_COLUMNS = tuple(range(10))
DEFAULT_DATA_PATH = "data/covtype.data.gz"


class DataError(Exception):
    pass


class ParseError(DataError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line
        self.message = message

    def __reduce__(self):
        return (type(self), (self.line, self.message))


class InsufficientClassError(DataError):
    def __init__(self, label: int, available: int, requested: int):
        super().__init__(
            f"class {label} has {available} examples, {requested} requested"
        )
        self.label = label
        self.available = available
        self.requested = requested

    def __reduce__(self):
        return (type(self), (self.label, self.available, self.requested))


@dataclass(frozen=True, eq=False)
class Example:
    features: np.ndarray
    label: int


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable feature matrix ``X`` (n, d) with integer labels ``y`` (n,)."""

    X: np.ndarray
    y: np.ndarray
    n_classes: int = N_CLASSES

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64, order="C", ndmin=2)
        y = np.array(self.y, dtype=np.int64).reshape(-1)
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise DataError(f"X shape {X.shape} does not match {y.shape[0]} labels")
        if y.size and (y.min() < 0 or y.max() >= self.n_classes):
            raise DataError(f"labels must lie in 0..{self.n_classes - 1}")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return self.y.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.n_classes)

    def __getitem__(self, i):
        if isinstance(i, (int, np.integer)):
            return Example(self.X[i], int(self.y[i]))
        return self.subset(i)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.X[idx], self.y[idx], self.n_classes)

    @classmethod
    def from_examples(cls, examples, n_classes: int = N_CLASSES) -> "Dataset":
        examples = list(examples)
        if not examples:
            return cls(np.zeros((0, N_FEATURES)), np.zeros(0, np.int64), n_classes)
        X = np.stack([np.asarray(e.features, dtype=np.float64) for e in examples])
        return cls(X, [e.label for e in examples], n_classes)


def default_data_path() -> str:
    return os.environ.get("ICPLAB_DATA", DEFAULT_DATA_PATH)


def _read_text(path) -> str:
    path = Path(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw.decode("ascii")


def _parse_strict(lines):
    """Line-by-line parse; raises ParseError at the first bad record."""
    rows = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != N_FEATURES + 1:
            raise ParseError(lineno, f"expected {N_FEATURES + 1} fields, got {len(fields)}")
        try:
            values = [float(f) for f in fields]
        except ValueError as exc:
            raise ParseError(lineno, f"non-numeric field ({exc})") from None
        _check_record(lineno, values)
        rows.append(values)
    return np.array(rows, dtype=np.float64).reshape(-1, N_FEATURES + 1)


def _check_record(lineno, values):
    label = values[-1]
    if label != int(label) or not 1 <= label <= N_CLASSES:
        raise ParseError(lineno, f"label {label:g} outside 1..{N_CLASSES}")
    for j in range(len(CONTINUOUS_COLUMNS), N_FEATURES):
        if values[j] not in (0.0, 1.0):
            raise ParseError(lineno, f"indicator column {j + 1} holds {values[j]:g}")


def _fast_valid(table) -> bool:
    if table.ndim != 2 or table.shape[1] != N_FEATURES + 1:
        return False
    labels = table[:, -1]
    if not np.all((labels == np.round(labels)) & (labels >= 1) & (labels <= N_CLASSES)):
        return False
    ind = table[:, len(CONTINUOUS_COLUMNS):N_FEATURES]
    return bool(np.all((ind == 0.0) | (ind == 1.0)))


def load_covtype(path) -> Dataset:
    """Parse a UCI ``covtype.data`` file (optionally gzipped).

    Labels 1..7 become 0..6 and record order is kept. Any malformed record
    raises :class:`ParseError` with its 1-based line number.
    """
    text = _read_text(path)
    lines = text.splitlines()
    if not any(line.strip() for line in lines):
        return Dataset(np.zeros((0, N_FEATURES)), np.zeros(0, np.int64))
    table = None
    if all(line.strip() for line in lines):
        try:
            table = np.loadtxt(io.StringIO(text), delimiter=",", dtype=np.float64,
                               ndmin=2, comments=None)
        except ValueError:
            table = None
        if table is not None and not _fast_valid(table):
            table = None
    if table is None:
        # slow path pinpoints the offending line
        table = _parse_strict(lines)
    return Dataset(table[:, :N_FEATURES], table[:, N_FEATURES].astype(np.int64) - 1)


def write_covtype(path, data: Dataset) -> None:
    """Write ``data`` in the ``covtype.data`` layout (labels back to 1..7)."""
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wt", newline="\n") as fh:
        for x, label in zip(data.X, data.y):
            fh.write(",".join(f"{v:.17g}" for v in x))
            fh.write(f",{label + 1}\n")


def undersample_indices(labels, per_class: int, rng: np.random.Generator,
                        n_classes: int = N_CLASSES) -> np.ndarray:
    """Row indices of a class-balanced subsample, in original record order."""
    if per_class < 0:
        raise ValueError("per_class must be non-negative")
    labels = np.asarray(labels)
    chosen = []
    for c in range(n_classes):
        members = np.flatnonzero(labels == c)
        if len(members) < per_class:
            raise InsufficientClassError(c, len(members), per_class)
        chosen.append(rng.choice(members, size=per_class, replace=False))
    return np.sort(np.concatenate(chosen)).astype(np.int64)


def balance_undersample(data: Dataset, per_class: int, rng: np.random.Generator) -> Dataset:
    """Uniformly undersample every class to exactly ``per_class`` examples."""
    return data.subset(undersample_indices(data.y, per_class, rng, data.n_classes))


@dataclass(frozen=True, eq=False)
class Scaler:
    """Min-max map on ``columns``; all other columns pass through."""

    columns: np.ndarray
    minimum: np.ndarray
    maximum: np.ndarray
    n_features: int

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.array(X, dtype=np.float64, ndmin=2)
        if X.shape[1] != self.n_features:
            raise DataError(f"scaler fitted on {self.n_features} features, got {X.shape[1]}")
        span = self.maximum - self.minimum
        cols = X[:, self.columns]
        safe = np.where(span > 0, span, 1.0)
        X[:, self.columns] = np.where(span > 0, (cols - self.minimum) / safe, 0.0)
        return X


def fit_scaler(data: Dataset, continuous=None) -> Scaler:
    """Record per-column min/max of the continuous columns of ``data``.

    ``continuous`` defaults to every column holding a value other than 0/1.
    """
    if len(data) == 0:
        raise DataError("cannot fit a scaler on an empty dataset")
    X = data.X
    if continuous is None:
        continuous = np.flatnonzero(~np.all((X == 0.0) | (X == 1.0), axis=0))
    columns = np.asarray(continuous, dtype=np.int64)
    return Scaler(columns, X[:, columns].min(axis=0), X[:, columns].max(axis=0),
                  data.n_features)


def apply_scaler(scaler: Scaler, data: Dataset) -> Dataset:
    return Dataset(scaler.transform(data.X), data.y, data.n_classes)
