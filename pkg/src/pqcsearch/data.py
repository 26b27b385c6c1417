"""Benchmark datasets: CSV ingestion, generators, scaling, PCA and split views.

Scalers are always fit on the training indices. Steps that must not see the
test split receive a :class:`TrainView`; the full :class:`Dataset` hands out
test data only through :meth:`Dataset.test_data`, which logs the caller's
phase in a :class:`LeakageAudit`.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
from numpy.polynomial import chebyshev

from .circuit import EncodingCircuit, random_layered
from .learners import CLASSIFICATION, REGRESSION, FoldPlan, fixed_folds
from .pqk import compute_features

logger = logging.getLogger(__name__)

__all__ = [
    "CsvFormatError",
    "Dataset",
    "LeakageAudit",
    "PcaTransform",
    "TrainView",
    "fixed_folds",
    "load_csv",
    "make_synthetic_quantum_regression",
    "make_two_curves",
    "pca_reduce",
    "prepare_california",
]


class CsvFormatError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None, column: Optional[str] = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column!r}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.line = line
        self.column = column


class LeakageAudit:
    """Records every test-split access together with the pipeline phase."""

    def __init__(self):
        self.phase = "setup"
        self.accesses: list[tuple[str, int]] = []

    def record(self, n_indices: int) -> None:
        self.accesses.append((self.phase, n_indices))

    def reads_during(self, *phases: str) -> int:
        return sum(1 for phase, _ in self.accesses if phase in phases)


@dataclass(frozen=True)
class TrainView:
    """Training rows only; what the search and tuning steps get to see."""

    dataset_id: str
    task: str
    X: np.ndarray
    y: np.ndarray

    @property
    def n(self) -> int:
        return len(self.X)


@dataclass
class Dataset:
    id: str
    X: np.ndarray
    y: np.ndarray
    task: str
    train_idx: np.ndarray
    test_idx: np.ndarray
    scaling: dict = field(default_factory=dict)
    seed: Optional[int] = None
    notes: str = ""
    audit: LeakageAudit = field(default_factory=LeakageAudit, repr=False)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        self.train_idx = np.asarray(self.train_idx, dtype=np.int64)
        self.test_idx = np.asarray(self.test_idx, dtype=np.int64)
        if self.task not in (REGRESSION, CLASSIFICATION):
            raise ValueError(f"unknown task {self.task!r}")
        n = len(self.X)
        if len(self.y) != n:
            raise ValueError("X and y differ in length")
        both = np.concatenate([self.train_idx, self.test_idx])
        if both.size != n or not np.array_equal(np.sort(both), np.arange(n)):
            raise ValueError("train and test indices must partition the rows")

    @property
    def n(self) -> int:
        return len(self.X)

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def train_view(self) -> TrainView:
        return TrainView(self.id, self.task, self.X[self.train_idx], self.y[self.train_idx])

    def test_data(self) -> tuple[np.ndarray, np.ndarray]:
        self.audit.record(self.test_idx.size)
        return self.X[self.test_idx], self.y[self.test_idx]

    def manifest(self) -> dict:
        return {
            "id": self.id,
            "task": self.task,
            "N": self.n,
            "d": self.d,
            "train_idx": self.train_idx.tolist(),
            "test_idx": self.test_idx.tolist(),
            "scaling": self.scaling,
            "seed": self.seed,
            "notes": self.notes,
        }


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def load_csv(path: Union[str, Path], target: str, task: str = REGRESSION, dataset_id: Optional[str] = None) -> Dataset:
    """Read a numeric CSV with a header row; every row goes to the training split.

    Empty cells and ``nan`` entries mark a row as missing; such rows are
    dropped and their line numbers logged and kept in ``notes``.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise CsvFormatError(f"{path}: empty file", line=1) from None
        if target not in header:
            raise CsvFormatError(f"{path}: target column {target!r} not found", line=1, column=target)
        rows, dropped = [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise CsvFormatError(f"{path}: expected {len(header)} fields, got {len(row)}", line=line_no)
            values = []
            for name, cell in zip(header, row):
                cell = cell.strip()
                if cell == "":
                    values.append(math.nan)
                    continue
                try:
                    values.append(float(cell))
                except ValueError:
                    raise CsvFormatError(f"{path}: non-numeric value {cell!r}", line=line_no, column=name) from None
            if any(math.isnan(v) for v in values):
                dropped.append(line_no)
            else:
                rows.append(values)
    if not rows:
        raise CsvFormatError(f"{path}: no complete data rows")
    if dropped:
        logger.warning("%s: dropped %d rows with missing values (lines %s)", path, len(dropped), dropped[:20])
    table = np.array(rows)
    t = header.index(target)
    X = np.delete(table, t, axis=1)
    y = table[:, t]
    notes = f"dropped lines {dropped}" if dropped else ""
    return Dataset(dataset_id or path.stem, X, y, task, np.arange(len(y)), np.array([], dtype=np.int64), {"columns": [h for h in header if h != target]}, notes=notes)


# ---------------------------------------------------------------------------
# scaling helpers
# ---------------------------------------------------------------------------

def _minmax(X: np.ndarray, train: np.ndarray, lo: float = 0.0, hi: float = 1.0):
    mn = X[train].min(axis=0)
    mx = X[train].max(axis=0)
    span = np.where(mx > mn, mx - mn, 1.0)
    return lo + (hi - lo) * (X - mn) / span, {"min": np.atleast_1d(mn).tolist(), "max": np.atleast_1d(mx).tolist(), "range": [lo, hi]}


def _standardize(X: np.ndarray, train: np.ndarray):
    mu = X[train].mean(axis=0)
    sd = X[train].std(axis=0)
    sd = np.where(sd > 1e-12, sd, 1.0)
    return (X - mu) / sd, {"mean": np.atleast_1d(mu).tolist(), "std": np.atleast_1d(sd).tolist()}


def _split(rng: np.random.Generator, n: int, n_train: int) -> tuple[np.ndarray, np.ndarray]:
    perm = rng.permutation(n)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


# ---------------------------------------------------------------------------
# benchmark problems
# ---------------------------------------------------------------------------

def prepare_california(raw: Dataset, seed: int = 0, n: int = 1000, n_train: int = 700) -> Dataset:
    """Seeded subsample with features and target min-max scaled to [0, 1] on train."""
    if raw.d != 8:
        raise ValueError(f"expected 8 features, got {raw.d}")
    if raw.n < n:
        raise ValueError(f"need at least {n} rows, got {raw.n}")
    rng = np.random.default_rng(seed)
    rows = np.sort(rng.choice(raw.n, size=n, replace=False))
    X, y = raw.X[rows], raw.y[rows]
    train, test = _split(rng, n, n_train)
    X, x_scale = _minmax(X, train)
    y, y_scale = _minmax(y[:, None], train)
    scaling = {"X": x_scale, "y": y_scale, "source_rows": rows.tolist()}
    return Dataset("california", X, y[:, 0], REGRESSION, train, test, scaling, seed)


def make_two_curves(
    n: int = 300,
    d: int = 10,
    degree: int = 20,
    seed: int = 0,
    delta: float = 0.5,
    noise: float = 0.1,
    n_train: int = 240,
) -> Dataset:
    """Two noisy copies of a random polynomial curve, offset by ``delta``.

    Each coordinate of the base curve is a Chebyshev series in ``2t - 1`` with
    N(0, 1/(j+1)^2) coefficients, rescaled to unit overall standard deviation.
    The classes are the base curve shifted by ``-delta/2`` and ``+delta/2``
    along a random unit vector; ``noise`` is isotropic Gaussian jitter.
    Labels are -1 and +1; features are standardized on the training split.
    """
    if n % 2:
        raise ValueError("n must be even")
    rng = np.random.default_rng(seed)
    coef = rng.normal(size=(degree + 1, d)) / (1.0 + np.arange(degree + 1))[:, None]
    direction = rng.normal(size=d)
    direction /= np.linalg.norm(direction)
    t = rng.uniform(0.0, 1.0, size=n)
    labels = np.repeat([-1.0, 1.0], n // 2)
    base = chebyshev.chebval(2.0 * t - 1.0, coef).T
    base /= base.std()
    X = base + 0.5 * delta * labels[:, None] * direction + noise * rng.normal(size=(n, d))
    train, test = _split(rng, n, n_train)
    X, scale = _standardize(X, train)
    params = {"degree": degree, "delta": delta, "noise": noise}
    return Dataset("two_curves", X, labels, CLASSIFICATION, train, test, {"X": scale, "generator": params}, seed, "surrogate generator")


def make_synthetic_quantum_regression(
    n_train: int = 100, n_test: int = 100, q: int = 4, seed: int = 0, layers: int = 6, min_label_std: float = 0.1
) -> Dataset:
    """Features in [-1, 1]^q labelled by <Z_0> after a seeded random layered circuit."""
    rng = np.random.default_rng(seed)
    n = n_train + n_test
    X = rng.uniform(-1.0, 1.0, size=(n, q))
    # redraw circuits whose <Z_0> barely depends on x
    while True:
        circuit = random_layered(rng, q, min_layers=layers, max_layers=layers)
        y = compute_features(circuit, X).values[:, 2 * q]
        if y.std() >= min_label_std:
            break
    train, test = _split(rng, n, n_train)
    y, scale = _standardize(y[:, None], train)
    scaling = {"y": scale, "label_circuit": circuit.key}
    return Dataset("synthetic_quantum", X, y[:, 0], REGRESSION, train, test, scaling, seed, "surrogate: labels from a random quantum circuit")


# ---------------------------------------------------------------------------
# PCA
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PcaTransform:
    mean: np.ndarray
    components: np.ndarray  # (k, d), rows orthonormal
    explained_variance_ratio: np.ndarray

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) @ self.components.T

    def inverse(self, Z) -> np.ndarray:
        return np.asarray(Z) @ self.components + self.mean


def pca_reduce(X, k: int, train_idx=None) -> tuple[np.ndarray, PcaTransform]:
    """Project onto the top ``k`` principal directions of the (training) rows.

    Each direction's largest-magnitude entry is made positive.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or not 1 <= k <= X.shape[1]:
        raise ValueError(f"k must lie in [1, {X.shape[1]}], got {k}")
    fit = X if train_idx is None else X[np.asarray(train_idx)]
    mean = fit.mean(axis=0)
    _, s, vt = np.linalg.svd(fit - mean, full_matrices=False)
    comps = vt[:k]
    pivots = np.argmax(np.abs(comps), axis=1)
    comps = comps * np.sign(comps[np.arange(k), pivots])[:, None]
    var = s**2
    total = var.sum()
    ratio = var[:k] / total if total > 0 else np.zeros(k)
    tr = PcaTransform(mean, comps, ratio)
    return tr.transform(X), tr


def folds_for(view: TrainView, k: int = 5, seed: int = 0) -> FoldPlan:
    return fixed_folds(view.n, k, seed)
