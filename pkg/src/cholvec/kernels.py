"""Kernel-matrix oracles from point data, CSV ingestion, synthetic generators.

The kernel is a Gaussian RBF with bandwidth tied to the predictor count,

    A(i, j) = exp(-||z_i - z_j||^2 / (2 d)) + mu * delta(i, j),

over standardized predictors. By default the CSV loader keeps the first
``n_max`` rows and standardizes the retained subsample with its own
statistics; ``full_file_stats=True`` switches to standardizing the whole file
before subsampling. Squared distances use direct subtraction unless the
row-norm cache is enabled (the cached expansion is faster on wide data but
loses accuracy for nearby points).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import EntryOracle, _frozen, _index_array
from .errors import EmptyDataset, ParseError


@dataclass(frozen=True)
class Dataset:
    """Standardized points, optional numeric labels, and their provenance."""

    points: np.ndarray
    labels: np.ndarray | None = None
    provenance: str = ""

    def __post_init__(self):
        object.__setattr__(self, "points", _frozen(self.points))
        if self.labels is not None:
            object.__setattr__(self, "labels", _frozen(self.labels))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class KernelSpec:
    """RBF kernel parameters: only the ridge is free, the bandwidth is 2d."""

    mu: float = 0.0

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError("ridge parameter mu must be nonnegative")


def standardize(points: np.ndarray) -> np.ndarray:
    """Column-wise mean 0, sample variance 1; constant columns become zeros."""
    points = np.asarray(points, dtype=float)
    centered = points - points.mean(axis=0)
    if points.shape[0] > 1:
        sd = centered.std(axis=0, ddof=1)
    else:
        sd = np.zeros(points.shape[1])
    safe = np.where(sd > 0.0, sd, 1.0)
    return np.where(sd > 0.0, centered / safe, 0.0)


def _parse_rows(path):
    rows = []
    with open(path, newline="") as handle:
        for row in csv.reader(handle):
            if row and any(cell.strip() for cell in row):
                rows.append([cell.strip() for cell in row])
    return rows


def load_csv(path, n_max=None, label_column=None, full_file_stats=False) -> Dataset:
    """Numeric CSV with optional header; keeps the first ``n_max`` data rows.

    ``label_column`` (name or 0-based position) is split off as the label
    vector. Non-numeric data cells raise :class:`ParseError` with their
    location.
    """
    rows = _parse_rows(path)
    if not rows:
        raise EmptyDataset(f"{path} contains no data")
    header = None
    start = 0
    try:
        [float(cell) for cell in rows[0]]
    except ValueError:
        header = rows[0]
        start = 1
    data_rows = rows[start:]
    if not data_rows:
        raise EmptyDataset(f"{path} contains a header but no data rows")
    width = len(data_rows[0])
    values = np.empty((len(data_rows), width))
    for i, row in enumerate(data_rows):
        if len(row) != width:
            raise ParseError("inconsistent column count", row=start + i + 1, column=len(row))
        for j, cell in enumerate(row):
            try:
                values[i, j] = float(cell)
            except ValueError:
                raise ParseError(
                    f"non-numeric cell {cell!r}", row=start + i + 1, column=j + 1
                ) from None
    label_idx = None
    if label_column is not None:
        if isinstance(label_column, str):
            if header is None or label_column not in header:
                raise ParseError(f"label column {label_column!r} not found")
            label_idx = header.index(label_column)
        else:
            label_idx = int(label_column)
            if not 0 <= label_idx < width:
                raise ParseError(f"label column {label_column} out of range")
    if full_file_stats:
        # standardize the whole file first, then subsample
        predictors = np.delete(values, label_idx, axis=1) if label_idx is not None else values
        predictors = standardize(predictors)
        labels = values[:, label_idx] if label_idx is not None else None
        if n_max is not None:
            predictors = predictors[:n_max]
            labels = labels[:n_max] if labels is not None else None
    else:
        if n_max is not None:
            values = values[:n_max]
        labels = values[:, label_idx] if label_idx is not None else None
        predictors = np.delete(values, label_idx, axis=1) if label_idx is not None else values
        predictors = standardize(predictors)
    if predictors.shape[0] == 0:
        raise EmptyDataset(f"{path}: no rows retained")
    stats = "full-file" if full_file_stats else "subsample"
    return Dataset(
        predictors,
        labels,
        provenance=f"{Path(path)}:first_{predictors.shape[0]}:{stats}-standardized",
    )


class KernelOracle(EntryOracle):
    """Entry oracle for the RBF kernel; entries computed on demand."""

    def __init__(self, data: Dataset, spec: KernelSpec, use_norm_cache=False):
        super().__init__(data.n)
        self.data = data
        self.spec = spec
        self._z = data.points
        self._gamma = 1.0 / (2.0 * data.d)
        self._norms = np.sum(self._z**2, axis=1) if use_norm_cache else None

    def _sqdist(self, i, idx):
        if self._norms is not None:
            cross = self._z[idx] @ self._z[i]
            return np.maximum(self._norms[idx] + self._norms[i] - 2.0 * cross, 0.0)
        diff = self._z[idx] - self._z[i]
        return np.sum(diff * diff, axis=1)

    def _value(self, i, j):
        if i == j:
            return 1.0 + self.spec.mu
        return float(np.exp(-self._gamma * self._sqdist(i, [j])[0]))

    def column(self, j, rows=None):
        rows = np.arange(self.n) if rows is None else _index_array(rows)
        self._add_lookups(rows.size)
        out = np.exp(-self._gamma * self._sqdist(j, rows))
        out[rows == j] = 1.0 + self.spec.mu
        return out

    def vector(self, i, idx):
        return self.column(i, rows=idx)

    def sym_block(self, idx):
        idx = _index_array(idx)
        t = idx.size
        self._add_lookups(t * (t + 1) // 2)
        pts = self._z[idx]
        sq = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=2)
        out = np.exp(-self._gamma * sq)
        np.fill_diagonal(out, 1.0 + self.spec.mu)
        return out

    def diagonal(self):
        self._add_lookups(self.n)
        return np.full(self.n, 1.0 + self.spec.mu)


def kernel_oracle(data: Dataset, spec: KernelSpec, use_norm_cache=False) -> KernelOracle:
    return KernelOracle(data, spec, use_norm_cache=use_norm_cache)


def kernel_matrix(data: Dataset, spec: KernelSpec) -> np.ndarray:
    """Dense kernel matrix, bypassing lookup counting (solver/test use)."""
    z = data.points
    sq = np.sum((z[:, None, :] - z[None, :, :]) ** 2, axis=2)
    out = np.exp(-sq / (2.0 * data.d))
    np.fill_diagonal(out, 1.0 + spec.mu)
    return out


def kernel_response_vectors(data: Dataset, spec: KernelSpec, k: int, seed=0) -> np.ndarray:
    """k right-hand sides: kernel columns against fresh Gaussian test points.

    Entries are ``exp(-||z_i - ztilde||^2 / (2 d))`` without the ridge.
    """
    if k < 1:
        raise ValueError("k must be positive")
    rng = np.random.default_rng(seed)
    test_points = rng.standard_normal((k, data.d))
    out = np.empty((k, data.n))
    for idx in range(k):
        diff = data.points - test_points[idx]
        out[idx] = np.exp(-np.sum(diff * diff, axis=1) / (2.0 * data.d))
    return out


def synthetic_clusters(n, d, k_clusters, spread, seed=0) -> Dataset:
    """Standardized Gaussian blobs around well-separated random centers."""
    if k_clusters < 1 or n < 1 or d < 1:
        raise ValueError("n, d, and k_clusters must be positive")
    rng = np.random.default_rng(seed)
    centers = 3.0 * rng.standard_normal((k_clusters, d))
    assignment = np.arange(n) % k_clusters
    points = centers[assignment] + spread * rng.standard_normal((n, d))
    return Dataset(
        standardize(points),
        labels=assignment.astype(float),
        provenance=f"clusters:n={n},d={d},k={k_clusters},spread={spread},seed={seed}",
    )
