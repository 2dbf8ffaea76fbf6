"""Synthetic multi-task binary datasets, CSV ingestion and seeded splits."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, SchemaError
from .numerics import make_rng, random_orthonormal


@dataclass
class MultiTaskDataset:
    X: np.ndarray  # N x F
    Y: np.ndarray  # N x K, entries in {0, 1}
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.Y = np.asarray(self.Y, dtype=float)
        if self.X.ndim != 2 or self.Y.ndim != 2 or len(self.X) != len(self.Y) or len(self.X) < 1:
            raise InvalidInputError(f"inconsistent dataset shapes X{self.X.shape} Y{self.Y.shape}")
        if not np.all(np.isfinite(self.X)):
            raise InvalidInputError("features contain non-finite values")
        if not np.all((self.Y == 0.0) | (self.Y == 1.0)):
            raise InvalidInputError("labels must be 0 or 1")

    @property
    def N(self):
        return self.X.shape[0]

    @property
    def F(self):
        return self.X.shape[1]

    @property
    def K(self):
        return self.Y.shape[1]

    def subset(self, idx):
        return MultiTaskDataset(self.X[idx], self.Y[idx], dict(self.meta))


@dataclass(frozen=True)
class SyntheticSpec:
    N: int = 10_000
    F: int = 16
    K: int = 2
    rho: float = 0.2
    alpha: float = 0.5
    seed: int = 0
    signal: float = 1.0  # logit scale; larger means less label noise

    def __post_init__(self):
        if self.N < 1:
            raise InvalidInputError("N must be >= 1")
        if self.F < 2:
            raise InvalidInputError("F must be >= 2")
        if self.K < 1:
            raise InvalidInputError("K must be >= 1")
        if self.K > self.F:
            raise InvalidInputError(f"K={self.K} task directions cannot be placed in F={self.F} dimensions")
        if not self.signal > 0:
            raise InvalidInputError("signal must be positive")
        if not -1.0 <= self.rho <= 1.0:
            raise InvalidInputError(f"rho must lie in [-1, 1], got {self.rho}")


def _psd_cholesky(C, tol=1e-12):
    """Lower-triangular L with L L^T = C for positive semi-definite C (zero pivots allowed)."""
    n = C.shape[0]
    L = np.zeros_like(C)
    for j in range(n):
        pivot = C[j, j] - L[j, :j] @ L[j, :j]
        if pivot < -tol:
            raise InvalidInputError("task correlation matrix is not positive semi-definite")
        if pivot <= tol:
            continue
        L[j, j] = np.sqrt(pivot)
        L[j + 1:, j] = (C[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L


def task_directions(K, F, rho, rng):
    """Unit vectors ``u_1..u_K`` in ``R^F`` with pairwise cosine ``rho``.

    ``u_1`` is uniform on the sphere; for two tasks
    ``u_2 = rho * u_1 + sqrt(1 - rho^2) * e`` with ``e`` a random unit vector
    orthogonal to ``u_1``.
    """
    C = np.full((K, K), float(rho))
    np.fill_diagonal(C, 1.0)
    if np.linalg.eigvalsh(C)[0] < -1e-12:
        raise InvalidInputError(f"pairwise correlation rho={rho} is infeasible for K={K} tasks")
    L = _psd_cholesky(C)
    return L @ random_orthonormal(K, F, rng)


def generate_synthetic(spec: SyntheticSpec) -> MultiTaskDataset:
    """Features ``x ~ N(0, I)``; label ``k`` ~ Bernoulli(sigmoid(signal * (s + alpha * sin(3 s)))), ``s = u_k . x``."""
    rng = make_rng(spec.seed)
    U = task_directions(spec.K, spec.F, spec.rho, rng)
    X = rng.standard_normal((spec.N, spec.F))
    S = X @ U.T
    logits = spec.signal * (S + spec.alpha * np.sin(3.0 * S))
    prob = 1.0 / (1.0 + np.exp(-logits))
    Y = (rng.random((spec.N, spec.K)) < prob).astype(float)
    meta = {"source": "synthetic", **{k: getattr(spec, k) for k in ("N", "F", "K", "rho", "alpha", "signal", "seed")}}
    return MultiTaskDataset(X, Y, meta)


def csv_header(F, K):
    return [f"f{j}" for j in range(F)] + [f"y{k}" for k in range(K)]


def write_csv(ds: MultiTaskDataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(csv_header(ds.F, ds.K))
        for x, y in zip(ds.X, ds.Y):
            writer.writerow([repr(float(v)) for v in x] + [str(int(v)) for v in y])


def load_csv(path, F: int, K: int) -> MultiTaskDataset:
    """Read ``f0..f{F-1}, y0..y{K-1}`` columns (extra columns are ignored)."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("f0", path) from None
        position = {name.strip(): j for j, name in enumerate(header)}
        columns = []
        for name in csv_header(F, K):
            if name not in position:
                raise SchemaError(name, path)
            columns.append(position[name])
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append([float(row[j]) for j in columns])
            except (ValueError, IndexError):
                raise InvalidInputError(f"{path}: row {line_no - 1} (line {line_no}) has a missing or non-numeric cell") from None
    if not rows:
        raise InvalidInputError(f"{path}: no data rows")
    data = np.asarray(rows)
    X, Y = data[:, :F], data[:, F:]
    bad = np.flatnonzero(~np.all((Y == 0.0) | (Y == 1.0), axis=1))
    if bad.size:
        raise InvalidInputError(f"{path}: non-binary label in data row {bad[0] + 1}")
    return MultiTaskDataset(X, Y, {"source": str(path)})


def split(ds: MultiTaskDataset, test_fraction: float, seed: int):
    """Seeded permutation split into ``(train, test)``."""
    if not 0.0 < test_fraction < 1.0:
        raise InvalidInputError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    n_test = int(round(ds.N * test_fraction))
    if not 0 < n_test < ds.N:
        raise InvalidInputError(f"cannot split N={ds.N} with test_fraction={test_fraction}")
    perm = make_rng(seed).permutation(ds.N)
    return ds.subset(np.sort(perm[n_test:])), ds.subset(np.sort(perm[:n_test]))
