"""Arithmetic substrate: dense vectors, sparse rows, symmetric matrices.

Vectors are plain float64 numpy arrays. Rows and matrices are immutable
value objects validated at construction.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
import numpy.typing as npt

from .errors import DimensionMismatch, IndexOutOfRange, NonFiniteValue

Vector = npt.NDArray[np.float64]


def check_finite(vector: np.ndarray, what: str) -> None:
    bad = np.flatnonzero(~np.isfinite(vector))
    if bad.size:
        raise NonFiniteValue(what, int(bad[0]))


def require_same_dim(u: np.ndarray, v: np.ndarray) -> None:
    if u.shape != v.shape:
        raise DimensionMismatch(f'dimensions differ: {u.shape} vs {v.shape}')


def dot(u: Vector, v: Vector) -> float:
    require_same_dim(u, v)
    return float(np.dot(u, v))


@dataclass(frozen=True)
class SparseRow:
    indices: npt.NDArray[np.int64]
    values: Vector

    def __post_init__(self) -> None:
        indices = np.array(self.indices, dtype=np.int64, copy=True).reshape(-1)
        values = np.array(self.values, dtype=np.float64, copy=True).reshape(-1)
        if indices.shape != values.shape:
            raise DimensionMismatch('indices and values differ in length')
        if indices.size and (indices[0] < 0 or np.any(np.diff(indices) <= 0)):
            raise IndexOutOfRange(
                'sparse row indices must be non-negative and strictly increasing'
            )
        check_finite(values, 'sparse row')
        indices.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, 'indices', indices)
        object.__setattr__(self, 'values', values)

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    @property
    def squared_norm(self) -> float:
        return float(np.dot(self.values, self.values))

    def densify(self, n: int) -> Vector:
        self._check_range(n)
        dense = np.zeros(n)
        dense[self.indices] = self.values
        return dense

    def scaled(self, factor: float) -> SparseRow:
        return SparseRow(self.indices, self.values * factor)

    def _check_range(self, n: int) -> None:
        if self.indices.size and self.indices[-1] >= n:
            raise IndexOutOfRange(
                f'row index {int(self.indices[-1])} out of range for dimension {n}'
            )


def sparse_dot(row: SparseRow, x: Vector) -> float:
    row._check_range(x.shape[0])
    return float(np.dot(row.values, x[row.indices]))


@dataclass(frozen=True)
class SymmetricMatrix:
    entries: npt.NDArray[np.float64]
    psd: bool = False

    def __post_init__(self) -> None:
        entries = np.array(self.entries, dtype=np.float64, copy=True)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise DimensionMismatch(f'matrix must be square, got {entries.shape}')
        check_finite(entries.reshape(-1), 'matrix')
        scale = max(1.0, float(np.max(np.abs(entries), initial=0.0)))
        if not np.allclose(entries, entries.T, rtol=0.0, atol=1e-10 * scale):
            raise DimensionMismatch('matrix is not symmetric')
        upper = np.triu(entries)
        entries = upper + np.triu(entries, 1).T
        entries.setflags(write=False)
        object.__setattr__(self, 'entries', entries)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @classmethod
    def identity(cls, n: int) -> SymmetricMatrix:
        return cls(np.eye(n), psd=True)


def symv(C: SymmetricMatrix, x: Vector) -> Vector:
    if x.shape != (C.n,):
        raise DimensionMismatch(f'matrix is {C.n}x{C.n}, vector has shape {x.shape}')
    return C.entries @ x


class PowerIteration(NamedTuple):
    value: float
    converged: bool
    iterations: int


def lambda_max(
        C: SymmetricMatrix,
        tol: float = 1e-6,
        max_iters: int = 10_000,
        seed: Optional[int] = 0,
) -> PowerIteration:
    if tol <= 0:
        raise ValueError('tol must be positive')
    v = np.random.default_rng(seed).standard_normal(C.n)
    v /= np.linalg.norm(v)
    estimate = 0.0
    for iteration in range(1, max_iters + 1):
        w = symv(C, v)
        estimate = float(np.dot(v, w))
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return PowerIteration(0.0, True, iteration)
        residual = np.linalg.norm(w - estimate * v)
        if residual <= tol * abs(estimate):
            return PowerIteration(estimate, True, iteration)
        v = w / norm
    return PowerIteration(estimate, False, max_iters)
