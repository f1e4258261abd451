"""Vector and CSR primitives, dense Cholesky and Lanczos Ritz pairs.

All solver-side arithmetic is float64. The CSR container keeps the raw
arrays as the source of truth and hands a scipy view to the mat-vec kernel.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh_tridiagonal

from .errors import DimensionError, NotSPDError


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Compressed sparse row matrix.

    ``row_offsets`` has ``n_rows + 1`` entries, column indices are strictly
    increasing within a row. Instances are treated as immutable.
    """

    n_rows: int
    n_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray
    symmetric: bool = False
    _csr: sp.csr_matrix = field(init=False, repr=False)

    def __post_init__(self):
        offsets = np.ascontiguousarray(self.row_offsets, dtype=np.int64)
        cols = np.ascontiguousarray(self.col_indices, dtype=np.int64)
        vals = np.ascontiguousarray(self.values, dtype=np.float64)
        if offsets.shape != (self.n_rows + 1,):
            raise DimensionError("row_offsets must have n_rows + 1 entries")
        if offsets[0] != 0 or offsets[-1] != len(vals) or len(cols) != len(vals):
            raise DimensionError("row_offsets inconsistent with values length")
        if np.any(np.diff(offsets) < 0):
            raise ValueError("row_offsets must be nondecreasing")
        if len(cols) and (cols.min() < 0 or cols.max() >= self.n_cols):
            raise DimensionError("column index out of range")
        if len(cols) > 1:
            # strictly increasing within each row; row starts are exempt
            step = np.diff(cols)
            row_start = np.zeros(len(cols), dtype=bool)
            row_start[offsets[1:-1][offsets[1:-1] < len(cols)]] = True
            if np.any((step <= 0) & ~row_start[1:]):
                raise ValueError("column indices must be strictly increasing within rows")
        for name, arr in (("row_offsets", offsets), ("col_indices", cols), ("values", vals)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        csr = sp.csr_matrix((vals, cols, offsets), shape=(self.n_rows, self.n_cols))
        object.__setattr__(self, "_csr", csr)

    @classmethod
    def from_scipy(cls, mat, symmetric: bool = False) -> "SparseMatrix":
        csr = sp.csr_matrix(mat, dtype=np.float64, copy=True)
        csr.sum_duplicates()
        csr.sort_indices()
        return cls(csr.shape[0], csr.shape[1], csr.indptr, csr.indices, csr.data, symmetric)

    @classmethod
    def from_dense(cls, dense, symmetric: bool = False) -> "SparseMatrix":
        return cls.from_scipy(sp.csr_matrix(np.asarray(dense, dtype=np.float64)), symmetric)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self) -> int:
        return len(self.values)

    def to_scipy(self) -> sp.csr_matrix:
        return self._csr.copy()

    def to_dense(self) -> np.ndarray:
        return self._csr.toarray()

    def diagonal(self) -> np.ndarray:
        return self._csr.diagonal()

    def frobenius_norm(self) -> float:
        return float(np.sqrt(np.dot(self.values, self.values)))

    def is_structurally_symmetric(self) -> bool:
        """Exact check: (i, j) stored iff (j, i) stored, with equal values."""
        if self.n_rows != self.n_cols:
            return False
        diff = self._csr - self._csr.T
        diff.eliminate_zeros()
        pattern = (self._csr != 0).astype(np.int8)
        return diff.nnz == 0 and (pattern != pattern.T).nnz == 0

    def __matmul__(self, x):
        return spmv(self, x)


def spmv(A: SparseMatrix, x) -> np.ndarray:
    """y = A x for a vector, or column-wise for an (n, k) block."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != A.n_cols:
        raise DimensionError(f"spmv: matrix has {A.n_cols} columns, vector has {x.shape[0]} rows")
    return A._csr @ x


def _check_same(x, y):
    if np.shape(x) != np.shape(y):
        raise DimensionError(f"length mismatch: {np.shape(x)} vs {np.shape(y)}")


def dot(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_same(x, y)
    return float(np.dot(x, y))


def norm2(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.sqrt(np.dot(x, x)))


def axpy(a: float, x, y) -> np.ndarray:
    """Return a*x + y (new array)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_same(x, y)
    return a * x + y


def dense_cholesky(A) -> np.ndarray:
    """Lower-triangular L with L L^T = A. Raises NotSPDError on a bad pivot."""
    A = np.array(A, dtype=np.float64)
    n = A.shape[0]
    if A.shape != (n, n):
        raise DimensionError("dense_cholesky needs a square matrix")
    L = np.zeros_like(A)
    for j in range(n):
        pivot = A[j, j] - np.dot(L[j, :j], L[j, :j])
        if not pivot > 0.0:
            raise NotSPDError(f"non-positive pivot {pivot:.3e} at column {j}")
        L[j, j] = np.sqrt(pivot)
        L[j + 1:, j] = (A[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L


@dataclass(frozen=True)
class RitzPair:
    value: float
    vector: np.ndarray


class RitzPairs(list):
    """List of RitzPair sorted by value; ``breakdown`` is set when Lanczos
    terminated early on a vanishing off-diagonal."""

    breakdown: bool = False


def lanczos_ritz(A, k: int, seed: int = 0, project_constant: bool = False,
                 breakdown_tol: float = 1e-12) -> RitzPairs:
    """k Ritz pairs of symmetric A from k Lanczos steps with full reorthogonalization.

    The start vector is a standard-normal draw from ``numpy.random.default_rng(seed)``
    scaled to unit length. With ``project_constant`` the start vector and every
    new basis vector are kept orthogonal to the constant vector, which restricts
    the Krylov space to the range of a pure-Neumann Laplacian.
    """
    n = A.shape[0]
    if k > n:
        raise DimensionError(f"k={k} exceeds matrix size {n}")
    if k <= 0:
        return RitzPairs()
    matvec = A.__matmul__ if hasattr(A, "__matmul__") else (lambda v: A @ v)

    ones = np.full(n, 1.0 / np.sqrt(n))
    rng = np.random.default_rng(seed)
    q = rng.standard_normal(n)
    if project_constant:
        q -= ones * np.dot(ones, q)
    q /= np.linalg.norm(q)

    Q = np.zeros((n, k))
    alphas = np.zeros(k)
    betas = np.zeros(k)
    scale = 0.0
    m = k
    broke = False
    for j in range(k):
        Q[:, j] = q
        w = matvec(q)
        alphas[j] = np.dot(q, w)
        w -= alphas[j] * q
        if j > 0:
            w -= betas[j - 1] * Q[:, j - 1]
        # two passes of classical Gram-Schmidt against the whole basis
        for _ in range(2):
            w -= Q[:, : j + 1] @ (Q[:, : j + 1].T @ w)
            if project_constant:
                w -= ones * np.dot(ones, w)
        beta = np.linalg.norm(w)
        scale = max(scale, abs(alphas[j]), beta)
        if j == k - 1:
            break
        if beta <= breakdown_tol * scale:
            m = j + 1
            broke = j + 1 < k
            break
        betas[j] = beta
        q = w / beta

    T_diag = alphas[:m]
    T_off = betas[: m - 1]
    theta, S = eigh_tridiagonal(T_diag, T_off)
    V = Q[:, :m] @ S
    V /= np.linalg.norm(V, axis=0)
    pairs = RitzPairs(RitzPair(float(theta[i]), V[:, i].copy()) for i in range(m))
    pairs.breakdown = broke
    if broke:
        warnings.warn(f"Lanczos breakdown after {m} of {k} steps", RuntimeWarning, stacklevel=2)
    return pairs
