"""Baseline preconditioners behind a common ``apply(r)`` interface."""
from __future__ import annotations

import math

import numba
import numpy as np
import scipy.sparse as sp

from .errors import DimensionError, NotSPDError
from .linalg import SparseMatrix


class Preconditioner:
    """Maps a residual to a search direction. Subclasses set the flags."""

    is_linear = True
    is_symmetric = True
    name = "base"

    def apply(self, r: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, r):
        return self.apply(r)


class IdentityPreconditioner(Preconditioner):
    name = "none"

    def apply(self, r):
        return np.array(r, dtype=np.float64, copy=True)


def identity_precond() -> IdentityPreconditioner:
    return IdentityPreconditioner()


class JacobiPreconditioner(Preconditioner):
    name = "jacobi"

    def __init__(self, A: SparseMatrix):
        d = A.diagonal()
        if np.any(d == 0.0):
            raise ValueError(f"zero diagonal entry at row {int(np.flatnonzero(d == 0.0)[0])}")
        self.inv_diag = 1.0 / d

    def apply(self, r):
        r = np.asarray(r, dtype=np.float64)
        if r.shape[0] != self.inv_diag.shape[0]:
            raise DimensionError("residual length does not match matrix")
        return r * self.inv_diag if r.ndim == 1 else r * self.inv_diag[:, None]


def jacobi_precond(A: SparseMatrix) -> JacobiPreconditioner:
    return JacobiPreconditioner(A)


class DenseInversePreconditioner(Preconditioner):
    """Exact A^-1 (test scale only)."""

    name = "exact"

    def __init__(self, A: SparseMatrix):
        self.inv = np.linalg.inv(A.to_dense())

    def apply(self, r):
        return self.inv @ np.asarray(r, dtype=np.float64)


@numba.njit(cache=True)
def _ic0_kernel(indptr, indices, data, n):
    """In-place IC(0) on the lower triangle stored in CSR (diagonal last in
    each row). Returns the failing row or -1."""
    for i in range(n):
        start, end = indptr[i], indptr[i + 1]
        for p in range(start, end - 1):
            k = indices[p]
            # sparse dot of row i and row k over columns < k
            s = 0.0
            a, b = start, indptr[k]
            b_end = indptr[k + 1] - 1
            while a < p and b < b_end:
                ca, cb = indices[a], indices[b]
                if ca == cb:
                    s += data[a] * data[b]
                    a += 1
                    b += 1
                elif ca < cb:
                    a += 1
                else:
                    b += 1
            data[p] = (data[p] - s) / data[indptr[k + 1] - 1]
        s = 0.0
        for p in range(start, end - 1):
            s += data[p] * data[p]
        piv = data[end - 1] - s
        if not piv > 0.0:
            return i
        data[end - 1] = math.sqrt(piv)
    return -1


@numba.njit(cache=True)
def _ic0_solve(indptr, indices, data, n, r):
    y = r.copy()
    for i in range(n):
        s = y[i]
        for p in range(indptr[i], indptr[i + 1] - 1):
            s -= data[p] * y[indices[p]]
        y[i] = s / data[indptr[i + 1] - 1]
    for i in range(n - 1, -1, -1):
        y[i] /= data[indptr[i + 1] - 1]
        zi = y[i]
        for p in range(indptr[i], indptr[i + 1] - 1):
            y[indices[p]] -= data[p] * zi
    return y


class IC0Preconditioner(Preconditioner):
    """Zero-fill incomplete Cholesky; ``apply`` solves L L^T z = r."""

    name = "ic0"

    def __init__(self, A: SparseMatrix, max_retries: int = 5):
        lower = sp.tril(A._csr, format="csr")
        lower.sort_indices()
        n = A.n_rows
        diag = A.diagonal()
        if np.any(diag <= 0):
            raise NotSPDError("IC(0) needs a positive diagonal")
        counts = np.diff(lower.indptr)
        last = lower.indices[lower.indptr[1:] - 1] if n else np.array([], dtype=np.int64)
        if np.any(counts == 0) or np.any(last != np.arange(n)):
            raise NotSPDError("IC(0) needs every diagonal entry stored")
        base = 1e-3 * float(diag.mean()) if n else 0.0
        indptr = lower.indptr.astype(np.int64)
        indices = lower.indices.astype(np.int64)
        for attempt in range(max_retries + 1):
            shift = 0.0 if attempt == 0 else base * 2.0 ** (attempt - 1)
            data = lower.data.astype(np.float64).copy()
            data[indptr[1:] - 1] += shift
            bad = _ic0_kernel(indptr, indices, data, n)
            if bad < 0:
                break
        else:
            raise NotSPDError(f"IC(0) broke down at row {bad} after {max_retries} shifted retries")
        self.retries = attempt
        self.shift = shift
        self._indptr, self._indices, self._data, self.n = indptr, indices, data, n

    @property
    def factor(self) -> SparseMatrix:
        return SparseMatrix(self.n, self.n, self._indptr, self._indices, self._data)

    def apply(self, r):
        r = np.asarray(r, dtype=np.float64)
        if r.shape[0] != self.n:
            raise DimensionError("residual length does not match factor")
        if r.ndim == 1:
            return _ic0_solve(self._indptr, self._indices, self._data, self.n, r)
        return np.stack([self.apply(r[:, k]) for k in range(r.shape[1])], axis=1)


def ic0_factorize(A: SparseMatrix, max_retries: int = 5) -> IC0Preconditioner:
    return IC0Preconditioner(A, max_retries)
