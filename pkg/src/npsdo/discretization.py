"""Mixed Dirichlet/Neumann Poisson assembly on the indicator grid.

The stencil uses unit coefficients: a fluid row gets -1 per fluid neighbour
and a diagonal equal to the number of fluid-or-air neighbours. Cells outside
the domain count as solid. Grid spacing, density and time step are folded
into the right-hand side.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.ndimage as ndi
import scipy.sparse as sp

from .errors import DimensionError, EmptySystemError, FormatError
from .linalg import SparseMatrix
from .scene import AIR, FLUID, SOLID, IndicatorImage


def _neighbour_labels(labels: np.ndarray):
    """Yield (axis, direction, neighbour label array) with solid outside."""
    padded = np.pad(labels, 1, constant_values=SOLID)
    core = tuple(slice(1, -1) for _ in range(labels.ndim))
    for axis in range(labels.ndim):
        for step in (-1, 1):
            sl = list(core)
            sl[axis] = slice(1 + step, padded.shape[axis] - 1 + step)
            yield axis, step, padded[tuple(sl)]


def assemble_poisson(I: IndicatorImage) -> SparseMatrix:
    """Full n_c x n_c matrix; rows and columns of non-fluid cells are empty."""
    labels = I.labels()
    dims = labels.shape
    n_c = labels.size
    flat = np.arange(n_c).reshape(dims)
    fluid = labels == FLUID
    diag = np.zeros(dims, dtype=np.float64)
    rows, cols, vals = [], [], []
    for axis, step, nb in _neighbour_labels(labels):
        diag += fluid & ((nb == FLUID) | (nb == AIR))
        link = fluid & (nb == FLUID)
        src = flat[link]
        rows.append(src)
        cols.append(src + step * int(np.prod(dims[axis + 1:])))
        vals.append(np.full(src.size, -1.0))
    keep = fluid & (diag > 0)
    rows.append(flat[keep])
    cols.append(flat[keep])
    vals.append(diag[keep])
    coo = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(n_c, n_c))
    return SparseMatrix.from_scipy(coo.tocsr(), symmetric=True)


@dataclass(frozen=True, eq=False)
class ReductionMap:
    """Full-grid <-> fluid-only index bookkeeping (sentinel -1 for non-fluid)."""

    n_c: int
    fluid_indices: np.ndarray
    inverse: np.ndarray

    @classmethod
    def from_image(cls, I: IndicatorImage) -> "ReductionMap":
        fluid = (I.labels() == FLUID).ravel()
        idx = np.flatnonzero(fluid)
        inv = np.full(fluid.size, -1, dtype=np.int64)
        inv[idx] = np.arange(idx.size)
        idx.setflags(write=False)
        inv.setflags(write=False)
        return cls(fluid.size, idx, inv)

    @property
    def n_f(self) -> int:
        return len(self.fluid_indices)


def pad_vector(v, rmap: ReductionMap) -> np.ndarray:
    """Insert zeros at non-fluid cells (acts on the last axis)."""
    v = np.asarray(v)
    if v.shape[-1] != rmap.n_f:
        raise DimensionError(f"pad_vector: expected {rmap.n_f} entries, got {v.shape[-1]}")
    out = np.zeros(v.shape[:-1] + (rmap.n_c,), dtype=v.dtype)
    out[..., rmap.fluid_indices] = v
    return out


def restrict_vector(v, rmap: ReductionMap) -> np.ndarray:
    """Drop entries at non-fluid cells (acts on the last axis)."""
    v = np.asarray(v)
    if v.shape[-1] != rmap.n_c:
        raise DimensionError(f"restrict_vector: expected {rmap.n_c} entries, got {v.shape[-1]}")
    return v[..., rmap.fluid_indices]


def reduce(A_full: SparseMatrix, b_full, I: IndicatorImage):
    """Delete non-fluid rows/columns. Returns (A_reduced, b_reduced, map)."""
    rmap = ReductionMap.from_image(I)
    if rmap.n_f == 0:
        raise EmptySystemError("scene has no fluid cells")
    if A_full.n_rows != rmap.n_c:
        raise DimensionError("matrix does not match image")
    idx = rmap.fluid_indices
    sub = A_full._csr[idx][:, idx]
    A_red = SparseMatrix.from_scipy(sub, symmetric=A_full.symmetric)
    b_red = None if b_full is None else restrict_vector(np.asarray(b_full, dtype=np.float64), rmap)
    return A_red, b_red, rmap


def reduced_system(I: IndicatorImage, b_full=None):
    """Convenience: assemble and reduce in one call."""
    return reduce(assemble_poisson(I), b_full, I)


def floating_components(I: IndicatorImage, rmap: ReductionMap | None = None) -> np.ndarray:
    """Component id per fluid unknown for fluid regions without any air
    neighbour (pure Neumann, constant nullspace); -1 elsewhere.

    An all -1 result means the reduced matrix is positive definite.
    """
    rmap = rmap or ReductionMap.from_image(I)
    labels = I.labels()
    fluid = labels == FLUID
    structure = ndi.generate_binary_structure(labels.ndim, 1)
    comp, n = ndi.label(fluid, structure=structure)
    touches_air = np.zeros(n + 1, dtype=bool)
    for _, _, nb in _neighbour_labels(labels):
        hit = fluid & (nb == AIR)
        touches_air[np.unique(comp[hit])] = True
    floating = ~touches_air
    floating[0] = False
    comp_flat = comp.ravel()[rmap.fluid_indices]
    out = np.full(rmap.n_f, -1, dtype=np.int64)
    sel = floating[comp_flat]
    # renumber floating components 0..m-1
    uniq, inv = np.unique(comp_flat[sel], return_inverse=True)
    out[sel] = inv
    return out


def is_singular(I: IndicatorImage) -> bool:
    """True when some fluid component has only Neumann boundaries."""
    return bool(np.any(floating_components(I) >= 0))


# --------------------------------------------------------------------------
# MAC right-hand side


@dataclass
class MacVelocity:
    """Face-normal velocities: u on x-faces (Nx+1, Ny), v on y-faces (Nx, Ny+1)."""

    u: np.ndarray
    v: np.ndarray
    h: float = 1.0
    dt: float = 0.05
    rho: float = 1.0

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        nx, ny = self.u.shape[0] - 1, self.u.shape[1]
        if self.v.shape != (nx, ny + 1):
            raise DimensionError(f"u {self.u.shape} and v {self.v.shape} are not a MAC pair")

    @classmethod
    def zeros(cls, dims, **kw) -> "MacVelocity":
        nx, ny = dims
        return cls(np.zeros((nx + 1, ny)), np.zeros((nx, ny + 1)), **kw)

    @property
    def dims(self) -> tuple[int, int]:
        return (self.v.shape[0], self.u.shape[1])

    def copy(self, **kw) -> "MacVelocity":
        args = dict(u=self.u.copy(), v=self.v.copy(), h=self.h, dt=self.dt, rho=self.rho)
        args.update(kw)
        return MacVelocity(**args)

    def max_abs(self) -> float:
        return float(max(np.abs(self.u).max(initial=0.0), np.abs(self.v).max(initial=0.0)))


def face_sides(labels: np.ndarray):
    """Cell labels on the low and high side of every x-face and y-face
    (solid beyond the domain)."""
    padded = np.pad(labels, 1, constant_values=SOLID)
    ux_lo, ux_hi = padded[:-1, 1:-1], padded[1:, 1:-1]
    vy_lo, vy_hi = padded[1:-1, :-1], padded[1:-1, 1:]
    return (ux_lo, ux_hi), (vy_lo, vy_hi)


def neumann_faces(labels: np.ndarray):
    """Boolean masks of fluid-solid faces (Gamma_n) for u and v."""
    (ulo, uhi), (vlo, vhi) = face_sides(labels)
    fu = ((ulo == FLUID) & (uhi == SOLID)) | ((ulo == SOLID) & (uhi == FLUID))
    fv = ((vlo == FLUID) & (vhi == SOLID)) | ((vlo == SOLID) & (vhi == FLUID))
    return fu, fv


def net_outflux(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Per-cell (u_right - u_left + v_top - v_bottom)."""
    return (u[1:, :] - u[:-1, :]) + (v[:, 1:] - v[:, :-1])


def apply_neumann(vel: MacVelocity, I: IndicatorImage, neumann_values=None) -> MacVelocity:
    """Copy of ``vel`` with Gamma_n faces overwritten by the boundary velocity."""
    fu, fv = neumann_faces(I.labels())
    out = vel.copy()
    if neumann_values is None:
        out.u[fu] = 0.0
        out.v[fv] = 0.0
    else:
        un, vn = neumann_values
        out.u[fu] = np.asarray(un, dtype=np.float64)[fu]
        out.v[fv] = np.asarray(vn, dtype=np.float64)[fv]
    return out


def mac_divergence_rhs(vel: MacVelocity, I: IndicatorImage, neumann_values=None) -> np.ndarray:
    """Full-grid RHS b = -(rho h / dt) * net face outflux at fluid cells.

    ``neumann_values`` is a pair of arrays shaped like ``(vel.u, vel.v)``
    whose entries on fluid-solid faces replace the provisional velocity;
    ``None`` means static walls (zero normal velocity).
    """
    if I.ndim != 2 or I.dims != vel.dims:
        raise DimensionError(f"velocity dims {vel.dims} do not match image {I.dims}")
    if neumann_values is not None:
        un, vn = neumann_values
        if np.shape(un) != vel.u.shape or np.shape(vn) != vel.v.shape:
            raise DimensionError("neumann_values must match the MAC face arrays")
    bc = apply_neumann(vel, I, neumann_values)
    b = -(vel.rho * vel.h / vel.dt) * net_outflux(bc.u, bc.v)
    b[I.labels() != FLUID] = 0.0
    return b.ravel()


def fluid_divergence(vel: MacVelocity, I: IndicatorImage) -> np.ndarray:
    """Discrete divergence (net outflux / h) at fluid cells, zero elsewhere."""
    div = net_outflux(vel.u, vel.v) / vel.h
    div[I.labels() != FLUID] = 0.0
    return div


# --------------------------------------------------------------------------
# triplet text export


def write_triplets(path, A: SparseMatrix):
    coo = A._csr.tocoo()
    with open(path, "w") as fh:
        fh.write(f"{A.n_rows} {A.n_cols} {A.nnz}\n")
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{i} {j} {float(v)!r}\n")


def read_triplets(path, symmetric: bool = True) -> SparseMatrix:
    lines = Path(path).read_text().splitlines()
    try:
        n_rows, n_cols, nnz = (int(t) for t in lines[0].split())
        body = np.array([ln.split() for ln in lines[1:1 + nnz]], dtype=object).reshape(nnz, 3)
    except (ValueError, IndexError) as exc:
        raise FormatError(f"{path}: malformed triplet file") from exc
    if len(lines) - 1 < nnz:
        raise FormatError(f"{path}: expected {nnz} entries")
    rows = body[:, 0].astype(np.int64)
    cols = body[:, 1].astype(np.int64)
    vals = body[:, 2].astype(np.float64)
    return SparseMatrix.from_scipy(sp.coo_matrix((vals, (rows, cols)), shape=(n_rows, n_cols)),
                                   symmetric=symmetric)
