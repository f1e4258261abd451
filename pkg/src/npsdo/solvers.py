"""Krylov solvers: CG, PCG, flexible PCG, PSD and PSDO.

Every solver stops once ``||r_k|| <= tol_reduction * ||r_0||`` and returns
``(x, SolveReport)``. Krylov arithmetic is float64; a preconditioner may
compute in float32 internally and is cast back at the interface.
"""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import BreakdownError, DimensionError
from .preconditioners import IdentityPreconditioner, Preconditioner

TINY_CURVATURE = 1e-300


@dataclass
class SolveConfig:
    tol_reduction: float = 1e-6
    max_iters: int = 1000
    n_ortho: int = 2
    nullspace_projection: bool = False
    normalize_residual: bool = True

    def __post_init__(self):
        if not 0.0 < self.tol_reduction < 1.0:
            raise ValueError("tol_reduction must lie in (0, 1)")
        if self.n_ortho < 0:
            raise ValueError("n_ortho must be >= 0")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")


@dataclass
class SolveReport:
    method: str = ""
    iterations: int = 0
    residual_history: list = field(default_factory=list)
    elapsed: list = field(default_factory=list)
    converged: bool = False
    setup_seconds: float = 0.0
    iterate_seconds: float = 0.0
    precond_seconds: float = 0.0
    message: str = ""

    @property
    def total_seconds(self) -> float:
        return self.setup_seconds + self.iterate_seconds

    @property
    def final_residual(self) -> float:
        return self.residual_history[-1]


def write_history_csv(path, report: SolveReport):
    """Columns: iter, residual_norm, cumulative_seconds."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "residual_norm", "cumulative_seconds"])
        for k, (res, t) in enumerate(zip(report.residual_history, report.elapsed)):
            w.writerow([k, repr(float(res)), repr(float(t))])


class NullspaceProjector:
    """Removes the per-component mean over floating (pure Neumann) components.

    ``components[i]`` is the component id of unknown i, or -1 for unknowns
    in Dirichlet-anchored regions.
    """

    def __init__(self, components):
        comp = np.asarray(components, dtype=np.int64)
        self.components = comp
        self.mask = comp >= 0
        self.ids = comp[self.mask]
        self.m = int(self.ids.max()) + 1 if self.ids.size else 0
        self.counts = np.bincount(self.ids, minlength=self.m).astype(np.float64)

    @classmethod
    def constant(cls, n: int) -> "NullspaceProjector":
        return cls(np.zeros(n, dtype=np.int64))

    def __call__(self, v: np.ndarray) -> np.ndarray:
        if self.m == 0:
            return v
        means = np.bincount(self.ids, weights=v[self.mask], minlength=self.m) / self.counts
        out = v.copy()
        out[self.mask] -= means[self.ids]
        return out


def _projector(cfg, n, nullspace):
    if nullspace is not None:
        return NullspaceProjector(nullspace)
    if cfg.nullspace_projection:
        return NullspaceProjector.constant(n)
    return None


def _setup(A, b, x0, cfg, nullspace):
    b = np.asarray(b, dtype=np.float64)
    n = b.shape[0]
    if A.shape != (n, n):
        raise DimensionError(f"matrix {A.shape} does not match rhs length {n}")
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    if x.shape != b.shape:
        raise DimensionError("x0 length does not match rhs")
    proj = _projector(cfg, n, nullspace)
    if proj is not None:
        b = proj(b)
    return b, x, proj


class _Clock:
    def __init__(self, report):
        self.report = report
        self.t0 = time.perf_counter()
        self.pre = 0.0

    def precond(self, P, r):
        t = time.perf_counter()
        z = np.asarray(P.apply(r), dtype=np.float64)
        self.pre += time.perf_counter() - t
        return z

    def record(self, res):
        self.report.residual_history.append(float(res))
        self.report.elapsed.append(self.report.setup_seconds + time.perf_counter() - self.t0)

    def finish(self):
        self.report.iterate_seconds = time.perf_counter() - self.t0
        self.report.precond_seconds = self.pre


def pcg_solve(A, b, P: Preconditioner | None = None, cfg: SolveConfig | None = None, x0=None,
              nullspace=None, setup_seconds: float = 0.0, _method: str = "pcg"):
    """Preconditioned CG with the standard residual recurrence."""
    cfg = cfg or SolveConfig()
    P = P or IdentityPreconditioner()
    b, x, proj = _setup(A, b, x0, cfg, nullspace)
    report = SolveReport(method=_method, setup_seconds=setup_seconds)
    clock = _Clock(report)
    r = b - A @ x
    if proj is not None:
        r = proj(r)
    r0 = np.linalg.norm(r)
    clock.record(r0)
    target = cfg.tol_reduction * r0
    if r0 == 0.0:
        report.converged = True
        clock.finish()
        return x, report
    z = clock.precond(P, r)
    if proj is not None:
        z = proj(z)
    d = z.copy()
    rz = np.dot(r, z)
    k = 0
    while k < cfg.max_iters:
        Ad = A @ d
        dAd = np.dot(d, Ad)
        if not dAd > TINY_CURVATURE:
            clock.finish()
            report.iterations = k
            report.message = f"breakdown: d^T A d = {dAd:.3e}"
            raise BreakdownError(report.message, iteration=k + 1, value=dAd, report=report)
        alpha = rz / dAd
        x += alpha * d
        r -= alpha * Ad
        if proj is not None:
            r = proj(r)
        k += 1
        res = np.linalg.norm(r)
        clock.record(res)
        if res <= target:
            report.converged = True
            break
        z = clock.precond(P, r)
        if proj is not None:
            z = proj(z)
        rz_new = np.dot(r, z)
        beta = rz_new / rz
        rz = rz_new
        d = z + beta * d
    report.iterations = k
    clock.finish()
    return x, report


def cg_solve(A, b, cfg: SolveConfig | None = None, x0=None, nullspace=None):
    """Unpreconditioned CG (PCG with the identity)."""
    return pcg_solve(A, b, IdentityPreconditioner(), cfg, x0, nullspace, _method="cg")


def flexible_pcg_solve(A, b, P: Preconditioner | None = None, cfg: SolveConfig | None = None,
                       x0=None, nullspace=None, setup_seconds: float = 0.0):
    """PCG with beta = r_k^T (z_k - z_{k-1}) / r_{k-1}^T z_{k-1}."""
    cfg = cfg or SolveConfig()
    P = P or IdentityPreconditioner()
    b, x, proj = _setup(A, b, x0, cfg, nullspace)
    report = SolveReport(method="fpcg", setup_seconds=setup_seconds)
    clock = _Clock(report)
    r = b - A @ x
    if proj is not None:
        r = proj(r)
    r0 = np.linalg.norm(r)
    clock.record(r0)
    target = cfg.tol_reduction * r0
    if r0 == 0.0:
        report.converged = True
        clock.finish()
        return x, report
    z = clock.precond(P, r)
    if proj is not None:
        z = proj(z)
    d = z.copy()
    rz = np.dot(r, z)
    k = 0
    while k < cfg.max_iters:
        Ad = A @ d
        dAd = np.dot(d, Ad)
        if not dAd > TINY_CURVATURE:
            clock.finish()
            report.iterations = k
            report.message = f"breakdown: d^T A d = {dAd:.3e}"
            raise BreakdownError(report.message, iteration=k + 1, value=dAd, report=report)
        alpha = rz / dAd
        x += alpha * d
        r -= alpha * Ad
        if proj is not None:
            r = proj(r)
        k += 1
        res = np.linalg.norm(r)
        clock.record(res)
        if res <= target:
            report.converged = True
            break
        z_old = z
        z = clock.precond(P, r)
        if proj is not None:
            z = proj(z)
        beta = np.dot(r, z - z_old) / rz
        rz = np.dot(r, z)
        d = z + beta * d
    report.iterations = k
    clock.finish()
    return x, report


def psdo_solve(A, b, P: Preconditioner | None = None, cfg: SolveConfig | None = None, x0=None,
               nullspace=None, setup_seconds: float = 0.0):
    """Preconditioned steepest descent with A-orthogonalization against the
    last ``cfg.n_ortho`` directions and exact line search. ``n_ortho = 0``
    is plain preconditioned steepest descent.

    The residual is recomputed as ``b - A x`` every iteration; products
    ``A d_i`` and ``d_i^T A d_i`` of stored directions are cached.
    """
    cfg = cfg or SolveConfig()
    P = P or IdentityPreconditioner()
    b, x, proj = _setup(A, b, x0, cfg, nullspace)
    report = SolveReport(method="psdo" if cfg.n_ortho else "psd", setup_seconds=setup_seconds)
    clock = _Clock(report)
    r = b - A @ x
    if proj is not None:
        r = proj(r)
    rnorm = np.linalg.norm(r)
    clock.record(rnorm)
    target = cfg.tol_reduction * rnorm
    if rnorm == 0.0:
        report.converged = True
        clock.finish()
        return x, report
    history = []  # (d_i, A d_i, d_i^T A d_i), most recent last
    k = 0
    while k < cfg.max_iters:
        k += 1
        d = clock.precond(P, r / rnorm if cfg.normalize_residual else r)
        if proj is not None:
            d = proj(d)
        for d_i, Ad_i, dAd_i in history:
            d = d - (np.dot(d, Ad_i) / dAd_i) * d_i
        Ad = A @ d
        dAd = np.dot(d, Ad)
        if not dAd > TINY_CURVATURE:
            report.iterations = k - 1
            report.message = f"breakdown at iteration {k}: d^T A d = {dAd:.3e}"
            clock.finish()
            raise BreakdownError(report.message, iteration=k, value=dAd, report=report)
        alpha = np.dot(r, d) / dAd
        x = x + alpha * d
        r = b - A @ x
        if proj is not None:
            r = proj(r)
        rnorm = np.linalg.norm(r)
        clock.record(rnorm)
        if cfg.n_ortho:
            history.append((d, Ad, dAd))
            if len(history) > cfg.n_ortho:
                history.pop(0)
        if rnorm <= target:
            report.converged = True
            break
    report.iterations = k
    clock.finish()
    return x, report


def psd_solve(A, b, P=None, cfg: SolveConfig | None = None, x0=None, nullspace=None,
              setup_seconds: float = 0.0):
    cfg = cfg or SolveConfig()
    cfg0 = SolveConfig(cfg.tol_reduction, cfg.max_iters, 0, cfg.nullspace_projection,
                       cfg.normalize_residual)
    return psdo_solve(A, b, P, cfg0, x0, nullspace, setup_seconds)


SOLVERS = {
    "cg": lambda A, b, P, cfg, x0, ns, t: cg_solve(A, b, cfg, x0, ns),
    "pcg": lambda A, b, P, cfg, x0, ns, t: pcg_solve(A, b, P, cfg, x0, ns, t),
    "fpcg": lambda A, b, P, cfg, x0, ns, t: flexible_pcg_solve(A, b, P, cfg, x0, ns, t),
    "psd": lambda A, b, P, cfg, x0, ns, t: psd_solve(A, b, P, cfg, x0, ns, t),
    "psdo": lambda A, b, P, cfg, x0, ns, t: psdo_solve(A, b, P, cfg, x0, ns, t),
}


def solve(method: str, A, b, P=None, cfg: SolveConfig | None = None, x0=None, nullspace=None,
          setup_seconds: float = 0.0):
    """Dispatch by solver name: cg, pcg, fpcg, psd or psdo."""
    try:
        fn = SOLVERS[method]
    except KeyError:
        raise ValueError(f"unknown solver {method!r}; choose from {sorted(SOLVERS)}") from None
    return fn(A, b, P, cfg or SolveConfig(), x0, nullspace, setup_seconds)
