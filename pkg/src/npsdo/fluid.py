"""Minimal 2D Chorin-splitting stepper used to manufacture Poisson systems.

Free surfaces are not tracked: air regions are scripted through moving or
growing primitives in the SceneSpec, so every frame's geometry is known in
advance and only the velocity field evolves.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import map_coordinates

from .discretization import (MacVelocity, ReductionMap, apply_neumann, assemble_poisson,
                             face_sides, floating_components, fluid_divergence,
                             mac_divergence_rhs, read_triplets, reduce, write_triplets)
from .errors import ConvergenceError
from .linalg import SparseMatrix
from .preconditioners import ic0_factorize
from .scene import AIR, FLUID, SOLID, IndicatorImage, SceneSpec, box, disc, half_space, \
    rasterize, read_scn, write_scn
from .solvers import SolveConfig, pcg_solve

DEFAULT_DT = 0.05


@dataclass
class FluidState:
    vel: MacVelocity
    spec: SceneSpec
    t: float = 0.0
    gravity: tuple = (0.0, -9.8)
    neumann_values: tuple | None = None

    @property
    def image(self) -> IndicatorImage:
        return rasterize(self.spec, t=self.t)


def _sample(grid: np.ndarray, x: np.ndarray, y: np.ndarray, ox: float, oy: float) -> np.ndarray:
    """Bilinear sample of a staggered component whose (0, 0) entry sits at (ox, oy)."""
    return map_coordinates(grid, [x - ox, y - oy], order=1, mode="nearest")


def advect(state: FluidState) -> MacVelocity:
    """Semi-Lagrangian backtrace of both face components plus dt * gravity."""
    vel = state.vel
    u, v, dt, h = vel.u, vel.v, vel.dt, vel.h
    nx, ny = vel.dims

    def velocity_at(x, y):
        return _sample(u, x, y, 0.0, 0.5), _sample(v, x, y, 0.5, 0.0)

    def backtrace(x, y, comp, ox, oy):
        ux, vy = velocity_at(x, y)
        xb = np.clip(x - dt * ux / h, 0.0, nx)
        yb = np.clip(y - dt * vy / h, 0.0, ny)
        return _sample(comp, xb, yb, ox, oy)

    xu, yu = np.meshgrid(np.arange(nx + 1, dtype=float), np.arange(ny) + 0.5, indexing="ij")
    xv, yv = np.meshgrid(np.arange(nx) + 0.5, np.arange(ny + 1, dtype=float), indexing="ij")
    u_new = backtrace(xu, yu, u, 0.0, 0.5) + dt * state.gravity[0]
    v_new = backtrace(xv, yv, v, 0.5, 0.0) + dt * state.gravity[1]
    return vel.copy(u=u_new, v=v_new)


def default_pressure_solver(A: SparseMatrix, b: np.ndarray, nullspace=None):
    """IC(0)-PCG to a 1e-12 residual reduction, tight enough for the
    post-projection divergence bound."""
    P = ic0_factorize(A)
    cfg = SolveConfig(tol_reduction=1e-12, max_iters=20 * A.shape[0] + 100)
    return pcg_solve(A, b, P, cfg, nullspace=nullspace)


def project(state: FluidState, ustar: MacVelocity, solver=default_pressure_solver):
    """Pressure projection of ``ustar`` on the current geometry.

    Returns ``(u_new, A_reduced, b_reduced, image, pressure)`` where the
    pressure is the full-grid field (zero outside fluid). Faces that touch
    no fluid cell are zeroed; fluid-solid faces carry the boundary velocity.
    """
    I = state.image
    labels = I.labels()
    b_full = mac_divergence_rhs(ustar, I, state.neumann_values)
    A_full = assemble_poisson(I)
    A_red, b_red, rmap = reduce(A_full, b_full, I)
    comps = floating_components(I, rmap)
    nullspace = comps if np.any(comps >= 0) else None
    x, report = solver(A_red, b_red, nullspace)
    if not report.converged:
        raise ConvergenceError(
            f"pressure solve stalled after {report.iterations} iterations "
            f"(residual {report.final_residual:.3e} from {report.residual_history[0]:.3e})",
            report)
    p = np.zeros(rmap.n_c)
    p[rmap.fluid_indices] = x
    p = p.reshape(I.dims)

    scale = ustar.dt / (ustar.rho * ustar.h)
    out = apply_neumann(ustar, I, state.neumann_values)
    (ulo, uhi), (vlo, vhi) = face_sides(labels)
    ppad = np.pad(p, 1)
    p_ulo, p_uhi = ppad[:-1, 1:-1], ppad[1:, 1:-1]
    p_vlo, p_vhi = ppad[1:-1, :-1], ppad[1:-1, 1:]
    wet = (FLUID, AIR)
    u_open = np.isin(ulo, wet) & np.isin(uhi, wet) & ((ulo == FLUID) | (uhi == FLUID))
    v_open = np.isin(vlo, wet) & np.isin(vhi, wet) & ((vlo == FLUID) | (vhi == FLUID))
    out.u[u_open] -= scale * (p_uhi - p_ulo)[u_open]
    out.v[v_open] -= scale * (p_vhi - p_vlo)[v_open]
    u_dry = (ulo != FLUID) & (uhi != FLUID)
    v_dry = (vlo != FLUID) & (vhi != FLUID)
    out.u[u_dry] = 0.0
    out.v[v_dry] = 0.0
    return out, A_red, b_red, I, p


@dataclass
class Frame:
    step: int
    t: float
    image: IndicatorImage
    A: SparseMatrix
    b: np.ndarray
    max_divergence: float = 0.0
    ustar_inf: float = 0.0

    @property
    def n_f(self) -> int:
        return self.A.shape[0]


def swirl_velocity(dims, seed: int, amplitude: float = 1.0, n_vortices: int = 4,
                   h: float = 1.0, dt: float = DEFAULT_DT) -> MacVelocity:
    """Discretely divergence-free field from a random sum of Gaussian vortices
    (stream function sampled at grid nodes)."""
    rng = np.random.default_rng(seed)
    nx, ny = dims
    X, Y = np.meshgrid(np.arange(nx + 1, dtype=float), np.arange(ny + 1, dtype=float), indexing="ij")
    psi = np.zeros_like(X)
    for _ in range(n_vortices):
        cx, cy = rng.uniform(0, nx), rng.uniform(0, ny)
        w = rng.uniform(0.1, 0.25) * min(nx, ny)
        psi += rng.choice([-1.0, 1.0]) * w * np.exp(-((X - cx) ** 2 + (Y - cy) ** 2) / (2 * w * w))
    u = psi[:, 1:] - psi[:, :-1]
    v = -(psi[1:, :] - psi[:-1, :])
    return MacVelocity(amplitude * u, amplitude * v, h=h, dt=dt)


def run_scene(spec: SceneSpec, n_steps: int, capture_every: int = 1, dt: float = DEFAULT_DT,
              gravity=(0.0, -9.8), swirl: float = 0.0, h: float = 1.0,
              solver=default_pressure_solver) -> list[Frame]:
    """Step the scene and capture the reduced system every ``capture_every`` steps.

    The initial velocity is zero plus an optional divergence-free swirl
    seeded from ``spec.seed``.
    """
    if n_steps <= 0:
        return []
    if swirl:
        vel = swirl_velocity(spec.dims, spec.seed, swirl, h=h, dt=dt)
    else:
        vel = MacVelocity.zeros(spec.dims, h=h, dt=dt)
    state = FluidState(vel, spec, 0.0, tuple(gravity))
    frames = []
    for step in range(n_steps):
        ustar = advect(state)
        new, A, b, I, _ = project(state, ustar)
        if step % capture_every == 0:
            div = np.abs(fluid_divergence(new, I)).max(initial=0.0)
            frames.append(Frame(step, state.t, I, A, b, float(div), ustar.max_abs()))
        state = FluidState(new, spec, state.t + dt, state.gravity, state.neumann_values)
    return frames


def write_scene_dir(path, frames: list[Frame], spec: SceneSpec | None = None, extra=None):
    """frame_XXXX.scn / .mtx (reduced triplets) / .rhs (f64 LE) plus manifest.json."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    items = []
    for f in frames:
        stem = f"frame_{f.step:04d}"
        write_scn(path / f"{stem}.scn", f.image)
        write_triplets(path / f"{stem}.mtx", f.A)
        np.ascontiguousarray(f.b, dtype="<f8").tofile(path / f"{stem}.rhs")
        items.append({"step": f.step, "t": f.t, "n_f": f.n_f, "scene": f"{stem}.scn",
                      "matrix": f"{stem}.mtx", "rhs": f"{stem}.rhs",
                      "max_divergence": f.max_divergence, "ustar_inf": f.ustar_inf})
    manifest = {"spec": spec.to_dict() if spec else None, "frames": items}
    if extra:
        manifest.update(extra)
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2))


def read_scene_dir(path) -> list[Frame]:
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    frames = []
    for item in manifest["frames"]:
        I = read_scn(path / item["scene"])
        A = read_triplets(path / item["matrix"])
        b = np.fromfile(path / item["rhs"], dtype="<f8")
        frames.append(Frame(item["step"], item["t"], I, A, b, item.get("max_divergence", 0.0),
                            item.get("ustar_inf", 0.0)))
    return frames


# --------------------------------------------------------------------------
# preset scenes (grid units, n x n domain)


def preset_scenes(n: int = 64) -> dict[str, SceneSpec]:
    """Named scenes with scripted air regions. Every fluid region touches air."""
    s = n / 64.0
    dims = (n, n)
    scenes = {
        "tank": [half_space(1, 48 * s, "air", below=False),
                 box((20 * s, 12 * s), (34 * s, 20 * s), "solid"),
                 disc((44 * s, 14 * s), 6 * s, "air", velocity=(0.0, 10 * s))],
        "drain": [half_space(1, 54 * s, "air", below=False),
                  disc((32 * s, 30 * s), 16 * s, "air", growth=-6 * s),
                  disc((14 * s, 10 * s), 5 * s, "solid")],
        "slosh": [half_space(1, 40 * s, "air", below=False),
                  box((-8 * s, 30 * s), (16 * s, 52 * s), "air", velocity=(14 * s, 0.0)),
                  box((40 * s, 0.0), (48 * s, 18 * s), "solid")],
        "bubbles": [half_space(1, 56 * s, "air", below=False),
                    disc((16 * s, 12 * s), 5 * s, "air", velocity=(0.0, 16 * s)),
                    disc((44 * s, 20 * s), 7 * s, "air", velocity=(0.0, 12 * s)),
                    box((26 * s, 26 * s), (38 * s, 32 * s), "solid")],
        "pillars": [half_space(1, 44 * s, "air", below=False),
                    box((12 * s, 6 * s), (18 * s, 30 * s), "solid"),
                    box((44 * s, 6 * s), (50 * s, 30 * s), "solid"),
                    disc((32 * s, 36 * s), 10 * s, "air", growth=8 * s)],
        "cavern": [half_space(1, 50 * s, "air", below=False),
                   disc((32 * s, 20 * s), 10 * s, "solid"),
                   box((4 * s, 36 * s), (20 * s, 44 * s), "air", velocity=(20 * s, 0.0)),
                   disc((52 * s, 8 * s), 4 * s, "air", growth=4 * s)],
    }
    return {name: SceneSpec(dims, tuple(prims), seed=i, name=name)
            for i, (name, prims) in enumerate(scenes.items())}
