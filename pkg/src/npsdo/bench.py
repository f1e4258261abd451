"""Benchmark harness: run solver/preconditioner pairs over a set of systems.

Every method in a run shares the stopping rule and the zero initial guess.
Wall-clock is split into setup (preconditioner construction) and iterate
phases. A failing solve becomes a row with ``converged = False`` and an
error message instead of aborting the run.
"""
from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .discretization import ReductionMap, floating_components
from .errors import BreakdownError, NotSPDError
from .fluid import Frame, read_scene_dir
from .linalg import SparseMatrix
from .network import NetParams, NeuralPreconditioner
from .preconditioners import IdentityPreconditioner, ic0_factorize, jacobi_precond
from .scene import IndicatorImage
from .solvers import SolveConfig, solve, write_history_csv

ALIASES = {
    "cg": ("cg", "none"),
    "ic0": ("pcg", "ic0"),
    "jacobi": ("pcg", "jacobi"),
    "psd": ("psd", "neural"),
    "psdo": ("psdo", "neural"),
    "psdo-neural": ("psdo", "neural"),
    "npsdo": ("psdo", "neural"),
}
NOT_REPRODUCED = ("amg", "cholmod", "amgcl")


@dataclass
class System:
    system_id: str
    image: IndicatorImage
    A: SparseMatrix
    b: np.ndarray

    @property
    def n_f(self) -> int:
        return self.A.shape[0]


def systems_from_frames(frames: list[Frame], prefix: str) -> list[System]:
    return [System(f"{prefix}/{f.step:04d}", f.image, f.A, f.b) for f in frames]


def load_systems(dirs) -> list[System]:
    out = []
    for d in dirs:
        out += systems_from_frames(read_scene_dir(d), Path(d).name)
    return out


def parse_method(name: str) -> tuple[str, str]:
    """'cg', 'ic0', 'psdo-neural' or an explicit 'solver:precond' pair."""
    key = name.strip().lower()
    if key in ALIASES:
        return ALIASES[key]
    if ":" in key:
        solver, precond = key.split(":", 1)
        return solver, precond
    return key, "none"


def method_label(solver: str, precond: str) -> str:
    return solver if precond == "none" else f"{solver}:{precond}"


def build_preconditioner(kind: str, system: System, params: NetParams | None = None):
    if kind == "none":
        return IdentityPreconditioner()
    if kind == "jacobi":
        return jacobi_precond(system.A)
    if kind == "ic0":
        return ic0_factorize(system.A)
    if kind == "neural":
        if params is None:
            raise ValueError("neural preconditioner needs a model")
        return NeuralPreconditioner(params, system.image)
    if kind in NOT_REPRODUCED:
        raise NotImplementedError(f"{kind}: external baseline, not reproduced")
    raise ValueError(f"unknown preconditioner {kind!r}")


@dataclass
class BenchRow:
    system: str
    method: str
    solver: str
    precond: str
    n_f: int
    iterations: int = 0
    converged: bool = False
    setup_seconds: float = 0.0
    iterate_seconds: float = 0.0
    precond_seconds: float = 0.0
    final_residual: float = float("nan")
    initial_residual: float = float("nan")
    speedup: float | None = None
    error: str = ""
    history: list = field(default_factory=list, repr=False)
    elapsed: list = field(default_factory=list, repr=False)

    @property
    def wall_seconds(self) -> float:
        return self.setup_seconds + self.iterate_seconds


def run_one(system: System, solver: str, precond: str, cfg: SolveConfig,
            params: NetParams | None = None) -> BenchRow:
    row = BenchRow(system.system_id, method_label(solver, precond), solver, precond, system.n_f)
    comps = floating_components(system.image)
    nullspace = comps if np.any(comps >= 0) else None
    t0 = time.perf_counter()
    try:
        P = build_preconditioner(precond, system, params)
    except (NotSPDError, ValueError, NotImplementedError) as exc:
        row.error = f"setup failed: {exc}"
        return row
    row.setup_seconds = time.perf_counter() - t0
    report = None
    try:
        _, report = solve(solver, system.A, system.b, P, cfg, None, nullspace, row.setup_seconds)
    except BreakdownError as exc:
        report = exc.report
        row.error = str(exc)
    except (ValueError, FloatingPointError) as exc:
        row.error = str(exc)
    if report is not None:
        row.iterations = report.iterations
        row.converged = report.converged and not row.error
        row.iterate_seconds = report.iterate_seconds
        row.precond_seconds = report.precond_seconds
        row.history = list(report.residual_history)
        row.elapsed = list(report.elapsed)
        if row.history:
            row.initial_residual = row.history[0]
            row.final_residual = row.history[-1]
    return row


@dataclass
class BenchReport:
    rows: list
    methods: list
    config: dict = field(default_factory=dict)

    def by_method(self, label: str) -> list[BenchRow]:
        return [r for r in self.rows if r.method == label]

    def mean_iterations(self) -> dict[str, float]:
        return {m: float(np.mean([r.iterations for r in self.by_method(m)])) for m in self.methods}

    def iteration_table(self) -> list[tuple]:
        """(system, method, iterations) in row order: the reproducibility contract."""
        return [(r.system, r.method, r.iterations) for r in self.rows]

    def speedups(self, label: str) -> np.ndarray:
        return np.array([r.speedup for r in self.by_method(label) if r.speedup is not None])

    def speedup_histogram(self, bins=None) -> dict:
        bins = np.asarray(bins if bins is not None else [0, 0.5, 1, 2, 4, 8, 16, 32, 64, np.inf])
        out = {"bins": [float(b) for b in bins]}
        for m in self.methods:
            s = self.speedups(m)
            out[m] = np.histogram(s, bins=bins)[0].tolist() if s.size else [0] * (len(bins) - 1)
        return out

    def write_csv(self, path):
        cols = ["system", "method", "solver", "precond", "n_f", "iterations", "converged",
                "setup_seconds", "iterate_seconds", "precond_seconds", "wall_seconds",
                "initial_residual", "final_residual", "speedup", "error"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in self.rows:
                vals = {**asdict(r), "wall_seconds": r.wall_seconds}
                w.writerow(["" if vals[c] is None else vals[c] for c in cols])

    def write_traces(self, directory):
        """One iter/residual_norm/cumulative_seconds CSV per (system, method)."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for r in self.rows:
            name = f"{r.system.replace('/', '_')}__{r.method.replace(':', '-')}.csv"
            with open(directory / name, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["iter", "residual_norm", "cumulative_seconds"])
                for k, (res, t) in enumerate(zip(r.history, r.elapsed)):
                    w.writerow([k, repr(res), repr(t)])

    def to_json(self) -> dict:
        return {"methods": self.methods, "config": self.config,
                "rows": [asdict(r) for r in self.rows]}

    @classmethod
    def from_json(cls, d: dict) -> "BenchReport":
        return cls([BenchRow(**r) for r in d["rows"]], d["methods"], d.get("config", {}))


def _assign_speedups(rows: list[BenchRow]):
    cg_time = {r.system: r.wall_seconds for r in rows if r.method == "cg" and r.converged}
    for r in rows:
        base = cg_time.get(r.system)
        if r.converged and base is not None and r.wall_seconds > 0:
            r.speedup = 1.0 if r.method == "cg" else base / r.wall_seconds


def run_bench(systems: list[System], methods, cfg: SolveConfig | None = None,
              params: NetParams | None = None, threads: int = 1) -> BenchReport:
    """Run every method on every system. Rows are ordered system-major."""
    cfg = cfg or SolveConfig()
    pairs = [parse_method(m) for m in methods]
    labels = [method_label(s, p) for s, p in pairs]

    def work(system):
        return [run_one(system, s, p, cfg, params) for s, p in pairs]

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            chunks = list(pool.map(work, systems))
    else:
        chunks = [work(s) for s in systems]
    rows = [r for chunk in chunks for r in chunk]
    _assign_speedups(rows)
    return BenchReport(rows, labels, {"tol_reduction": cfg.tol_reduction,
                                      "max_iters": cfg.max_iters, "n_ortho": cfg.n_ortho})


def write_report(report: BenchReport, out_dir):
    """bench.csv, bench.json, summary.csv, speedup_histogram.csv and traces/."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "bench.csv")
    (out / "bench.json").write_text(json.dumps(report.to_json()))
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "mean_iterations", "mean_wall_seconds", "converged_fraction",
                    "median_speedup"])
        for m in report.methods:
            rows = report.by_method(m)
            s = report.speedups(m)
            w.writerow([m, np.mean([r.iterations for r in rows]),
                        np.mean([r.wall_seconds for r in rows]),
                        np.mean([r.converged for r in rows]),
                        float(np.median(s)) if s.size else ""])
        for name in NOT_REPRODUCED[:2]:
            w.writerow([name, "external, not reproduced", "", "", ""])
    hist = report.speedup_histogram()
    with open(out / "speedup_histogram.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_lo", "bin_hi"] + report.methods)
        for k in range(len(hist["bins"]) - 1):
            w.writerow([hist["bins"][k], hist["bins"][k + 1]] + [hist[m][k] for m in report.methods])
    report.write_traces(out / "traces")
