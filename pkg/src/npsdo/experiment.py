"""Desk-scale reproduction of the solver-variant comparison.

Three preset scenes provide the training matrices (five captured frames
each, the last one held out for validation); three different scenes provide
the test systems. Defaults are sized for a desk run on 64x64 grids.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .bench import BenchReport, run_bench, systems_from_frames, write_report
from .fluid import preset_scenes, run_scene, write_scene_dir
from .network import save_npm
from .solvers import SolveConfig
from .training import TrainConfig, build_dataset, save_dataset, train, write_training_log

TABLE_METHODS = ["cg", "pcg:neural", "fpcg:neural", "psd:neural", "psdo:neural", "pcg:ic0"]


@dataclass
class DeskScaleConfig:
    n: int = 64
    train_scenes: tuple = ("tank", "drain", "slosh")
    test_scenes: tuple = ("bubbles", "pillars", "cavern")
    train_frames: int = 5
    test_frames: int = 8
    capture_every: int = 10
    swirl: float = 2.0
    train: TrainConfig = field(default_factory=lambda: TrainConfig(depth=4))
    solve: SolveConfig = field(default_factory=lambda: SolveConfig(max_iters=2000))
    methods: tuple = tuple(TABLE_METHODS)

    def notes(self) -> list[str]:
        return [
            f"desk scale: {self.n}x{self.n} grids, {len(self.train_scenes)} training scenes x "
            f"{self.train_frames} frames (last frame of each held out for validation)",
            f"rhs per matrix: {self.train.n_rhs} combinations of {self.train.n_ritz} Ritz vectors "
            "(scaled down for 64x64 grids)",
            "free surfaces replaced by scripted air regions",
        ]


def capture(cfg: DeskScaleConfig, names, n_frames):
    scenes = preset_scenes(cfg.n)
    out = {}
    for name in names:
        steps = n_frames * cfg.capture_every
        out[name] = run_scene(scenes[name], steps, cfg.capture_every, swirl=cfg.swirl)
    return out


def train_model(cfg: DeskScaleConfig, out_dir=None, progress=None):
    """Simulate the training scenes, build the Ritz dataset and train."""
    frames = capture(cfg, cfg.train_scenes, cfg.train_frames)
    items = [(name, f.step, f.image, f.A) for name, fs in frames.items() for f in fs]
    ds = build_dataset(items, cfg.train.n_ritz, cfg.train.n_rhs, seed=cfg.train.seed)
    params, log = train(cfg.train, ds, progress=progress)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_dataset(out / "dataset", ds)
        save_npm(out / "model.npm", params)
        write_training_log(out / "train_log.csv", log, cfg.train, cfg.notes())
    return params, log, ds


def held_out_systems(cfg: DeskScaleConfig, out_dir=None):
    frames = capture(cfg, cfg.test_scenes, cfg.test_frames)
    systems = []
    scenes = preset_scenes(cfg.n)
    for name, fs in frames.items():
        systems += systems_from_frames(fs, name)
        if out_dir is not None:
            write_scene_dir(Path(out_dir) / name, fs, scenes[name])
    return systems


def bench_model(cfg: DeskScaleConfig, params, systems, out_dir=None) -> BenchReport:
    report = run_bench(systems, list(cfg.methods), cfg.solve, params)
    if out_dir is not None:
        write_report(report, out_dir)
    return report


def table_ordering(report: BenchReport) -> dict:
    """Mean iterations and the orderings expected between the solver variants."""
    it = report.mean_iterations()
    cg, pcg, fpcg = it["cg"], it["pcg:neural"], it["fpcg:neural"]
    psd, psdo = it["psd:neural"], it["psdo:neural"]
    return {
        "mean_iterations": it,
        "psdo<fpcg<=pcg": psdo < fpcg <= pcg,
        "psdo<psd<cg": psdo < psd < cg,
        "psdo<=cg/3": psdo <= cg / 3.0,
    }
