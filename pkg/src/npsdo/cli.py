"""Command-line front end.

    npsdo rasterize --scene tank --out-dir out/scene
    npsdo simulate  --scene tank --frames 10 --out-dir out/tank
    npsdo gendata   --frames out/tank --out-dir out/data
    npsdo train     --data out/data --out-dir out/model
    npsdo solve     --frames out/tank --solver psdo --precond neural --model out/model/model.npm
    npsdo bench     --frames out/tank --methods cg,ic0,psd,psdo-neural --model ... --out-dir out/bench
    npsdo report    --bench out/bench --out-dir out/report

Exit codes: 0 success, 2 solver non-convergence, 3 I/O or format error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import bench as bench_mod
from .errors import FormatError
from .fluid import preset_scenes, read_scene_dir, run_scene, write_scene_dir
from .network import load_npm, save_npm
from .scene import SceneSpec, rasterize, write_scn
from .solvers import SolveConfig
from .training import TrainConfig, build_dataset, load_dataset, save_dataset, train, \
    write_training_log

EXIT_OK, EXIT_NOT_CONVERGED, EXIT_IO = 0, 2, 3


class CliIOError(Exception):
    pass


def _scene(arg: str, n: int) -> SceneSpec:
    presets = preset_scenes(n)
    if arg in presets:
        return presets[arg]
    path = Path(arg)
    if not path.exists():
        raise CliIOError(f"scene {arg!r} is neither a preset ({', '.join(presets)}) nor a file")
    try:
        return SceneSpec.load_json(path)
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed scene file ({exc})") from exc


def _solve_cfg(args) -> SolveConfig:
    return SolveConfig(tol_reduction=1.0 / args.tol_reduction, max_iters=args.max_iters,
                       n_ortho=args.n_ortho)


def _model(args):
    return load_npm(args.model) if args.model else None


def cmd_rasterize(args) -> int:
    spec = _scene(args.scene, args.n)
    I = rasterize(spec, depth=args.depth, t=args.time)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_scn(out / "scene.scn", I)
    spec.save_json(out / "scene.json")
    print(f"wrote {out / 'scene.scn'}: fluid={I.count(0)} air={I.count(1)} solid={I.count(2)}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    spec = _scene(args.scene, args.n)
    if args.seed is not None:
        spec = SceneSpec(spec.dims, spec.primitives, args.seed, spec.name)
    frames = run_scene(spec, args.frames * args.capture_every, args.capture_every,
                       dt=args.dt, swirl=args.swirl)
    write_scene_dir(args.out_dir, frames, spec)
    print(f"wrote {len(frames)} frames to {args.out_dir}")
    return EXIT_OK


def cmd_gendata(args) -> int:
    items = []
    for d in args.frames:
        for f in read_scene_dir(d):
            items.append((Path(d).name, f.step, f.image, f.A))
    ds = build_dataset(items, args.n_ritz, args.n_rhs, seed=args.seed, mode=args.mode)
    save_dataset(args.out_dir, ds)
    print(f"wrote {len(ds)} matrices x {args.n_rhs} rhs to {args.out_dir}")
    return EXIT_OK


def cmd_train(args) -> int:
    ds = load_dataset(args.data)
    cfg = TrainConfig(n_ritz=ds.manifest.get("n_ritz", 128), n_rhs=ds.manifest.get("n_rhs", 64),
                      batch_size=args.batch_size, repeats_per_matrix=args.repeats,
                      max_epochs=args.epochs, depth=args.depth, lr=args.lr, seed=args.seed)
    params, log = train(cfg, ds, progress=lambda r: print(
        f"epoch {r['epoch']:3d}  train {r['mean_train_loss']:.5f}"
        + ("" if r["val_loss"] is None else f"  val {r['val_loss']:.5f}"), flush=True))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_npm(out / "model.npm", params)
    write_training_log(out / "train_log.csv", log, cfg)
    print(f"wrote {out / 'model.npm'}")
    return EXIT_OK


def cmd_solve(args) -> int:
    systems = bench_mod.load_systems(args.frames)
    if not systems:
        raise CliIOError("no systems found")
    system = systems[args.index]
    row = bench_mod.run_one(system, args.solver, args.precond, _solve_cfg(args), _model(args))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = bench_mod.BenchReport([row], [row.method])
    report.write_traces(out)
    with open(out / "history.csv", "w") as fh:
        fh.write("iter,residual_norm,cumulative_seconds\n")
        for k, (res, t) in enumerate(zip(row.history, row.elapsed)):
            fh.write(f"{k},{res!r},{t!r}\n")
    print(f"{system.system_id} {row.method}: {row.iterations} iterations, "
          f"converged={row.converged} {row.error}")
    return EXIT_OK if row.converged else EXIT_NOT_CONVERGED


def cmd_bench(args) -> int:
    systems = bench_mod.load_systems(args.frames)
    methods = [m for m in args.methods.split(",") if m]
    report = bench_mod.run_bench(systems, methods, _solve_cfg(args), _model(args), args.threads)
    bench_mod.write_report(report, args.out_dir)
    for m, it in report.mean_iterations().items():
        print(f"{m:14s} mean iterations {it:9.2f}")
    return EXIT_OK


def cmd_report(args) -> int:
    src = Path(args.bench) / "bench.json"
    report = bench_mod.BenchReport.from_json(json.loads(src.read_text()))
    bench_mod.write_report(report, args.out_dir or args.bench)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="npsdo", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    def solver_flags(sp):
        sp.add_argument("--tol-reduction", type=float, default=1e6,
                        help="stop when the residual norm has dropped by this factor")
        sp.add_argument("--max-iters", type=int, default=2000)
        sp.add_argument("--n-ortho", type=int, default=2)
        sp.add_argument("--model", default=None, help=".npm model file")
        sp.add_argument("--threads", type=int, default=1)

    sp = sub.add_parser("rasterize")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--n", type=int, default=64)
    sp.add_argument("--time", type=float, default=0.0)
    sp.add_argument("--depth", type=int, default=None)
    sp.add_argument("--out-dir", required=True)
    sp.set_defaults(fn=cmd_rasterize)

    sp = sub.add_parser("simulate")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--n", type=int, default=64)
    sp.add_argument("--frames", type=int, default=10, help="number of captured frames")
    sp.add_argument("--capture-every", type=int, default=10)
    sp.add_argument("--dt", type=float, default=0.05)
    sp.add_argument("--swirl", type=float, default=2.0)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--out-dir", required=True)
    sp.set_defaults(fn=cmd_simulate)

    sp = sub.add_parser("gendata")
    sp.add_argument("--frames", nargs="+", required=True, help="scene directories")
    sp.add_argument("--n-ritz", type=int, default=128)
    sp.add_argument("--n-rhs", type=int, default=64)
    sp.add_argument("--mode", choices=["ritz", "random", "eigenmodes"], default="ritz")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out-dir", required=True)
    sp.set_defaults(fn=cmd_gendata)

    sp = sub.add_parser("train")
    sp.add_argument("--data", required=True)
    sp.add_argument("--epochs", type=int, default=50)
    sp.add_argument("--depth", type=int, default=4)
    sp.add_argument("--lr", type=float, default=1e-3)
    sp.add_argument("--batch-size", type=int, default=128)
    sp.add_argument("--repeats", type=int, default=5)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out-dir", required=True)
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("solve")
    sp.add_argument("--frames", nargs="+", required=True)
    sp.add_argument("--index", type=int, default=0, help="system index across the directories")
    sp.add_argument("--solver", choices=["cg", "pcg", "fpcg", "psd", "psdo"], default="psdo")
    sp.add_argument("--precond", choices=["none", "jacobi", "ic0", "neural"], default="none")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out-dir", required=True)
    solver_flags(sp)
    sp.set_defaults(fn=cmd_solve)

    sp = sub.add_parser("bench")
    sp.add_argument("--frames", nargs="+", required=True)
    sp.add_argument("--methods", default="cg,ic0,psd,psdo-neural",
                    help="comma list of aliases or solver:precond pairs")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out-dir", required=True)
    solver_flags(sp)
    sp.set_defaults(fn=cmd_bench)

    sp = sub.add_parser("report")
    sp.add_argument("--bench", required=True, help="directory holding bench.json")
    sp.add_argument("--out-dir", default=None)
    sp.set_defaults(fn=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (OSError, FormatError, CliIOError, json.JSONDecodeError) as exc:
        print(f"npsdo: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
