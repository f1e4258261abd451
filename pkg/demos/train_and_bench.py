"""Train a small network preconditioner on Ritz right-hand sides from two
scenes, then compare solver variants on frames of a third scene.

A scaled-down version of the desk-scale experiment; runs in about a minute.

    python3 demos/train_and_bench.py
"""
from npsdo.bench import run_bench, systems_from_frames
from npsdo.experiment import TABLE_METHODS
from npsdo.fluid import preset_scenes, run_scene
from npsdo.solvers import SolveConfig
from npsdo.training import TrainConfig, build_dataset, train

n = 32
scenes = preset_scenes(n)
items = []
for name in ("tank", "drain"):
    for f in run_scene(scenes[name], 40, capture_every=10, swirl=2.0):
        items.append((name, f.step, f.image, f.A))
ds = build_dataset(items, n_ritz=64, n_rhs=32, seed=0)

cfg = TrainConfig(n_ritz=64, n_rhs=32, batch_size=32, max_epochs=20, depth=3, seed=0)
params, log = train(cfg, ds, progress=lambda r: print(
    f"epoch {r['epoch']:3d}  train {r['mean_train_loss']:.4f}"
    + ("" if r["val_loss"] is None else f"  val {r['val_loss']:.4f}")))

test = systems_from_frames(run_scene(scenes["pillars"], 40, capture_every=10, swirl=2.0),
                           "pillars")
report = run_bench(test, TABLE_METHODS, SolveConfig(max_iters=2000), params)
for label, it in report.mean_iterations().items():
    print(f"{label:12s} mean iterations {it:8.1f}")
