"""Run a preset smoke scene and report the pressure projection quality per
captured frame. Writes the frames to a scene directory when a path is given.

    python3 demos/smoke_projection.py [scene] [out_dir]
"""
import sys

from npsdo.fluid import preset_scenes, run_scene, write_scene_dir

name = sys.argv[1] if len(sys.argv) > 1 else "tank"
spec = preset_scenes(64)[name]
frames = run_scene(spec, 100, capture_every=10, swirl=2.0)
for f in frames:
    print(f"step {f.step:4d}  t={f.t:5.2f}  n_f={f.n_f:5d}  "
          f"max|div| / |u*|_inf = {f.max_divergence / f.ustar_inf:.1e}")
labels = frames[-1].image.labels()
for j in range(labels.shape[1] - 1, -1, -4):
    print("".join(".~#"[v] for v in labels[::2, j]))
if len(sys.argv) > 2:
    write_scene_dir(sys.argv[2], frames, spec)
    print("wrote", sys.argv[2])
