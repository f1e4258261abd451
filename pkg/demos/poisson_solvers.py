"""Assemble a mixed-BC pressure system from a random scene and compare the
Krylov solvers with classical preconditioners.

    python3 demos/poisson_solvers.py [n] [seed]
"""
import sys

import numpy as np

from npsdo import SolveConfig, ic0_factorize, identity_precond, jacobi_precond, rasterize, solve
from npsdo.discretization import reduced_system
from npsdo.scene import random_scene

n = int(sys.argv[1]) if len(sys.argv) > 1 else 64
seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0

I = rasterize(random_scene((n, n), seed))
A, _, rmap = reduced_system(I)
b = np.random.default_rng(seed).standard_normal(A.shape[0])
print(f"{n}x{n} scene: fluid={I.count(0)} air={I.count(1)} solid={I.count(2)}, nnz(A)={A.nnz}")

cfg = SolveConfig(tol_reduction=1e-6, max_iters=5000)
runs = [("cg", None), ("pcg", jacobi_precond(A)), ("pcg", ic0_factorize(A)),
        ("psd", identity_precond()), ("psdo", identity_precond())]
for method, P in runs:
    x, rep = solve(method, A, b, P, cfg)
    label = f"{method}:{type(P).__name__.replace('Preconditioner', '').lower() or 'none'}" \
        if P is not None else method
    err = np.linalg.norm(b - A @ x) / np.linalg.norm(b)
    print(f"{label:16s} {rep.iterations:5d} iterations  rel residual {err:.2e}  "
          f"{rep.total_seconds * 1e3:7.1f} ms")
