"""Extreme Ritz values of a Poisson matrix against a dense eigensolver, and
the Ritz-combination right-hand sides used for training.

    python3 demos/lanczos_spectrum.py
"""
import numpy as np

from npsdo import IndicatorImage, lanczos_ritz
from npsdo.discretization import reduced_system
from npsdo.training import generate_rhs

n = 32
labels = np.zeros((n, n), dtype=np.int8)
labels[:, -1] = 1                                   # air along the top row
A, _, _ = reduced_system(IndicatorImage.from_labels(labels))
ev = np.linalg.eigvalsh(A.to_dense())
print(f"{n}x{n} box, n_f={A.shape[0]}, lambda_min={ev[0]:.6e}, lambda_max={ev[-1]:.6e}")

for k in (32, 64, 128, 192):
    pairs = lanczos_ritz(A, k, seed=0)
    print(f"k={k:4d}  rel err min {abs(pairs[0].value - ev[0]) / ev[0]:.1e}  "
          f"max {abs(pairs[-1].value - ev[-1]) / ev[-1]:.1e}")

X = generate_rhs(A, 64, 8, seed=1)
print("rhs norms:", np.round(np.linalg.norm(X, axis=1), 12))
