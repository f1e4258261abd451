"""Neural-preconditioned steepest descent with orthogonalization (NPSDO) for
mixed Dirichlet/Neumann Poisson problems on structured grids."""

from .linalg import SparseMatrix, axpy, dense_cholesky, dot, lanczos_ritz, norm2, spmv
from .scene import IndicatorImage, SceneSpec, cell_type, pad_image, rasterize
from .discretization import (MacVelocity, ReductionMap, assemble_poisson, mac_divergence_rhs,
                             pad_vector, reduce, restrict_vector)
from .preconditioners import ic0_factorize, identity_precond, jacobi_precond
from .solvers import (SolveConfig, SolveReport, cg_solve, flexible_pcg_solve, pcg_solve,
                      psd_solve, psdo_solve, solve)
from .network import NetParams, forward, init_params, load_npm, neural_precond, save_npm

__version__ = "0.1.0"
