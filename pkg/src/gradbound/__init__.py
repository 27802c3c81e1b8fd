"""Explicit gradient-bound constants, rearrangements and a regularized p-Laplacian solver."""

from .constants import (
    BoundReport,
    C_p,
    GeometryConstants,
    K_p,
    S1,
    S2,
    S3,
    lambda_general,
    theorem_factor,
    xi_p,
)
from .harness import SweepConfig, check_bound_shape, check_lemma_square, run_sweep
from .rearrange import SampledFunction, decreasing_rearrangement, lorentz_norm, lq_norm
from .solver import GridProblem, SolveResult, make_problem, solve
from .structural import (
    B_eps,
    F_eps,
    GrowthBounds,
    StructuralParams,
    a_eps,
    b_eps,
    b_eps_inv,
    psi_eps,
)

__version__ = "0.1.0"

__all__ = [
    "BoundReport", "C_p", "GeometryConstants", "K_p", "S1", "S2", "S3", "lambda_general",
    "theorem_factor", "xi_p", "SweepConfig", "check_bound_shape", "check_lemma_square",
    "run_sweep", "SampledFunction", "decreasing_rearrangement", "lorentz_norm", "lq_norm",
    "GridProblem", "SolveResult", "make_problem", "solve", "B_eps", "F_eps", "GrowthBounds",
    "StructuralParams", "a_eps", "b_eps", "b_eps_inv", "psi_eps",
]
