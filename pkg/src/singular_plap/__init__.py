"""Solvers and experiments for the singular p-Laplacian parabolic problem

    u_t - Δ_p u = u^{-δ} + f(u)  in Ω,   u = 0 on ∂Ω,

on 1D intervals and 2D rectangles.
"""

from .barriers import (
    BarrierPair,
    BarrierSearchError,
    ConeProfile,
    build_barriers,
    build_eps_barriers,
    cone_fit,
    cone_profile,
    solve_eps_prime,
)
from .domain import (
    Grid,
    GridFunction,
    build_grid,
    integrate,
    norm_Linf,
    norm_Lq,
    read_csv,
    seminorm_W1p,
    write_csv,
)
from .elliptic import (
    SolveReport,
    SolverError,
    check_weak_comparison,
    solve_homogeneous_U,
    solve_regularized,
    solve_singular,
    solve_stationary_Q,
)
from .experiments import ExperimentConfig, RunReport, run
from .params import ProblemParams, ReactionSpec
from .plap import (
    EigenPair,
    EigenSolverError,
    apply_p_laplacian,
    dirichlet_energy,
    first_eigenpair,
    monotonicity_gap,
    sharp_constant,
)
from .rothe import (
    EnergyLedger,
    EnergyRecord,
    RotheTrajectory,
    evolve_Pt,
    evolve_St,
    forcing_average,
    linf_stability_check,
    rothe_step,
)

__all__ = [name for name in dir() if not name.startswith("_")]
