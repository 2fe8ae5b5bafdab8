"""Alternating optimization with successive convex approximation."""

from .interior_point import InnerResult, solve_convex_subproblem, strictly_feasible_start
from .solvers import (
    AoTrace,
    ScaOptions,
    ScaTrace,
    ao_exhaustive,
    ao_optimize,
    random_init,
    run_sca,
    sca_amplitude,
    sca_phase,
    sca_precoder,
)
from .subproblem import (
    ScaSubproblem,
    build_amplitude_subproblem,
    build_phase_subproblem,
    build_precoder_subproblem,
    g_hat,
    g_true,
    taylor_surrogate,
)
