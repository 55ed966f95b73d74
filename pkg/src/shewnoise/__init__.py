"""Exact weak-noise minimizer of the stochastic heat equation with a delta
initial condition and a one-point terminal condition.

The package evaluates the optimal forcing w(t,x), the driven field q(t,x),
the adjoint field p(t,x), and the minimal action through closed-form
scattering data and Fredholm resolvents, and cross-checks everything with
independent PDE and ODE oracles.
"""

__version__ = "0.1.0"

from .rate import (  # noqa: F401
    Branch,
    Problem,
    ScaledProblem,
    SolutionSpec,
    classify,
    psi,
    psi_prime,
    rate_value,
    solve_gamma,
    solve_gamma_scaled,
    threshold_c_star,
    threshold_c_star1,
)
