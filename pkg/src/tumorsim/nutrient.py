"""Quasi-static nutrient solve.

For fixed (P, phi) the balance -lap(n) + n*P = T_c(n, phi) is linear in n:
with kappa(phi) = nu1*(1 - Q) + nu2*Q it reads

    -lap(n) + (P + kappa)*n = kappa*n_c,   n = 1 on the boundary.

The unit Dirichlet datum is handled by solving for m = n - 1, which turns
the boundary condition homogeneous and the problem into the standard
Helmholtz form with nonnegative zeroth-order coefficient.  The discrete
operator is an M-matrix, so the solution inherits 0 <= n <= 1 up to solver
tolerance.
"""

from __future__ import annotations

import numpy as np

from . import physics
from .elliptic import EllipticProblem, NoConvergence, SolveReport, solve
from .fields import BoundaryCondition, ScalarField


def solve_nutrient(p: ScalarField, phi: ScalarField, params: physics.ModelParams,
                   tol: float = 1e-10,
                   n_guess: ScalarField | None = None) -> tuple[ScalarField, SolveReport]:
    """Solve the nutrient balance for the current (P, phi).

    n_guess warm-starts the iteration (typically the previous step's n).
    """
    if p.min() < 0:
        raise ValueError("nutrient solve requires P >= 0")
    grid = p.grid
    kappa = physics.transfer_coefficient(phi.data, params)
    coeff0 = ScalarField(grid, p.data + kappa)
    rhs = ScalarField(grid, kappa * (params.n_c - 1.0) - p.data)

    cg_tol = tol / np.sqrt(grid.nx * grid.ny)
    m, report = solve(EllipticProblem(coeff0, rhs, BoundaryCondition.DIRICHLET_ZERO),
                      tol=cg_tol,
                      x0=None if n_guess is None else n_guess.data - 1.0)
    if not report.converged:
        raise NoConvergence(
            f"nutrient solve stalled at residual {report.residual_norm:.3e}")
    return ScalarField(grid, m.data + 1.0), report
