"""Matrix-free CG for the elliptic subproblems.

Covers -lap(u) + c*u = f with c >= 0 and homogeneous boundary data:
Dirichlet-zero (pressure, shifted nutrient, implicit update blocks) and
pure Neumann with a zero-mean gauge (no-flux pressure in the
vanishing-interface experiments).  Inhomogeneous Dirichlet data is the
caller's job via a shift of the unknown.

The operator is applied through the fields stencils, so it is symmetric
positive (semi)definite by construction; conjugate gradients with Jacobi
preconditioning is enough at desk scale.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .fields import BoundaryCondition, ScalarField, laplacian

_HOMOGENEOUS = (
    BoundaryCondition.DIRICHLET_ZERO,
    BoundaryCondition.NEUMANN_ZERO,
    BoundaryCondition.NO_FLUX,
)


class NoConvergence(RuntimeError):
    """Raised by callers when a solve report comes back unconverged."""


class IncompatibleRHS(ValueError):
    """Singular Neumann problem whose right side has nonzero mean."""


class Gauge(enum.Enum):
    NONE = "none"
    ZERO_MEAN = "zero_mean"


@dataclass
class SolveReport:
    iterations: int
    residual_norm: float
    converged: bool


@dataclass
class EllipticProblem:
    """-lap(u) + coeff0*u = rhs with the given boundary tag for u."""

    coeff0: ScalarField
    rhs: ScalarField
    bc: BoundaryCondition
    gauge: Gauge = Gauge.NONE

    def check(self) -> None:
        if self.coeff0.min() < 0:
            raise ValueError("coeff0 must be nonnegative")
        if self.bc not in _HOMOGENEOUS:
            raise ValueError(
                "elliptic solves handle homogeneous boundary data only; "
                "shift the unknown for inhomogeneous Dirichlet values")
        singular = self.bc is BoundaryCondition.NO_FLUX and self.coeff0.max() == 0.0
        if singular and self.gauge is not Gauge.ZERO_MEAN:
            raise ValueError("singular Neumann problem requires the zero-mean gauge")
        if self.gauge is Gauge.ZERO_MEAN and not singular:
            raise ValueError("zero-mean gauge only applies to the singular Neumann case")


def operator_diagonal(grid, coeff0: np.ndarray, bc: BoundaryCondition) -> np.ndarray:
    """Diagonal of -lap + coeff0 under the ghost-cell closure (Jacobi weights)."""
    dx = np.full(grid.shape, 2.0 / grid.hx**2)
    dy = np.full(grid.shape, 2.0 / grid.hy**2)
    edge = 1.0 if bc is BoundaryCondition.DIRICHLET_ZERO else -1.0
    # Dirichlet ghost (-interior) stiffens the wall cell, mirror relaxes it
    dx[:, 0] += edge / grid.hx**2
    dx[:, -1] += edge / grid.hx**2
    dy[0, :] += edge / grid.hy**2
    dy[-1, :] += edge / grid.hy**2
    return dx + dy + coeff0


def apply_operator(x: np.ndarray, grid, coeff0: np.ndarray, bc: BoundaryCondition) -> np.ndarray:
    return -laplacian(ScalarField(grid, x), bc).data + coeff0 * x


def _make_apply(grid, coeff0: np.ndarray, bc: BoundaryCondition):
    """Raw-array version of apply_operator with preallocated face buffers.

    Performs the identical two-stage gradient/divergence arithmetic as the
    fields operators (same rounding), just without wrapper construction.
    """
    hx, hy = grid.hx, grid.hy
    mirror = bc in (BoundaryCondition.NEUMANN_ZERO, BoundaryCondition.NO_FLUX)
    gx = np.empty((grid.ny, grid.nx + 1))
    gy = np.empty((grid.ny + 1, grid.nx))

    def apply(x: np.ndarray) -> np.ndarray:
        gx[:, 1:-1] = (x[:, 1:] - x[:, :-1]) / hx
        gy[1:-1, :] = (x[1:, :] - x[:-1, :]) / hy
        if mirror:
            gx[:, 0] = 0.0
            gx[:, -1] = 0.0
            gy[0, :] = 0.0
            gy[-1, :] = 0.0
        else:  # Dirichlet-zero ghost = -interior
            gx[:, 0] = (x[:, 0] - (-x[:, 0])) / hx
            gx[:, -1] = ((-x[:, -1]) - x[:, -1]) / hx
            gy[0, :] = (x[0, :] - (-x[0, :])) / hy
            gy[-1, :] = ((-x[-1, :]) - x[-1, :]) / hy
        div = (gx[:, 1:] - gx[:, :-1]) / hx + (gy[1:, :] - gy[:-1, :]) / hy
        return -div + coeff0 * x

    return apply


def solve(problem: EllipticProblem, tol: float = 1e-10, max_iter: int | None = None,
          callback=None, x0: np.ndarray | None = None) -> tuple[ScalarField, SolveReport]:
    """Jacobi-preconditioned CG; returns the best iterate plus a report.

    Convergence is relative: ||r||_2 <= tol * max(1, ||rhs||_2).  For the
    zero-mean gauge the iterates and residuals are projected onto mean-zero
    vectors every sweep, which keeps the operator symmetric on the quotient
    space instead of pinning a cell.  An optional x0 warm-starts the
    iteration (time steppers reuse the previous solution).
    """
    problem.check()
    grid = problem.rhs.grid
    coeff0 = problem.coeff0.data
    bc = problem.bc
    zero_mean = problem.gauge is Gauge.ZERO_MEAN
    if max_iter is None:
        max_iter = 10 * grid.nx * grid.ny
    apply = _make_apply(grid, coeff0, bc)

    b = problem.rhs.data.copy()
    bnorm = float(np.linalg.norm(b))
    if zero_mean:
        drift = float(b.mean())
        if abs(drift) > tol * max(1.0, float(np.abs(b).max())):
            raise IncompatibleRHS(
                f"Neumann problem needs a mean-free right side (mean = {drift})")
        b -= b.mean()

    target = tol * max(1.0, bnorm)
    diag = operator_diagonal(grid, coeff0, bc)

    if x0 is not None:
        x = np.array(x0, dtype=float).reshape(grid.shape)
        if zero_mean:
            x -= x.mean()
        r = b - apply(x)
    else:
        x = np.zeros(grid.shape)
        r = b.copy()
    rnorm = float(np.linalg.norm(r))
    if rnorm <= target:
        return ScalarField(grid, x), SolveReport(0, rnorm, True)

    z = r / diag
    if zero_mean:
        z -= z.mean()
    p = z.copy()
    rz = float(np.vdot(r, z))

    it = 0
    while it < max_iter:
        Ap = apply(p)
        alpha = rz / float(np.vdot(p, Ap))
        x += alpha * p
        r -= alpha * Ap
        if zero_mean:
            x -= x.mean()
            r -= r.mean()
        it += 1
        if callback is not None:
            callback(x.copy())
        rnorm = float(np.linalg.norm(r))
        if rnorm <= target:
            return ScalarField(grid, x), SolveReport(it, rnorm, True)
        z = r / diag
        if zero_mean:
            z -= z.mean()
        rz_new = float(np.vdot(r, z))
        p = z + (rz_new / rz) * p
        rz = rz_new

    return ScalarField(grid, x), SolveReport(it, rnorm, False)
