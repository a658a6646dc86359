"""Darcy closure: pressure solve plus velocity reconstruction.

The velocity is u = -grad(pi) + k with the capillary face flux
k = avg(mu) * grad(phi).  The pressure solves div(-grad(pi) + k) = S_T, so by
the exact div/grad compatibility of the fields operators the divergence
defect of u equals the linear-solver residual and nothing else.

Default is Dirichlet-zero pressure.  The no-flux variant (used by the
vanishing-interface driver) solves the singular Neumann problem with a
zero-mean gauge; there k has zero normal trace, so the data are compatible
whenever the integral of S_T vanishes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .elliptic import (
    EllipticProblem,
    Gauge,
    NoConvergence,
    SolveReport,
    solve,
)
from .fields import (
    BoundaryCondition,
    BoundarySpec,
    FaceVectorField,
    ScalarField,
    divergence_from_faces,
    face_average,
    gradient_to_faces,
)


@dataclass
class FlowResult:
    pi: ScalarField
    u: FaceVectorField
    div_residual: float  # max-norm of div(u) - S_T
    report: SolveReport


def korteweg_flux(mu: ScalarField, phi: ScalarField, bc: BoundarySpec) -> FaceVectorField:
    """Face flux k = (face-averaged mu) * (face gradient of phi).

    The arithmetic face mean of mu preserves the summation-by-parts pairing
    -<u, k> = -<u, u> + <pi, S_T> used by the energy ledger.
    """
    mu_face = face_average(mu, bc.mu)
    gphi = gradient_to_faces(phi, bc.phi)
    return FaceVectorField(mu.grid,
                           mu_face.x_faces * gphi.x_faces,
                           mu_face.y_faces * gphi.y_faces)


def solve_darcy(mu: ScalarField, phi: ScalarField, st_field: ScalarField,
                bc: BoundarySpec, tol: float = 1e-10,
                pi_guess: ScalarField | None = None) -> FlowResult:
    """Solve the pressure problem and rebuild u so that div(u) tracks S_T.

    The inner CG tolerance is tightened by 1/sqrt(cells) so the max-norm of
    the divergence defect lands near tol rather than tol * ||rhs||.
    pi_guess warm-starts the pressure iteration.
    """
    grid = mu.grid
    k = korteweg_flux(mu, phi, bc)
    rhs = ScalarField(grid, st_field.data - divergence_from_faces(k).data)

    if bc.pi is BoundaryCondition.NO_FLUX:
        problem = EllipticProblem(ScalarField.full(grid, 0.0), rhs,
                                  BoundaryCondition.NO_FLUX, Gauge.ZERO_MEAN)
    else:
        problem = EllipticProblem(ScalarField.full(grid, 0.0), rhs, bc.pi)

    cg_tol = tol / np.sqrt(grid.nx * grid.ny)
    pi, report = solve(problem, tol=cg_tol,
                       x0=None if pi_guess is None else pi_guess.data)
    if not report.converged:
        raise NoConvergence(
            f"pressure solve stalled at residual {report.residual_norm:.3e}")

    gpi = gradient_to_faces(pi, problem.bc)
    u = FaceVectorField(grid, -gpi.x_faces + k.x_faces, -gpi.y_faces + k.y_faces)
    defect = divergence_from_faces(u).data - st_field.data
    return FlowResult(pi, u, float(np.abs(defect).max()), report)


def node_curl(u: FaceVectorField) -> np.ndarray:
    """Discrete scalar curl d(uy)/dx - d(ux)/dy at the interior grid nodes.

    Returns an (ny-1, nx-1) array.  The discrete curl of any discrete
    pressure gradient vanishes identically at these nodes, so the curl of a
    Darcy velocity is carried entirely by the capillary flux.
    """
    g = u.grid
    duy_dx = (u.y_faces[1:-1, 1:] - u.y_faces[1:-1, :-1]) / g.hx
    dux_dy = (u.x_faces[1:, 1:-1] - u.x_faces[:-1, 1:-1]) / g.hy
    return duy_dx - dux_dy


def node_gradient_cross(mu: ScalarField, phi: ScalarField, bc: BoundarySpec) -> np.ndarray:
    """mu_x*phi_y - mu_y*phi_x sampled at the interior nodes.

    Face gradients are averaged onto the nodes; this is the consistent target
    for node_curl of the Darcy velocity on smooth data.
    """
    gmu = gradient_to_faces(mu, bc.mu)
    gphi = gradient_to_faces(phi, bc.phi)

    def at_nodes(gf):
        # x-component lives on vertical faces: average the two rows meeting a node
        gx = 0.5 * (gf.x_faces[1:, 1:-1] + gf.x_faces[:-1, 1:-1])
        gy = 0.5 * (gf.y_faces[1:-1, 1:] + gf.y_faces[1:-1, :-1])
        return gx, gy

    mux, muy = at_nodes(gmu)
    phix, phiy = at_nodes(gphi)
    return mux * phiy - muy * phix
