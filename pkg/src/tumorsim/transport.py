"""Explicit upwind step for the viable-cell fraction.

The advective part is the flux-form upwind divergence of u*P with the inflow
rule built into the boundary fluxes: faces where the velocity points into the
domain carry the boundary state P = 0, outflow faces carry the interior
upwind value.  The update then subtracts P times the discrete velocity
divergence, which turns the flux form into the nonconservative derivative
u.grad(P), and applies the reaction in the factorized form

    P * [-S_T + phi*(n - lambda1 - lambda2*H(n_N - n))]

whose sign structure is what keeps 0 <= P <= 1 (up to O(dt^2)) at the
discrete level.  With delta > 0 an explicit Dirichlet-zero diffusion is
added, subject to its own parabolic time-step bound.
"""

from __future__ import annotations

import numpy as np

from . import physics
from .fields import (
    BoundaryCondition,
    FaceVectorField,
    ScalarField,
    divergence_from_faces,
    laplacian,
)


class CFLViolation(ValueError):
    """dt exceeds the stability bound; the message reports the admissible dt."""


def admissible_dt(u: FaceVectorField, params: physics.ModelParams) -> float:
    """Largest stable dt for the explicit update under the configured CFL number."""
    g = u.grid
    hmin = min(g.hx, g.hy)
    dt_adv = params.cfl * hmin / max(u.max_abs(), 1e-14)
    if params.delta > 0:
        return min(dt_adv, params.cfl * hmin**2 / (4.0 * params.delta))
    return dt_adv


def _upwind_face_values(p: np.ndarray, u: FaceVectorField) -> tuple[np.ndarray, np.ndarray]:
    # exterior state is 0, which realizes the inflow rule at the walls
    g = u.grid
    left = np.zeros((g.ny, g.nx + 1))
    right = np.zeros((g.ny, g.nx + 1))
    left[:, 1:] = p
    right[:, :-1] = p
    px = np.where(u.x_faces >= 0, left, right)

    below = np.zeros((g.ny + 1, g.nx))
    above = np.zeros((g.ny + 1, g.nx))
    below[1:, :] = p
    above[:-1, :] = p
    py = np.where(u.y_faces >= 0, below, above)
    return px, py


def transport_step(p_old: ScalarField, u: FaceVectorField, phi: ScalarField,
                   n: ScalarField, dt: float, params: physics.ModelParams) -> ScalarField:
    """One explicit step of the advection-reaction law for P."""
    dt_ok = admissible_dt(u, params)
    if dt > dt_ok * (1.0 + 1e-12):
        raise CFLViolation(f"dt = {dt} too large; admissible dt = {dt_ok}")

    g = p_old.grid
    p = p_old.data
    px, py = _upwind_face_values(p, u)
    flux = FaceVectorField(g, u.x_faces * px, u.y_faces * py)
    div_flux = divergence_from_faces(flux).data
    div_u = divergence_from_faces(u).data

    st = physics.source_st(n.data, p, phi.data, params)
    h = physics.heaviside_smooth(params.n_N - n.data, params.sigmaH)
    reaction = p * (-st + phi.data * (n.data - params.lambda1 - params.lambda2 * h))

    p_new = p - dt * (div_flux - p * div_u) + dt * reaction
    if params.delta > 0:
        diff = laplacian(p_old, BoundaryCondition.DIRICHLET_ZERO).data
        p_new = p_new + dt * params.delta * diff
    return ScalarField(g, p_new)
