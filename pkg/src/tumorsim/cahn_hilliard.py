"""Semi-implicit phase-field step with convex splitting and damped Newton.

One step advances (phi, mu) through

    (phi^+ - phi^n)/dt - (delta/dt)*lap(mu^+ - mu^n) + adv - lap(mu^+) = src,
    mu^+ = -eps^2*lap(phi^+) + C'(phi^+) + B'(phi^n),

with mu Dirichlet-zero and phi Neumann-zero.  The advection term ``adv`` and
the source are explicit: either flux form div(u*phi^n) with src = phi^n*S_T,
or pure advection u.grad(phi^n) with zero source (the regularized-scheme
form, where the velocity divergence already carries the source).

The convex part C' is implicit and the concave part B' explicit, which makes
the decoupled step unconditionally energy stable.  Newton runs on the coupled
(phi, mu) block; the linear update is solved by a sparse direct factorization
because the two fields couple through a stiff fourth-order operator that
defeats any segregated sweep.  Backtracking halves the Newton step until the
phase fraction stays inside [clamp_margin, 1 - clamp_margin].
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import physics
from .elliptic import SolveReport
from .fields import (
    BoundaryCondition,
    FaceVectorField,
    GridSpec,
    ScalarField,
    divergence_from_faces,
    face_average,
    gradient_to_faces,
    laplacian,
)

_MAX_NEWTON = 25
_MAX_BACKTRACK = 30


class NewtonDivergence(RuntimeError):
    """Newton failed to reduce the step residual within its budget."""


class DomainEscape(RuntimeError):
    """An iterate could not be projected back into the potential domain."""


@dataclass
class CHStepInput:
    """One step's data: previous fields, velocity, explicit source, dt."""

    phi_old: ScalarField
    mu_old: ScalarField
    u: FaceVectorField
    st_field: ScalarField
    dt: float
    params: physics.ModelParams
    potential: physics.PotentialSpec
    advection: str = "flux"  # "flux" or "gradient"

    def check(self) -> None:
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.advection not in ("flux", "gradient"):
            raise ValueError(f"unknown advection form {self.advection!r}")
        k = self.potential.clamp_margin
        if self.phi_old.min() < k or self.phi_old.max() > 1.0 - k:
            raise ValueError("phi_old must lie inside [clamp_margin, 1 - clamp_margin]")


def _neg_lap_1d(n: int, h: float, bc: BoundaryCondition) -> sp.csr_matrix:
    main = np.full(n, 2.0)
    if bc is BoundaryCondition.DIRICHLET_ZERO:
        main[0] = main[-1] = 3.0
    else:
        main[0] = main[-1] = 1.0
    off = np.full(n - 1, -1.0)
    return sp.diags([off, main, off], offsets=[-1, 0, 1], format="csr") / h**2


@lru_cache(maxsize=None)
def neg_laplacian_matrix(grid: GridSpec, bc: BoundaryCondition) -> sp.csr_matrix:
    """Sparse -lap with ghost closure, acting on row-major flattened fields.

    Matches the matrix-free fields operator entrywise (tested), so solves
    done through this matrix stay compatible with the stencil diagnostics.
    """
    tx = _neg_lap_1d(grid.nx, grid.hx, bc)
    ty = _neg_lap_1d(grid.ny, grid.hy, bc)
    ix = sp.identity(grid.nx, format="csr")
    iy = sp.identity(grid.ny, format="csr")
    return (sp.kron(iy, tx) + sp.kron(ty, ix)).tocsr()


@lru_cache(maxsize=None)
def _lap_product(grid: GridSpec) -> sp.csr_matrix:
    """Cached (-lap_D) @ (-lap_N), the fixed pattern of the Schur system."""
    a = neg_laplacian_matrix(grid, BoundaryCondition.DIRICHLET_ZERO)
    b = neg_laplacian_matrix(grid, BoundaryCondition.NEUMANN_ZERO)
    return (a @ b).tocsr()


def advection_term(phi: ScalarField, u: FaceVectorField, st_field: ScalarField,
                   form: str) -> tuple[np.ndarray, np.ndarray]:
    """Explicit advection cell term and the explicit source it pairs with.

    Returns (adv, src) so the phi update reads
    (phi^+ - phi^n)/dt + adv - lap(mu^+) - ... = src.
    """
    if form == "flux":
        phi_face = face_average(phi, BoundaryCondition.NEUMANN_ZERO)
        flux = FaceVectorField(phi.grid,
                               u.x_faces * phi_face.x_faces,
                               u.y_faces * phi_face.y_faces)
        return divergence_from_faces(flux).data, phi.data * st_field.data
    # pure advection u.grad(phi): average faces back to cell centers
    g = gradient_to_faces(phi, BoundaryCondition.NEUMANN_ZERO)
    ux = 0.5 * (u.x_faces[:, :-1] + u.x_faces[:, 1:])
    uy = 0.5 * (u.y_faces[:-1, :] + u.y_faces[1:, :])
    gx = 0.5 * (g.x_faces[:, :-1] + g.x_faces[:, 1:])
    gy = 0.5 * (g.y_faces[:-1, :] + g.y_faces[1:, :])
    return ux * gx + uy * gy, np.zeros(phi.grid.shape)


def ch_step(inp: CHStepInput, initial_guess=None) -> tuple[ScalarField, ScalarField, SolveReport]:
    """Advance (phi, mu) one step; see the module docstring for the system.

    initial_guess may carry a (phi, mu) pair to warm-start Newton (used by
    the outer coupling loop).  Raises NewtonDivergence / DomainEscape when
    the safeguarded iteration cannot finish.
    """
    inp.check()
    grid = inp.phi_old.grid
    pot = inp.potential
    dt, delta, eps2 = inp.dt, inp.params.delta, inp.params.eps**2
    kmin = pot.clamp_margin
    n = grid.nx * grid.ny

    Ld = neg_laplacian_matrix(grid, BoundaryCondition.DIRICHLET_ZERO)
    Ln = neg_laplacian_matrix(grid, BoundaryCondition.NEUMANN_ZERO)

    phi_n = inp.phi_old.data.ravel()
    mu_n = inp.mu_old.data.ravel()
    adv, src = advection_term(inp.phi_old, inp.u, inp.st_field, inp.advection)
    explicit = dt * (adv - src).ravel()
    beta = delta + dt
    lag = delta * (Ld @ mu_n)
    b_prime = physics.potential_dB(phi_n, pot)

    def residual(phi, mu):
        # both equations scaled to O(field) magnitudes: eq1 multiplied by dt
        r1 = (phi - phi_n) + beta * (Ld @ mu) - lag + explicit
        r2 = mu - eps2 * (Ln @ phi) - physics.potential_dC(phi) - b_prime
        return r1, r2

    def merit(r1, r2):
        return float(np.sqrt(np.vdot(r1 / dt, r1 / dt).real + np.vdot(r2, r2).real))

    if initial_guess is not None:
        phi = np.clip(initial_guess[0].data.ravel().copy(), kmin, 1.0 - kmin)
        mu = initial_guess[1].data.ravel().copy()
    else:
        phi = phi_n.copy()
        mu = mu_n.copy()

    # round-off floors keep tiny-dt steps from being flagged as divergent
    scale1 = max(1.0, float(np.abs(beta * (Ld @ mu_n)).max()),
                 float(np.abs(explicit).max()))
    tol1 = inp.params.newton_tol * dt + 64 * np.finfo(float).eps * scale1
    tol2 = inp.params.newton_tol + 64 * np.finfo(float).eps

    eye = sp.identity(n, format="csr")
    LdLn = _lap_product(grid)
    r1, r2 = residual(phi, mu)
    m = merit(r1, r2)
    iters = 0
    while True:
        if float(np.abs(r1).max()) <= tol1 and float(np.abs(r2).max()) <= tol2:
            break
        if iters >= _MAX_NEWTON:
            raise NewtonDivergence(
                f"no convergence after {iters} Newton iterations "
                f"(|r1| = {np.abs(r1).max():.3e}, |r2| = {np.abs(r2).max():.3e})")
        # eliminate the mu update: the phi block is
        # [I + beta*(-lap_D)(C'' + eps^2*(-lap_N))] dphi = -r1 + beta*(-lap_D) r2
        c2 = physics.potential_d2(phi, pot) + 2.0 * pot.theta  # C'' alone
        schur = (eye + beta * eps2 * LdLn + beta * (Ld @ sp.diags(c2))).tocsc()
        dphi = splu(schur, permc_spec="MMD_AT_PLUS_A").solve(-r1 + beta * (Ld @ r2))
        dmu = -r2 + eps2 * (Ln @ dphi) + c2 * dphi

        lam = 1.0
        accepted = False
        for _ in range(_MAX_BACKTRACK):
            cand_phi = np.clip(phi + lam * dphi, kmin, 1.0 - kmin)
            cand_mu = mu + lam * dmu
            if not (np.all(np.isfinite(cand_phi)) and np.all(np.isfinite(cand_mu))):
                lam *= 0.5
                continue
            c1, cr2 = residual(cand_phi, cand_mu)
            cm = merit(c1, cr2)
            if np.isfinite(cm) and cm <= (1.0 - 1e-4 * lam) * m:
                phi, mu, r1, r2, m = cand_phi, cand_mu, c1, cr2, cm
                accepted = True
                break
            lam *= 0.5
        if not accepted:
            if not np.all(np.isfinite(phi + dphi)):
                raise DomainEscape("Newton direction left the representable domain")
            raise NewtonDivergence(
                f"line search stalled at iteration {iters} (merit {m:.3e})")
        iters += 1

    phi = np.clip(phi, kmin, 1.0 - kmin)
    report = SolveReport(iterations=iters, residual_norm=m, converged=True)
    return ScalarField(grid, phi.reshape(grid.shape)), \
        ScalarField(grid, mu.reshape(grid.shape)), report


def initial_mu(phi0: ScalarField, params: physics.ModelParams) -> ScalarField:
    """mu(0) = -eps^2*lap(phi0) + F'(phi0) with phi0 pulled into the domain.

    Regularized runs (delta > 0) start from mu(0) = 0 instead; that choice
    belongs to the caller.
    """
    pot = params.potential
    phic = np.clip(phi0.data, pot.clamp_margin, 1.0 - pot.clamp_margin)
    fprime = physics.potential_dC(phic) + physics.potential_dB(phic, pot)
    lap = laplacian(ScalarField(phi0.grid, phic), BoundaryCondition.NEUMANN_ZERO)
    return ScalarField(phi0.grid, -params.eps**2 * lap.data + fprime)
