"""Vanishing-interface experiment: sweep eps and compare with the limit flow.

With sources switched off, the phase field couples only to the Darcy
velocity, now under no-flux pressure (zero-mean gauge).  As the interface
coefficient eps shrinks, the velocity is expected to die out and the
dynamics approach pure nonlinear diffusion

    d(phi)/dt = lap(F'(phi)),

which the sweep quantifies: the space-time L2 norm of u per eps, the defect
of the curl identity curl(u) = mu_x*phi_y - mu_y*phi_x, the eps-weighted
curvature and gradient integrals, and the final-state distance to a
reference run of the limit system.  Strict convexity of the potential
(theta < 2) is required throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import physics
from .cahn_hilliard import CHStepInput, ch_step
from .fields import (
    BoundaryCondition,
    BoundarySpec,
    FaceVectorField,
    ScalarField,
    cell_inner,
    face_inner,
    gradient_to_faces,
    integrate,
    laplacian,
)
from .flow import node_curl, node_gradient_cross
from .simulate import SimState, initial_state, step


class ConvexityViolation(ValueError):
    """The potential is not strictly convex (theta >= 2)."""


@dataclass
class LimitRow:
    eps: float
    l2_u_spacetime: float
    curl_residual: float
    int_eps_lap_phi_sq: float
    int_grad_phi_sq: float
    dist_to_limit: float


@dataclass
class LimitReport:
    rows: list[LimitRow]

    CSV_HEADER = ("eps,l2_u_spacetime,curl_residual,int_eps_lap_phi_sq,"
                  "int_grad_phi_sq,dist_to_limit")

    def csv_text(self) -> str:
        lines = [self.CSV_HEADER]
        for r in self.rows:
            lines.append(",".join(repr(float(v)) for v in (
                r.eps, r.l2_u_spacetime, r.curl_residual,
                r.int_eps_lap_phi_sq, r.int_grad_phi_sq, r.dist_to_limit)))
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.csv_text())

    def table(self) -> str:
        head = f"{'eps':>8} {'l2_u':>12} {'curl_res':>12} {'eps_lap2':>12} " \
               f"{'grad2':>12} {'dist':>12}"
        lines = [head]
        for r in self.rows:
            lines.append(f"{r.eps:>8.4g} {r.l2_u_spacetime:>12.5e} "
                         f"{r.curl_residual:>12.5e} {r.int_eps_lap_phi_sq:>12.5e} "
                         f"{r.int_grad_phi_sq:>12.5e} {r.dist_to_limit:>12.5e}")
        return "\n".join(lines)


def _require_convex(params: physics.ModelParams) -> None:
    if params.theta >= 2.0:
        raise ConvexityViolation(
            f"strict convexity needs theta < 2 (theta = {params.theta})")


def _nsteps(t_final: float, dt: float) -> int:
    return int(round(t_final / dt)) if t_final > 0 else 0


def run_limit_system(cfg) -> tuple[list[tuple[float, ScalarField]], list[float]]:
    """Advance d(phi)/dt = lap(F'(phi)) with the same implicit splitting.

    Reuses the phase-field step with eps = 0, zero velocity and zero source.
    Returns the snapshot trajectory [(t, phi), ...] (always including the
    final state) and the series of the bulk energy int F(phi), which the
    splitting keeps non-increasing.
    """
    _require_convex(cfg.params)
    params = replace(cfg.params, eps=0.0, delta=0.0)
    grid = cfg.grid
    phi = cfg.phi0.build(grid)
    kmin = params.potential.clamp_margin
    phi = ScalarField(grid, np.clip(phi.data, kmin, 1.0 - kmin))
    mu = ScalarField.full(grid, 0.0)
    zero_u = FaceVectorField.zeros(grid)
    zero_st = ScalarField.full(grid, 0.0)

    def bulk(f):
        return integrate(ScalarField(grid, physics.potential_value(f.data, params.potential)))

    energies = [bulk(phi)]
    trajectory = [(0.0, phi.copy())]
    nsteps = _nsteps(cfg.t_final, cfg.dt)
    t = 0.0
    for k in range(1, nsteps + 1):
        inp = CHStepInput(phi, mu, zero_u, zero_st, cfg.dt, params, params.potential)
        phi, mu, _ = ch_step(inp)
        t += cfg.dt
        energies.append(bulk(phi))
        if cfg.snapshot_every > 0 and k % cfg.snapshot_every == 0 and k != nsteps:
            trajectory.append((t, phi.copy()))
    trajectory.append((t, phi.copy()))
    return trajectory, energies


def _run_one_eps(eps: float, cfg) -> tuple[SimState, LimitRow, float]:
    """One sweep member; returns (final state, metrics row, max div defect)."""
    params = replace(cfg.params, eps=eps, delta=0.0)
    grid = cfg.grid
    bc = BoundarySpec.no_flux_pressure()
    state = initial_state(grid, cfg.phi0.build(grid), ScalarField.full(grid, 0.0), params)

    u2 = 0.0
    curl2 = 0.0
    lap2 = 0.0
    grad2 = 0.0
    worst_div = 0.0
    nsteps = _nsteps(cfg.t_final, cfg.dt)
    node_area = grid.cell_volume
    for k in range(1, nsteps + 1):
        state, rec = step(state, cfg.dt, params, bc=bc, mode="limit", step_index=k)
        worst_div = max(worst_div, rec.div_residual)
        u2 += cfg.dt * face_inner(state.u, state.u)
        defect = node_curl(state.u) - node_gradient_cross(state.mu, state.phi, bc)
        curl2 += cfg.dt * float((defect**2).sum()) * node_area
        lap = laplacian(state.phi, BoundaryCondition.NEUMANN_ZERO)
        lap2 += cfg.dt * (eps**2) * cell_inner(lap, lap)
        g = gradient_to_faces(state.phi, BoundaryCondition.NEUMANN_ZERO)
        grad2 += cfg.dt * face_inner(g, g)

    row = LimitRow(eps=eps, l2_u_spacetime=float(np.sqrt(u2)),
                   curl_residual=float(np.sqrt(curl2)),
                   int_eps_lap_phi_sq=lap2, int_grad_phi_sq=grad2,
                   dist_to_limit=float("nan"))
    return state, row, worst_div


def run_limit_study(eps_list, cfg) -> LimitReport:
    """Run the decoupled flow system for each eps and tabulate the metrics.

    eps_list must be strictly decreasing and positive.  The final-state
    distance column compares against a reference run of the limit system
    with the same initial data and time grid.
    """
    eps_list = [float(e) for e in eps_list]
    if not eps_list or any(e <= 0 for e in eps_list):
        raise ValueError("eps_list must contain positive values")
    if any(a <= b for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be strictly decreasing")
    _require_convex(cfg.params)

    trajectory, _ = run_limit_system(cfg)
    phi_ref = trajectory[-1][1]

    rows = []
    for eps in eps_list:
        state, row, worst_div = _run_one_eps(eps, cfg)
        d = ScalarField(cfg.grid, state.phi.data - phi_ref.data)
        row.dist_to_limit = float(np.sqrt(cell_inner(d, d)))
        rows.append(row)
        if worst_div > 10 * cfg.params.lin_tol:
            raise RuntimeError(
                f"divergence-free constraint violated in sweep (eps={eps}, "
                f"max defect {worst_div:.3e})")
    return LimitReport(rows)
