"""Coupled time loop and the per-step invariant diagnostics.

Step order: quasi-static nutrient solve, source fields, a Picard loop
alternating the pressure/velocity solve with the implicit phase-field step,
then the explicit transport update with the converged velocity.  Sources are
lagged at their start-of-step values; an optional outer iteration replays the
whole sequence with the updated source map until it stops moving (a scheme
study knob, off by default).

Every step emits a DiagnosticsRecord carrying the quantities the analysis
bounds: field ranges, the interface energy and its balance residual, the
divergence defect of the velocity, and the mass ledger of the phase field.

Modes: "full" runs everything; "decoupled" pins u = 0 and skips transport
(pure phase-field dynamics); "limit" drops sources, nutrient and transport
and runs the flow-coupled system with no-flux pressure (used by the
vanishing-interface driver).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import physics
from .cahn_hilliard import CHStepInput, advection_term, ch_step
from .fields import (
    BoundaryCondition,
    BoundarySpec,
    FaceVectorField,
    GridSpec,
    ScalarField,
    boundary_flux,
    face_inner,
    gradient_to_faces,
    integrate,
    write_snapshot,
)
from .flow import solve_darcy
from .nutrient import solve_nutrient
from .transport import transport_step

MAX_PICARD = 50

CSV_HEADER = ("step,t,energy,energy_balance_residual,phi_min,phi_max,"
              "p_min,p_max,n_min,n_max,l2_u,div_residual,mass_phi,"
              "mass_ledger_residual,picard_iters,newton_iters")


class PicardStall(RuntimeError):
    """The flow/phase-field coupling loop ran out of iterations.

    Carries the last iterate on the ``last_iterate`` attribute.
    """

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class StepError(RuntimeError):
    """A time step failed; chains the causing error with step context."""


@dataclass
class SimState:
    """The advanced bundle (t, phi, mu, pi, u, p, n)."""

    t: float
    phi: ScalarField
    mu: ScalarField
    pi: ScalarField
    u: FaceVectorField
    p: ScalarField
    n: ScalarField


@dataclass
class DiagnosticsRecord:
    step: int
    t: float
    energy: float
    energy_balance_residual: float
    phi_min: float
    phi_max: float
    p_min: float
    p_max: float
    n_min: float
    n_max: float
    l2_u: float
    div_residual: float
    mass_phi: float
    mass_ledger_residual: float
    picard_iters: int
    newton_iters: int
    picard_increments: list = field(default_factory=list, repr=False)

    def csv_row(self) -> str:
        vals = (self.step, self.t, self.energy, self.energy_balance_residual,
                self.phi_min, self.phi_max, self.p_min, self.p_max,
                self.n_min, self.n_max, self.l2_u, self.div_residual,
                self.mass_phi, self.mass_ledger_residual,
                self.picard_iters, self.newton_iters)
        return ",".join(str(v) if isinstance(v, int) else repr(float(v)) for v in vals)


def free_energy(phi: ScalarField, params: physics.ModelParams) -> float:
    """E = int[ eps^2/2 |grad phi|^2 + F(phi) ] with the face-gradient energy."""
    g = gradient_to_faces(phi, BoundaryCondition.NEUMANN_ZERO)
    bulk = integrate(ScalarField(phi.grid, physics.potential_value(phi.data, params.potential)))
    return bulk + 0.5 * params.eps**2 * face_inner(g, g)


def energy_balance_residual(prev: SimState, next_: SimState, dt: float,
                            params: physics.ModelParams,
                            st_field: ScalarField | None = None) -> float:
    """Signed defect of the discrete energy balance across one accepted step.

    (E+ - E)/dt + int(|grad mu|^2 + |u|^2) - int(pi * S_T); S_T defaults to
    the model source evaluated the way the step evaluated it (new nutrient,
    old P and phi).  The splitting satisfies an inequality, not an identity,
    so this is recorded rather than asserted to vanish.
    """
    if st_field is None:
        st = physics.source_st(next_.n.data, prev.p.data, prev.phi.data, params)
        st_field = ScalarField(prev.phi.grid, st)
    de = (free_energy(next_.phi, params) - free_energy(prev.phi, params)) / dt
    gmu = gradient_to_faces(next_.mu, BoundaryCondition.DIRICHLET_ZERO)
    dissipation = face_inner(gmu, gmu) + face_inner(next_.u, next_.u)
    work = integrate(ScalarField(prev.phi.grid, next_.pi.data * st_field.data))
    return de + dissipation - work


def check_bounds(state: SimState, dt: float = 0.0, tol: float = 1e-8) -> dict:
    """Min/max of each field against the bounds the analysis guarantees.

    Also reports the derived fractions phi_D = phi - P and phi_H = 1 - phi;
    a negative phi_D is flagged but does not fail the report (the bound
    P <= phi is not part of the guaranteed set).
    """
    report = {
        "(ee7)": {"min": state.phi.min(), "max": state.phi.max(),
                  "ok": 0.0 < state.phi.min() and state.phi.max() < 1.0},
        "(ee13)": {"min": state.p.min(), "max": state.p.max(),
                   "ok": state.p.min() >= 0.0 and state.p.max() <= 1.0 + 10.0 * dt**2},
        "(ee13--)": {"min": state.n.min(), "max": state.n.max(),
                     "ok": -tol <= state.n.min() and state.n.max() <= 1.0 + tol},
    }
    phi_d = state.phi.data - state.p.data
    report["phi_D"] = {"min": float(phi_d.min()), "max": float(phi_d.max()),
                       "flag_negative": bool(phi_d.min() < -tol)}
    report["phi_H"] = {"min": 1.0 - state.phi.max(), "max": 1.0 - state.phi.min()}
    report["ok"] = all(report[k]["ok"] for k in ("(ee7)", "(ee13)", "(ee13--)"))
    return report


def _picard_flow_ch(state: SimState, st_field: ScalarField, dt: float,
                    params: physics.ModelParams, bc: BoundarySpec, advection: str):
    """Alternate Darcy and phase-field solves until the phi iterate settles."""
    phi_k, mu_k = state.phi, state.mu
    pi_k = state.pi
    increments = []
    newton_total = 0
    u_used = None
    for _ in range(MAX_PICARD):
        flow = solve_darcy(mu_k, phi_k, st_field, bc, tol=params.lin_tol, pi_guess=pi_k)
        u_used, pi_k = flow.u, flow.pi
        inp = CHStepInput(state.phi, state.mu, flow.u, st_field, dt, params,
                          params.potential, advection)
        phi_next, mu_next, rep = ch_step(inp, initial_guess=(phi_k, mu_k))
        newton_total += rep.iterations
        inc = float(np.abs(phi_next.data - phi_k.data).max())
        increments.append(inc)
        phi_k, mu_k = phi_next, mu_next
        if inc < params.picard_tol:
            # one consistent flow solve on the converged pair
            flow = solve_darcy(mu_k, phi_k, st_field, bc, tol=params.lin_tol,
                               pi_guess=pi_k)
            return phi_k, mu_k, flow, u_used, increments, newton_total
    raise PicardStall(
        f"no contraction after {MAX_PICARD} iterations "
        f"(last increments {increments[-3:]})",
        last_iterate={"phi": phi_k, "mu": mu_k})


def _mass_ledger_residual(state: SimState, phi_new: ScalarField, mu_new: ScalarField,
                          u_used: FaceVectorField, st_field: ScalarField,
                          dt: float, params: physics.ModelParams, advection: str) -> float:
    """Defect of: mass change = dt * (sources - advected outflux + wall flux of grad mu)."""
    vol = state.phi.grid.cell_volume
    adv, src = advection_term(state.phi, u_used, st_field, advection)
    gmu_new = gradient_to_faces(mu_new, BoundaryCondition.DIRICHLET_ZERO)
    budget = float(src.sum() - adv.sum()) * vol + boundary_flux(gmu_new)
    if params.delta > 0:
        gmu_old = gradient_to_faces(state.mu, BoundaryCondition.DIRICHLET_ZERO)
        budget += (params.delta / dt) * (boundary_flux(gmu_new) - boundary_flux(gmu_old))
    return integrate(phi_new) - integrate(state.phi) - dt * budget


def step(state: SimState, dt: float, params: physics.ModelParams,
         bc: BoundarySpec | None = None, mode: str = "full",
         step_index: int = 0, outer_iterate: bool = False
         ) -> tuple[SimState, DiagnosticsRecord]:
    """Advance the coupled system by one step and report diagnostics.

    With outer_iterate the full sequence is replayed until the outer source
    map S = (n + lambda3)*P stops moving (scheme studies); by default the
    sources stay lagged at their start-of-step values.
    """
    if bc is None:
        bc = BoundarySpec.no_flux_pressure() if mode == "limit" else BoundarySpec.default()
    grid = state.phi.grid
    advection = "gradient" if params.delta > 0 else "flux"

    if mode == "limit":
        n_new = state.n
        st_field = ScalarField.full(grid, 0.0)
    else:
        n_new, _ = solve_nutrient(state.p, state.phi, params, tol=params.lin_tol,
                                  n_guess=state.n)
        st_field = ScalarField(grid, physics.source_st(
            n_new.data, state.p.data, state.phi.data, params))

    if mode == "decoupled":
        u_new = FaceVectorField.zeros(grid)
        pi_new = ScalarField.full(grid, 0.0)
        inp = CHStepInput(state.phi, state.mu, u_new, st_field, dt, params,
                          params.potential, advection)
        phi_new, mu_new, rep = ch_step(inp)
        u_used, increments, newton_total = u_new, [], rep.iterations
        div_residual = 0.0
        p_new = state.p
    else:
        outer_passes = MAX_PICARD if (outer_iterate and mode == "full") else 1
        s_prev = None
        newton_total = 0
        increments = []
        for _ in range(outer_passes):
            phi_new, mu_new, flow, u_used, incs, newton = _picard_flow_ch(
                state, st_field, dt, params, bc, advection)
            newton_total += newton
            increments.extend(incs)
            u_new, pi_new = flow.u, flow.pi
            div_residual = flow.div_residual
            if mode == "full":
                p_new = transport_step(state.p, u_new, phi_new, n_new, dt, params)
            else:
                p_new = state.p
            if outer_passes == 1:
                break
            n_hat, _ = solve_nutrient(p_new, phi_new, params, tol=params.lin_tol)
            s_new = (n_hat.data + params.lambda3) * p_new.data
            n_new = n_hat
            if s_prev is not None and float(np.abs(s_new - s_prev).max()) < params.picard_tol:
                break
            s_prev = s_new
            st_field = ScalarField(grid, s_new - params.lambda3 * state.phi.data)
        else:
            raise PicardStall(f"outer source map did not settle in {outer_passes} passes")

    new_state = SimState(state.t + dt, phi_new, mu_new, pi_new, u_new, p_new, n_new)
    record = DiagnosticsRecord(
        step=step_index,
        t=new_state.t,
        energy=free_energy(phi_new, params),
        energy_balance_residual=energy_balance_residual(state, new_state, dt,
                                                        params, st_field=st_field),
        phi_min=phi_new.min(), phi_max=phi_new.max(),
        p_min=p_new.min(), p_max=p_new.max(),
        n_min=n_new.min(), n_max=n_new.max(),
        l2_u=float(np.sqrt(max(face_inner(u_new, u_new), 0.0))),
        div_residual=div_residual,
        mass_phi=integrate(phi_new),
        mass_ledger_residual=_mass_ledger_residual(
            state, phi_new, mu_new, u_used, st_field, dt, params, advection),
        picard_iters=len(increments),
        newton_iters=newton_total,
        picard_increments=increments,
    )
    return new_state, record


def initial_state(grid: GridSpec, phi0: ScalarField, p0: ScalarField,
                  params: physics.ModelParams) -> SimState:
    """Build the start state; phi is pulled into the potential domain and
    mu starts from the constitutive relation (or from zero when delta > 0)."""
    from .cahn_hilliard import initial_mu

    kmin = params.potential.clamp_margin
    phi = ScalarField(grid, np.clip(phi0.data, kmin, 1.0 - kmin))
    if params.delta > 0:
        mu = ScalarField.full(grid, 0.0)
    else:
        mu = initial_mu(phi, params)
    return SimState(0.0, phi, mu, ScalarField.full(grid, 0.0),
                    FaceVectorField.zeros(grid), p0.copy(), ScalarField.full(grid, 1.0))


def run(cfg) -> tuple[SimState, list[DiagnosticsRecord]]:
    """Fixed-dt time loop from t = 0 to t_final, with CSV/snapshot output.

    cfg is a RunConfig (or anything with the same attributes).  Aborts with
    step context wrapped in StepError on any failure.
    """
    if cfg.mode not in ("full", "decoupled"):
        raise ValueError(f"run() handles modes 'full' and 'decoupled', not {cfg.mode!r}")
    grid = cfg.grid
    params = cfg.params
    phi0 = cfg.phi0.build(grid)
    p0 = cfg.p0.build(grid)
    errors = physics.validate(params, phi0, p0)
    if errors:
        raise ValueError("; ".join(errors))

    state = initial_state(grid, phi0, p0, params)
    records: list[DiagnosticsRecord] = []
    nsteps = int(round(cfg.t_final / cfg.dt)) if cfg.t_final > 0 else 0

    writer = None
    if cfg.output_dir:
        os.makedirs(cfg.output_dir, exist_ok=True)
        writer = open(os.path.join(cfg.output_dir, "diagnostics.csv"), "w")
        writer.write(CSV_HEADER + "\n")

    try:
        for k in range(1, nsteps + 1):
            try:
                state, rec = step(state, cfg.dt, params, mode=cfg.mode, step_index=k,
                                  outer_iterate=getattr(cfg, "outer_iterate", False))
            except Exception as exc:
                raise StepError(f"step {k} at t = {state.t + cfg.dt}: {exc}") from exc
            records.append(rec)
            if writer is not None:
                writer.write(rec.csv_row() + "\n")
            if cfg.output_dir and cfg.snapshot_every > 0 and k % cfg.snapshot_every == 0:
                for name, f in (("phi", state.phi), ("mu", state.mu), ("pi", state.pi),
                                ("p", state.p), ("n", state.n)):
                    write_snapshot(f, os.path.join(cfg.output_dir, f"{name}_{k}.dat"),
                                   state.t)
    finally:
        if writer is not None:
            writer.close()
    return state, records
