import numpy as np
import pytest

from tumorsim import physics
from tumorsim.fields import FaceVectorField, GridSpec, ScalarField
from tumorsim.transport import CFLViolation, admissible_dt, transport_step

import oracles


def _uniform_u(grid, ax, ay):
    return FaceVectorField(grid,
                           np.full((grid.ny, grid.nx + 1), ax),
                           np.full((grid.ny + 1, grid.nx), ay))


def test_no_velocity_no_reaction_is_identity():
    g = GridSpec(8, 8)
    prm = physics.ModelParams(lambda3=0.0)
    rng = np.random.default_rng(0)
    p = ScalarField(g, rng.uniform(0, 1, g.shape))
    out = transport_step(p, FaceVectorField.zeros(g), ScalarField.full(g, 0.0),
                         ScalarField.full(g, 0.0), 1e-3, prm)
    np.testing.assert_array_equal(out.data, p.data)


def test_saturated_state_is_stationary():
    # P = phi = n = 1 with all rates zero balances growth exactly
    g = GridSpec(8, 8)
    prm = physics.ModelParams(lambda1=0.0, lambda2=0.0, lambda3=0.0)
    p = ScalarField.full(g, 1.0)
    out = transport_step(p, FaceVectorField.zeros(g), ScalarField.full(g, 1.0),
                         ScalarField.full(g, 1.0), 1e-3, prm)
    np.testing.assert_allclose(out.data, 1.0, atol=1e-15)


def test_matches_loop_oracle_ten_steps():
    g = GridSpec(16, 16)
    prm = physics.ModelParams()
    rng = np.random.default_rng(42)
    p = rng.uniform(0, 1, g.shape)
    phi = rng.uniform(0, 1, g.shape)
    n = rng.uniform(0, 1, g.shape)
    u = FaceVectorField(g, 0.5 * rng.standard_normal((g.ny, g.nx + 1)),
                        0.5 * rng.standard_normal((g.ny + 1, g.nx)))
    dt = 1e-3
    got = ScalarField(g, p.copy())
    want = p.copy()
    for _ in range(10):
        got = transport_step(got, u, ScalarField(g, phi), ScalarField(g, n), dt, prm)
        want = oracles.transport_reference(want, u.x_faces, u.y_faces, phi, n,
                                           dt, g.hx, g.hy, prm)
    np.testing.assert_allclose(got.data, want, rtol=0, atol=1e-14)


def test_matches_loop_oracle_with_delta_diffusion():
    g = GridSpec(8, 8)
    prm = physics.ModelParams(delta=0.01)
    rng = np.random.default_rng(7)
    p = rng.uniform(0, 1, g.shape)
    phi = rng.uniform(0, 1, g.shape)
    n = rng.uniform(0, 1, g.shape)
    u = _uniform_u(g, 0.2, -0.1)
    dt = 2e-4
    got = transport_step(ScalarField(g, p), u, ScalarField(g, phi),
                         ScalarField(g, n), dt, prm)
    want = oracles.transport_reference(p, u.x_faces, u.y_faces, phi, n,
                                       dt, g.hx, g.hy, prm)
    np.testing.assert_allclose(got.data, want, atol=1e-14)


def _model_like_velocity(grid, rng):
    """Smooth velocity with O(1) divergence, as the pressure solve produces."""
    from tumorsim.fields import BoundarySpec
    from tumorsim.flow import solve_darcy

    X, Y = grid.cell_centers()
    mu = ScalarField(grid, 0.3 * np.sin(np.pi * X) * np.sin(np.pi * Y)
                     * rng.uniform(0.5, 1.5))
    phi = ScalarField(grid, 0.5 + 0.3 * np.cos(np.pi * X) * np.cos(np.pi * Y))
    st = ScalarField(grid, 0.5 * np.sin(2 * np.pi * X) * rng.uniform(-1, 1))
    return solve_darcy(mu, phi, st, BoundarySpec.default()).u


def test_nonnegativity_preserved():
    # velocities with bounded divergence, as the coupled model produces
    g = GridSpec(12, 12)
    prm = physics.ModelParams()
    rng = np.random.default_rng(3)
    for trial in range(6):
        p = ScalarField(g, rng.uniform(0, 1, g.shape))
        phi = ScalarField(g, rng.uniform(0, 1, g.shape))
        n = ScalarField(g, rng.uniform(0, 1, g.shape))
        u = _model_like_velocity(g, rng)
        dt = min(0.9 * admissible_dt(u, prm), 5e-2)
        out = transport_step(p, u, phi, n, dt, prm)
        assert out.data.min() >= 0.0


def test_upper_bound_with_slack():
    g = GridSpec(12, 12)
    prm = physics.ModelParams()
    rng = np.random.default_rng(11)
    for trial in range(6):
        p = ScalarField(g, rng.uniform(0.5, 1.0, g.shape))
        phi = ScalarField(g, rng.uniform(0, 1, g.shape))
        n = ScalarField(g, rng.uniform(0, 1, g.shape))
        u = _model_like_velocity(g, rng)
        dt = min(0.9 * admissible_dt(u, prm), 1e-3)
        out = transport_step(p, u, phi, n, dt, prm)
        assert out.data.max() <= 1.0 + 10.0 * dt**2


def test_inflow_rule_mass_accounting():
    # uniform rightward wind: no mass enters at the left (inflow) wall;
    # the change in total P equals reaction plus the outflow at the right
    from tumorsim.fields import integrate

    g = GridSpec(10, 10)
    prm = physics.ModelParams(lambda1=0.3, lambda2=0.2, lambda3=0.4)
    rng = np.random.default_rng(19)
    p = ScalarField(g, rng.uniform(0.2, 0.8, g.shape))
    phi = ScalarField(g, rng.uniform(0.2, 0.8, g.shape))
    n = ScalarField(g, rng.uniform(0.2, 0.8, g.shape))
    a = 0.7
    u = _uniform_u(g, a, 0.0)  # divergence-free
    dt = 0.9 * admissible_dt(u, prm)
    out = transport_step(p, u, phi, n, dt, prm)

    st = physics.source_st(n.data, p.data, phi.data, prm)
    h = physics.heaviside_smooth(prm.n_N - n.data, prm.sigmaH)
    reaction = p.data * (-st + phi.data * (n.data - prm.lambda1 - prm.lambda2 * h))
    outflow = a * p.data[:, -1].sum() * g.hy  # upwind value at the right wall
    change = integrate(out) - integrate(p)
    expect = dt * (reaction.sum() * g.cell_volume - outflow)
    assert change == pytest.approx(expect, abs=1e-13)


def test_cfl_violation_reports_admissible_dt():
    g = GridSpec(8, 8)
    prm = physics.ModelParams()
    u = _uniform_u(g, 2.0, 0.0)
    dt_ok = admissible_dt(u, prm)
    with pytest.raises(CFLViolation) as err:
        transport_step(ScalarField.full(g, 0.5), u, ScalarField.full(g, 0.5),
                       ScalarField.full(g, 0.5), 2.0 * dt_ok, prm)
    assert str(dt_ok) in str(err.value)


def test_delta_tightens_admissible_dt():
    g = GridSpec(8, 8)
    u = _uniform_u(g, 1e-9, 0.0)
    loose = admissible_dt(u, physics.ModelParams(delta=0.0))
    tight = admissible_dt(u, physics.ModelParams(delta=0.2))
    assert tight < loose
    expected = 0.5 * min(g.hx, g.hy) ** 2 / (4 * 0.2)
    assert tight == pytest.approx(expected)
