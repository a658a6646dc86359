import numpy as np
import pytest

from tumorsim import physics
from tumorsim.cahn_hilliard import (
    CHStepInput,
    advection_term,
    ch_step,
    initial_mu,
    neg_laplacian_matrix,
)
from tumorsim.fields import (
    BoundaryCondition,
    FaceVectorField,
    GridSpec,
    ScalarField,
    laplacian,
)

import oracles


def _inputs(grid, phi, mu=None, u=None, st=None, dt=1e-3, params=None, advection="flux"):
    params = params or physics.ModelParams()
    mu = mu if mu is not None else ScalarField.full(grid, 0.0)
    u = u if u is not None else FaceVectorField.zeros(grid)
    st = st if st is not None else ScalarField.full(grid, 0.0)
    return CHStepInput(phi, mu, u, st, dt, params, params.potential, advection)


def test_sparse_matrix_matches_matrix_free():
    g = GridSpec(6, 5, lx=1.2, ly=0.8)
    rng = np.random.default_rng(0)
    f = rng.random(g.shape)
    for bc in (BoundaryCondition.DIRICHLET_ZERO, BoundaryCondition.NEUMANN_ZERO):
        L = neg_laplacian_matrix(g, bc)
        ref = -laplacian(ScalarField(g, f), bc).data
        np.testing.assert_allclose((L @ f.ravel()).reshape(g.shape), ref, atol=1e-12)


def test_half_is_a_fixed_point():
    # F'(1/2) = 0 for any theta, and mu = 0 matches its wall value
    g = GridSpec(8, 8)
    for theta in (0.0, 2.5):
        params = physics.ModelParams(theta=theta)
        phi = ScalarField.full(g, 0.5)
        phi_new, mu_new, rep = ch_step(_inputs(g, phi, params=params))
        assert rep.converged
        assert np.abs(phi_new.data - 0.5).max() < 1e-12
        assert np.abs(mu_new.data).max() < 1e-12


def test_matches_dense_newton_oracle_with_delta():
    g = GridSpec(8, 8)
    params = physics.ModelParams(delta=0.1, theta=2.5)
    rng = np.random.default_rng(77)
    phi = ScalarField(g, 0.4 + 0.2 * rng.random(g.shape))
    mu = ScalarField(g, 0.1 * rng.standard_normal(g.shape))
    u = FaceVectorField(g, 0.3 * rng.standard_normal((g.ny, g.nx + 1)),
                        0.3 * rng.standard_normal((g.ny + 1, g.nx)))
    st = ScalarField(g, 0.2 * rng.standard_normal(g.shape))
    dt = 1e-3
    for form in ("flux", "gradient"):
        phi_new, mu_new, _ = ch_step(_inputs(g, phi, mu, u, st, dt, params, form))
        ref_phi, ref_mu = oracles.ch_step_reference(
            phi.data, mu.data, u.x_faces, u.y_faces, st.data, dt,
            g.hx, g.hy, params, params.theta, form=form)
        assert np.abs(phi_new.data - ref_phi).max() < 1e-8
        assert np.abs(mu_new.data - ref_mu).max() < 1e-8


def test_update_shrinks_linearly_with_dt():
    # smooth data and dt well below the fastest relaxation time, so the
    # one-step change is in the linear-in-dt regime
    g = GridSpec(8, 8)
    params = physics.ModelParams(eps=0.3)
    phi = ScalarField.from_function(
        g, lambda x, y: 0.5 + 0.05 * np.cos(np.pi * x) * np.cos(np.pi * y))
    mu = initial_mu(phi, params)
    changes = []
    for dt in (5e-5, 2.5e-5, 1.25e-5):
        phi_new, _, _ = ch_step(_inputs(g, phi, mu, dt=dt, params=params))
        changes.append(np.abs(phi_new.data - phi.data).max())
    assert 1.7 <= changes[0] / changes[1] <= 2.3
    assert 1.7 <= changes[1] / changes[2] <= 2.3


def test_interior_confinement():
    # data hugging the walls of [0,1] stays strictly inside
    g = GridSpec(8, 8)
    params = physics.ModelParams(theta=2.5)
    rng = np.random.default_rng(13)
    phi = ScalarField(g, np.clip(0.5 + 0.49 * rng.standard_normal(g.shape), 1e-6, 1 - 1e-6))
    mu = initial_mu(phi, params)
    phi_new, _, _ = ch_step(_inputs(g, phi, mu, dt=1e-4, params=params))
    assert phi_new.data.min() > 0.0
    assert phi_new.data.max() < 1.0


def test_energy_decay_decoupled():
    g = GridSpec(16, 16)
    params = physics.ModelParams(theta=2.5, eps=0.1)
    rng = np.random.default_rng(21)
    phi = ScalarField(g, 0.5 + 0.05 * rng.standard_normal(g.shape))
    phi = ScalarField(g, np.clip(phi.data, 0.05, 0.95))
    mu = initial_mu(phi, params)

    from tumorsim.simulate import free_energy

    energy = free_energy(phi, params)
    for _ in range(10):
        phi, mu, _ = ch_step(_inputs(g, phi, mu, dt=1e-3, params=params))
        e_next = free_energy(phi, params)
        assert e_next <= energy + 1e-12
        energy = e_next


def test_mass_ledger_flux_form():
    # integral of the discrete update telescopes to sources and wall fluxes
    from tumorsim.fields import boundary_flux, gradient_to_faces, integrate

    g = GridSpec(10, 10)
    params = physics.ModelParams()
    rng = np.random.default_rng(3)
    phi = ScalarField(g, 0.4 + 0.2 * rng.random(g.shape))
    mu = initial_mu(phi, params)
    u = FaceVectorField(g, 0.2 * rng.standard_normal((g.ny, g.nx + 1)),
                        0.2 * rng.standard_normal((g.ny + 1, g.nx)))
    st = ScalarField(g, 0.3 * rng.standard_normal(g.shape))
    dt = 5e-4
    phi_new, mu_new, _ = ch_step(_inputs(g, phi, mu, u, st, dt, params))

    adv, src = advection_term(phi, u, st, "flux")
    vol = g.cell_volume
    budget = float(src.sum() - adv.sum()) * vol \
        + boundary_flux(gradient_to_faces(mu_new, BoundaryCondition.DIRICHLET_ZERO))
    defect = integrate(phi_new) - integrate(phi) - dt * budget
    assert abs(defect) < 10 * params.newton_tol * dt + 1e-13


def test_flux_advection_integral_is_boundary_flux():
    from tumorsim.fields import boundary_flux, face_average

    g = GridSpec(7, 6)
    rng = np.random.default_rng(4)
    phi = ScalarField(g, rng.random(g.shape))
    u = FaceVectorField(g, rng.standard_normal((g.ny, g.nx + 1)),
                        rng.standard_normal((g.ny + 1, g.nx)))
    st = ScalarField.full(g, 0.0)
    adv, _ = advection_term(phi, u, st, "flux")
    pf = face_average(phi, BoundaryCondition.NEUMANN_ZERO)
    fl = FaceVectorField(g, u.x_faces * pf.x_faces, u.y_faces * pf.y_faces)
    assert adv.sum() * g.cell_volume == pytest.approx(boundary_flux(fl), abs=1e-12)


def test_rejects_bad_input():
    g = GridSpec(8, 8)
    phi = ScalarField.full(g, 0.5)
    with pytest.raises(ValueError):
        ch_step(_inputs(g, phi, dt=0.0))
    with pytest.raises(ValueError):
        ch_step(_inputs(g, ScalarField.full(g, 0.0)))  # sits on the wall
    with pytest.raises(ValueError):
        ch_step(_inputs(g, phi, advection="upstream"))


def test_initial_mu_consistent_with_constitutive_law():
    g = GridSpec(12, 12)
    params = physics.ModelParams(theta=1.5, eps=0.7)
    rng = np.random.default_rng(2)
    phi = ScalarField(g, 0.3 + 0.4 * rng.random(g.shape))
    mu = initial_mu(phi, params)
    lap = laplacian(phi, BoundaryCondition.NEUMANN_ZERO)
    expect = -params.eps**2 * lap.data \
        + physics.potential_dC(phi.data) + physics.potential_dB(phi.data, params.potential)
    np.testing.assert_allclose(mu.data, expect, atol=1e-12)
