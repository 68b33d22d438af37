from dataclasses import replace

import numpy as np
import pytest
import scipy.linalg

from h2xlda.exceptions import StateError
from h2xlda.mesh import mirror_permutation
from h2xlda.operators import dual_norm
from h2xlda.scf import (
    OrbitalState,
    SCFConfig,
    build_system,
    effective_rhs,
    energy_correction,
    energy_gradient,
    euler_lagrange_residuals,
    helmholtz_update,
    initial_guess,
    linear_ground_state,
    scf_solve,
    total_energy,
    transfer_state,
)
from h2xlda.tests.conftest import configured


def s_norm2(system, c):
    return float(c @ (system.S @ c))


def dense_ground_state(system):
    """Lowest eigenpair of (T + M_nuc) c = eps S c on the interior vertices."""
    free = system.free
    A = (system.T + system.M_nuc).submatrix(free).toarray()
    B = system.S.submatrix(free).toarray()
    w, V = scipy.linalg.eigh(A, B)
    phi = np.zeros(system.mesh.n_vertices)
    phi[free] = V[:, 0]
    return w[0], phi


def random_direction(system, rng):
    d = rng.standard_normal(system.mesh.n_vertices)
    d[system.boundary] = 0.0
    return d / np.sqrt(s_norm2(system, d))


def test_scf_config_validation():
    with pytest.raises(ValueError):
        SCFConfig(beta=0.0)
    with pytest.raises(ValueError):
        SCFConfig(init="ferro")
    with pytest.raises(ValueError):
        SCFConfig(energy_update="newton")
    assert SCFConfig(tol_energy=1e-7).residual_tol == pytest.approx(1e-6)
    assert SCFConfig(tol_residual=1e-3).residual_tol == 1e-3


def test_scf_config_from_settings(tiny_settings):
    tiny_settings.configure({"scf": {"beta": 0.3, "init": "antiferro"}})
    cfg = SCFConfig.from_settings(max_iterations=7)
    assert cfg.beta == 0.3
    assert cfg.init == "antiferro"
    assert cfg.max_iterations == 7
    assert cfg.tol_energy == 1e-6


@pytest.mark.parametrize("kind", ["delocalized", "antiferro", "ionic_left", "ionic_right"])
def test_initial_guess_is_normalised(tiny_system, kind):
    state = initial_guess(tiny_system, kind)
    for c, eps in zip(state.coefficients, state.eps):
        assert s_norm2(tiny_system, c) == pytest.approx(1.0, abs=1e-12)
        assert not np.any(c[tiny_system.boundary])
        assert eps <= -0.01
    assert state.alpha == tiny_system.alpha
    assert state.R == tiny_system.R


def test_initial_guess_kinds(tiny_system):
    x = tiny_system.mesh.vertices[:, 0]
    w = tiny_system.lumped

    def centroid(c):
        return float((w * c * c) @ x) / float(w @ (c * c))

    delocalized = initial_guess(tiny_system, "delocalized")
    assert np.array_equal(delocalized.c_plus, delocalized.c_minus)
    antiferro = initial_guess(tiny_system, "antiferro")
    assert centroid(antiferro.c_plus) > 0
    assert centroid(antiferro.c_minus) < 0
    left = initial_guess(tiny_system, "ionic_left")
    assert np.array_equal(left.c_plus, left.c_minus)
    assert np.array_equal(left.c_plus, antiferro.c_plus)


def test_initial_guess_errors(tiny_system):
    with pytest.raises(ValueError):
        initial_guess(tiny_system, "custom")
    with pytest.raises(ValueError):
        initial_guess(tiny_system, "triplet")
    with pytest.raises(ValueError):
        initial_guess(tiny_system, "antiferro", zeta=0.0)
    with pytest.raises(StateError):
        zero = np.zeros(tiny_system.mesh.n_vertices)
        initial_guess(tiny_system, "custom", custom=(zero, zero))


def test_custom_initial_guess(tiny_system, rng):
    a = np.abs(rng.standard_normal(tiny_system.mesh.n_vertices))
    state = initial_guess(tiny_system, "custom", custom=(a, 2 * a))
    assert np.allclose(state.c_plus, state.c_minus, rtol=1e-14)
    assert s_norm2(tiny_system, state.c_plus) == pytest.approx(1.0)


def test_orbital_state_helpers(tiny_system):
    state = initial_guess(tiny_system, "antiferro")
    swapped = state.swapped()
    assert np.array_equal(swapped.c_plus, state.c_minus)
    assert swapped.eps == state.eps[::-1]
    assert np.array_equal(swapped.density, state.density)
    copied = state.copy()
    copied.c_plus[:] = 0.0
    assert np.any(state.c_plus)


def test_effective_rhs_spin_symmetry(tiny_system):
    state = initial_guess(tiny_system, "antiferro")
    v_ee = tiny_system.hartree_potential(tiny_system.charges(state))
    f_plus, f_minus = effective_rhs(tiny_system, state, v_ee)
    g_plus, g_minus = effective_rhs(tiny_system, state.swapped(), v_ee)
    assert np.array_equal(f_plus, g_minus)
    assert np.array_equal(f_minus, g_plus)
    assert not np.any(f_plus[tiny_system.boundary])


def test_effective_rhs_is_affine_in_alpha(tiny_system):
    state = initial_guess(tiny_system, "antiferro")
    v_ee = tiny_system.hartree_potential(tiny_system.charges(state))
    loads = [effective_rhs(tiny_system.with_alpha(a), state, v_ee)[0] for a in (0.0, 1.0, 2.0)]
    scale = np.abs(loads[2]).max()
    assert np.abs(loads[0] - 2 * loads[1] + loads[2]).max() <= 1e-12 * scale
    # exchange adds a load along psi
    assert float((loads[1] - loads[0]) @ state.c_plus) > 0


def test_with_alpha_shares_operators(tiny_system):
    other = tiny_system.with_alpha(2.0)
    assert other.alpha == 2.0
    assert other.T is tiny_system.T
    assert tiny_system.alpha == 0.93
    with pytest.raises(ValueError):
        tiny_system.with_alpha(-1.0)


def test_total_energy_terms(tiny_system, tiny_linear_system):
    state = initial_guess(tiny_system, "antiferro")
    terms = total_energy(tiny_system, state)
    assert terms.kinetic > 0
    assert terms.nuclear < 0
    assert terms.hartree > 0
    assert terms.exchange < 0
    assert terms.total == pytest.approx(terms.kinetic + terms.nuclear + terms.hartree + terms.exchange)
    assert set(terms.as_dict()) == {"kinetic", "nuclear", "hartree", "exchange", "total"}
    assert total_energy(tiny_linear_system, state).hartree == 0.0


def test_total_energy_swap_invariance(tiny_system):
    state = initial_guess(tiny_system, "antiferro")
    assert total_energy(tiny_system, state.swapped()).total == pytest.approx(total_energy(tiny_system, state).total, rel=1e-12)


def test_total_energy_is_affine_in_alpha(tiny_system):
    state = initial_guess(tiny_system, "antiferro")
    v_ee = tiny_system.hartree_potential(tiny_system.charges(state))
    e0, e1, e2 = (total_energy(tiny_system.with_alpha(a), state, v_ee).total for a in (0.0, 1.0, 2.0))
    assert e0 - 2 * e1 + e2 == pytest.approx(0.0, abs=1e-12 * abs(e0))
    assert e1 < e0


def test_energy_gradient_matches_finite_differences(tiny_system, rng):
    state = initial_guess(tiny_system, "antiferro")
    v_ee = tiny_system.hartree_potential(tiny_system.charges(state))
    g_plus, g_minus = energy_gradient(tiny_system, state, v_ee)
    d = random_direction(tiny_system, rng)
    t = 1e-5

    def energy(c_plus, c_minus):
        return total_energy(tiny_system, OrbitalState(c_plus, c_minus, 0.0, 0.0, 0.93, 1.0)).total

    slope_plus = (energy(state.c_plus + t * d, state.c_minus) - energy(state.c_plus - t * d, state.c_minus)) / (2 * t)
    slope_minus = (energy(state.c_plus, state.c_minus + t * d) - energy(state.c_plus, state.c_minus - t * d)) / (2 * t)
    assert slope_plus == pytest.approx(float(g_plus @ d), rel=1e-5)
    assert slope_minus == pytest.approx(float(g_minus @ d), rel=1e-5)


def test_helmholtz_update_zero_load(tiny_linear_system):
    zero = np.zeros(tiny_linear_system.mesh.n_vertices)
    c, report, clamped = helmholtz_update(tiny_linear_system, -0.5, zero)
    assert not np.any(c)
    assert report.iterations == 0
    assert not clamped


def test_helmholtz_update_solves_and_clamps(tiny_linear_system, rng):
    system = tiny_linear_system
    f = random_direction(system, rng)
    c, report, clamped = helmholtz_update(system, -0.3, f)
    residual = system.T @ c + 0.3 * (system.S @ c) - f
    assert report.converged
    assert np.abs(residual[system.free]).max() <= 1e-8 * np.abs(f).max()
    assert not np.any(c[system.boundary])

    _, _, clamped = helmholtz_update(system, 0.2, f)
    assert clamped


def test_energy_correction_vanishes_at_fixed_point(rng):
    S = np.diag(rng.uniform(0.5, 1.5, size=20))
    phi = rng.standard_normal(20)
    f = rng.standard_normal(20)
    assert energy_correction(phi, phi, f, S) == 0.0
    with pytest.raises(StateError):
        energy_correction(phi, np.zeros(20), f, S)


def test_energy_correction_is_second_order(tiny_linear_system):
    """Starting from the exact orbital, one corrected step leaves an O(eta^2) energy error."""
    system = tiny_linear_system
    eps_star, phi = dense_ground_state(system)
    assert eps_star < -0.05
    f = -(system.M_nuc @ phi)
    f[system.boundary] = 0.0
    for eta in (1e-3, -1e-3):
        eps = eps_star + eta
        phi_tilde, _, clamped = helmholtz_update(system, eps, f)
        assert not clamped
        eps_1 = eps + energy_correction(phi, phi_tilde, f, system.S)
        assert abs(eps_1 - eps_star) <= abs(eta) / 10


def test_linear_ground_state_matches_dense_solver(tiny_linear_system):
    eps_star, phi = dense_ground_state(tiny_linear_system)
    c, eps, rayleigh, iterations = linear_ground_state(tiny_linear_system, tol=1e-11, max_iterations=500)
    assert iterations < 500
    assert eps == pytest.approx(eps_star, abs=1e-6)
    assert rayleigh == pytest.approx(eps_star, abs=1e-6)
    assert abs(float(c @ (tiny_linear_system.S @ phi))) == pytest.approx(1.0, abs=1e-5)


def test_transfer_state_onto_the_same_mesh(tiny_system):
    state = initial_guess(tiny_system, "antiferro")
    other = tiny_system.with_alpha(1.5)
    moved = transfer_state(state, tiny_system, other)
    assert np.allclose(moved.c_plus, state.c_plus, atol=1e-14)
    assert moved.alpha == 1.5


def test_restricted_run_keeps_spins_equal(tiny_system):
    state, report = scf_solve(tiny_system, SCFConfig(init="antiferro", restricted=True, max_iterations=3))
    assert np.array_equal(state.c_plus, state.c_minus)
    assert report.iterations == 3
    assert len(report.energy_history) == 4


def test_unconverged_run_reports(tiny_system):
    state, report = scf_solve(tiny_system, SCFConfig(max_iterations=2, tol_energy=1e-14))
    assert not report.converged
    assert report.iterations == 2
    assert all(np.isfinite(report.residuals))
    assert set(report.as_dict()) >= {"iterations", "energy_history", "residuals", "converged"}
    assert s_norm2(tiny_system, state.c_plus) == pytest.approx(1.0, abs=1e-10)


@pytest.mark.slow
def test_alpha_zero_converges_to_the_symmetric_state(alpha_zero_state):
    system, state, report = alpha_zero_state
    diff = state.c_plus - state.c_minus
    assert np.sqrt(s_norm2(system, diff)) < 1e-3
    assert abs(report.energy_history[-1] - report.energy_history[-2]) < 1e-9
    assert max(report.residuals) < 1e-8
    assert state.eps_plus == pytest.approx(state.eps_minus, abs=1e-5)
    assert state.eps_plus < 0


@pytest.mark.slow
def test_converged_state_is_stationary(alpha_zero_state):
    system, state, _ = alpha_zero_state
    v_ee = system.hartree_potential(system.charges(state))
    assert max(euler_lagrange_residuals(system, state, v_ee)) < 1e-7
    # restarting from a fixed point stops almost at once
    again, report = scf_solve(system, SCFConfig(tol_energy=1e-9, max_iterations=50), initial=state)
    assert report.converged
    assert report.iterations <= 5
    assert total_energy(system, again).total == pytest.approx(total_energy(system, state).total, abs=1e-8)


def test_reflection_pairs_the_ionic_guesses(tiny_system):
    perm = mirror_permutation(tiny_system.mesh)
    assert perm is not None
    left = initial_guess(tiny_system, "ionic_left")
    right = initial_guess(tiny_system, "ionic_right")
    assert np.allclose(left.mirrored(perm).c_plus, right.c_plus, atol=1e-12)
    E_left = total_energy(tiny_system, left, rtol=1e-12).total
    E_right = total_energy(tiny_system, right, rtol=1e-12).total
    assert E_left == pytest.approx(E_right, abs=1e-8)


@pytest.mark.slow
def test_reflected_ionic_state_is_a_solution(tiny_system):
    """Reflecting a converged ionic_left state gives an ionic_right solution of equal energy."""
    system = tiny_system
    state, report = scf_solve(system, SCFConfig(init="ionic_left", tol_energy=1e-9, max_iterations=400))
    assert report.converged
    perm = mirror_permutation(system.mesh)
    reflected = state.mirrored(perm)
    E = total_energy(system, state, rtol=1e-12).total
    assert total_energy(system, reflected, rtol=1e-12).total == pytest.approx(E, abs=1e-8)
    v_ee = system.hartree_potential(system.charges(reflected), rtol=1e-12)
    assert max(euler_lagrange_residuals(system, reflected, v_ee)) < 1e-7


@pytest.mark.slow
def test_gradient_vanishes_on_the_tangent_space(alpha_zero_state, rng):
    """Central differences along S-orthogonal directions agree with the gradient at a converged state."""
    system, state, _ = alpha_zero_state
    tol_energy = 1e-9
    v_ee = system.hartree_potential(system.charges(state), rtol=1e-12)
    gradients = energy_gradient(system, state, v_ee)

    def tangent(c):
        d = random_direction(system, rng)
        d = d - c * float(c @ (system.S @ d))
        return d / np.sqrt(s_norm2(system, d))

    def energy(c_plus, c_minus):
        return total_energy(system, OrbitalState(c_plus, c_minus, *state.eps, state.alpha, state.R), rtol=1e-12).total

    # dE/dc carries a factor 2 against the Euler-Lagrange residual
    for g, c in zip(gradients, state.coefficients):
        projected = g - (system.S @ c) * float(c @ g)
        assert dual_norm(projected, system.lumped, system.free) < 2 * 10 * tol_energy

    scale = max(dual_norm(g, system.lumped, system.free) for g in gradients)
    t = 1e-5
    for _ in range(20):
        d_plus, d_minus = tangent(state.c_plus), tangent(state.c_minus)
        slope = (
            energy(state.c_plus + t * d_plus, state.c_minus + t * d_minus)
            - energy(state.c_plus - t * d_plus, state.c_minus - t * d_minus)
        ) / (2 * t)
        exact = float(gradients[0] @ d_plus + gradients[1] @ d_minus)
        assert abs(slope - exact) < 1e-4 * scale


@pytest.mark.slow
def test_alpha_zero_every_init_reaches_the_symmetric_state(alpha_zero_state):
    """At alpha = 0 the functional has a single minimiser, whatever the starting guess."""
    system = alpha_zero_state[0]
    cfg = SCFConfig(tol_energy=1e-9, max_iterations=400, init="delocalized")
    reference, report = scf_solve(system, cfg)
    assert report.converged
    E_ref = total_energy(system, reference).total
    for init in ("antiferro", "ionic_left", "ionic_right"):
        state, report = scf_solve(system, replace(cfg, init=init))
        assert report.converged, init
        assert np.sqrt(s_norm2(system, state.c_plus - state.c_minus)) < 1e-3
        assert total_energy(system, state).total == pytest.approx(E_ref, abs=1e-5)


@pytest.mark.acceptance
def test_hydrogen_atom_energy():
    """A single nucleus on the default mesh binds at -1/2 hartree."""
    system = configured({}, build_system, 1.0, 0.0, include_hartree=False, centers=((0.0, 0.0, 0.0),))
    _, eps, _, _ = linear_ground_state(system, tol=1e-9)
    assert eps == pytest.approx(-0.5, abs=0.05)
