import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hermite_flow.basis import HermiteExpansion
from hermite_flow.evolution import (BrownianPath, SolverError, ensemble_mean, solve_pde, solve_spde,
                                    step_deterministic, step_stochastic, translation_oracle)
from hermite_flow.harness import heat_closed_form
from hermite_flow.operators import OperatorSpec, assemble
from strategies import expansions

h0 = HermiteExpansion.basis((0,))
HEAT = OperatorSpec.adjoint(1, [0])


def test_step_with_zero_operator():
    u = np.array([1.0, -2.0, 0.5])
    for scheme in ("explicit-euler", "implicit-euler", "crank-nicolson"):
        np.testing.assert_array_equal(step_deterministic(np.zeros((3, 3)), u, 0.1, scheme), u)


def test_explicit_euler_scalar_ode():
    c, dt = -0.6, 0.05
    u = np.array([1.0, 2.0])
    np.testing.assert_allclose(step_deterministic(c * np.eye(2), u, dt, "explicit-euler"), u * (1 + c * dt))
    np.testing.assert_allclose(step_deterministic(c * np.eye(2), u, dt, "implicit-euler"), u / (1 - c * dt))


def test_singular_solve_raises():
    with pytest.raises(SolverError):
        step_deterministic(np.eye(2) * 10.0, np.ones(2), 0.1, "implicit-euler")


def test_bad_dt_and_scheme():
    with pytest.raises(ValueError):
        step_deterministic(np.eye(2), np.ones(2), -0.1)
    with pytest.raises(ValueError):
        step_deterministic(np.eye(2), np.ones(2), 0.1, "rk4")


def test_heat_crank_nicolson_against_closed_form():
    u = solve_pde(HEAT, h0, 1.0, 1e-3, "crank-nicolson", N=32).final
    # closed form at the origin: pi^{-1/4} / sqrt(2)
    assert u(0.0) == pytest.approx(np.pi ** -0.25 / np.sqrt(2), abs=1e-6)
    x = np.linspace(-4, 4, 401)
    assert np.max(np.abs(u(x) - heat_closed_form(1.0, x))) < 1e-4


def test_adjoint_and_standard_heat_agree():
    a = solve_pde(HEAT, h0, 0.5, 1e-2, N=16).final
    b = solve_pde(OperatorSpec.standard(1), h0, 0.5, 1e-2, N=16).final
    assert np.max(np.abs((a - b).coeffs)) < 1e-12


def test_zero_initial_data():
    traj = solve_pde(HEAT, HermiteExpansion.zeros(1, 8), 0.2, 0.01)
    assert not np.any(traj.final.coeffs)


def test_snapshots_keep_truncation(tmp_path):
    traj = solve_pde(HEAT, h0, 0.1, 0.01, N=10, snapshot_times=[0.0, 0.05])
    np.testing.assert_allclose(traj.times, [0.0, 0.05, 0.1])
    assert {s.N for s in traj.snapshots} == {10}
    assert traj.tail_norm >= 0.0
    traj.write_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "time,n,coeff" and len(lines) == 1 + 3 * 11


def test_T_must_be_multiple_of_dt():
    with pytest.raises(ValueError):
        solve_pde(HEAT, h0, 0.105, 0.01)


def test_stochastic_step_without_noise_is_deterministic():
    L, A = assemble(OperatorSpec.standard("(add 1 (mul 0.5 (sin x1)))", ["x1"]), 8)
    u = np.linspace(1, 0, 9)
    det = step_deterministic(L, u, 0.01)
    sto = step_stochastic(L, [np.zeros((9, 9))], u, 0.01, [0.3])
    np.testing.assert_allclose(sto, det, rtol=1e-14, atol=1e-15)


def test_multiplicative_noise_recursion():
    L, A = assemble(OperatorSpec.standard(0, h=[1]), 6)
    Y = np.arange(1.0, 8.0)
    np.testing.assert_allclose(step_stochastic(L, A, Y, 0.01, [0.2]), Y * 1.2, rtol=1e-14)


def test_brownian_path_reproducible_and_scaled():
    a = BrownianPath.sample(7, 2, 1e-2, 500, index=3)
    b = BrownianPath.sample(7, 2, 1e-2, 500, index=3)
    np.testing.assert_array_equal(a.increments, b.increments)
    assert not np.array_equal(a.increments, BrownianPath.sample(7, 2, 1e-2, 500, index=4).increments)
    big = BrownianPath.sample(1, 1, 1e-2, 40000)
    assert np.var(big.increments) == pytest.approx(1e-2, rel=0.03)
    c = a.coarsen(4)
    np.testing.assert_allclose(c.at_step(c.steps), a.at_step(a.steps))
    assert c.dt == pytest.approx(4e-2)


def test_same_path_bit_identical():
    spec = OperatorSpec.adjoint("(add 1 (mul 0.5 (sin x1)))", ["(neg x1)"])
    path = BrownianPath.sample(11, 1, 1e-2, 50)
    a = solve_spde(spec, h0, path, N=16).final.coeffs
    b = solve_spde(spec, h0, path, N=16).final.coeffs
    assert a.tobytes() == b.tobytes()


@given(expansions(max_N=12, N=12), expansions(max_N=12, N=12), st.integers(0, 1000))
def test_spde_linear_in_initial_data(phi, psi, idx):
    spec = OperatorSpec.adjoint("(add 1 (mul 0.5 (sin x1)))", ["(neg x1)"])
    path = BrownianPath.sample(5, 1, 1e-2, 30, idx)
    both = solve_spde(spec, phi + psi, path).final
    split = solve_spde(spec, phi, path).final + solve_spde(spec, psi, path).final
    assert (both - split).norm0() <= 1e-10 * both.norm0() + 1e-14


def test_translation_oracle_strong_order():
    N, dt, K = 32, 1e-3, 500
    fine_sq = coarse_sq = 0.0
    for i in range(16):
        path = BrownianPath.sample(2024, 1, dt, K, i)
        exact = translation_oracle(h0, path.at_step(K), N)
        fine_sq += (solve_spde(HEAT, h0, path, N=N).final - exact).norm0() ** 2
        coarse_sq += (solve_spde(HEAT, h0, path.coarsen(4), N=N).final - exact).norm0() ** 2
    assert 1.2 <= np.sqrt(coarse_sq / fine_sq) <= 3.0


def test_translation_oracle_zero_shift():
    phi = HermiteExpansion(np.array([0.4, 0.3, -0.2]))
    assert np.max(np.abs((translation_oracle(phi, 0.0, 2) - phi).coeffs)) < 1e-13


def test_ensemble_without_noise_equals_pde():
    spec = OperatorSpec.standard(0, g=-0.5)
    phi = HermiteExpansion(np.array([1.0, 0.5, 0.25]))
    ens = ensemble_mean(spec, phi, 8, 0.5, 0.05, seed=1)
    pde = solve_pde(spec, phi, 0.5, 0.05, "crank-nicolson").final
    # identical paths: equal up to the rounding of the propagator form and the mean
    np.testing.assert_allclose(ens.mean.coeffs, pde.coeffs, rtol=1e-14)
    assert ens.pooled_stderr < 1e-15


def test_single_path_ensemble():
    ens = ensemble_mean(HEAT, h0.padded(12), 1, 0.2, 0.01, seed=9)
    single = solve_spde(HEAT, h0.padded(12), BrownianPath.sample(9, 1, 0.01, 20, 0)).final
    np.testing.assert_allclose(ens.mean.coeffs, single.coeffs, rtol=1e-13, atol=1e-15)


def test_ensemble_thread_count_bit_identical():
    a = ensemble_mean(HEAT, h0.padded(16), 150, 0.2, 0.01, seed=3, threads=1)
    b = ensemble_mean(HEAT, h0.padded(16), 150, 0.2, 0.01, seed=3, threads=4)
    assert a.mean.coeffs.tobytes() == b.mean.coeffs.tobytes()
    assert a.stderr.tobytes() == b.stderr.tobytes()


def test_ensemble_mean_matches_pde(tmp_path):
    ens = ensemble_mean(HEAT, h0.padded(24), 300, 1.0, 1e-2, seed=17)
    pde = solve_pde(HEAT, h0.padded(24), 1.0, 1e-2).final
    assert (ens.mean - pde).norm0() <= 3 * ens.pooled_stderr
    ens.write_csv(tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text().startswith("n,mean,stderr")
