import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad_vec, solve_ivp

from mslmdp.dynamics import (DynamicsModel, gramian, gramian_nonsingularity_check,
                             integrate_moments, linear_model, linearize, make_model,
                             moment_ode_rhs, numerical_jacobian, reduced_quadrotor,
                             single_integrator)
from mslmdp.errors import ConfigError, EvaluationError


def random_linear(rng, n, m):
    A = rng.normal(size=(n, n)) * 0.7
    B = rng.normal(size=(n, m))
    return A, B


def pendulum(sigma=0.3):
    f = lambda x: np.array([x[1], -np.sin(x[0]) - 0.2 * x[1]])
    G = lambda x: np.array([[0.0], [1.0 + 0.1 * np.cos(x[0])]])
    return DynamicsModel(2, 1, f, G, sigma, name="pendulum")


def test_single_integrator_moments_are_brownian():
    lin = linearize(single_integrator(2, 1.0), [0.3, -0.2])
    mp = integrate_moments(lin, [0.3, -0.2], 0.01)
    np.testing.assert_allclose(mp.mu, [0.3, -0.2])
    np.testing.assert_allclose(mp.sigma, 0.01 * np.eye(2), atol=1e-15)


def test_double_integrator_gramian_closed_form():
    # int_0^t [s; 1][s 1] ds * sigma^2
    sigma, t = 0.7, 0.4
    lin = linearize(make_model("double_integrator", sigma=sigma), [0.0, 0.0])
    expected = sigma ** 2 * np.array([[t ** 3 / 3, t ** 2 / 2], [t ** 2 / 2, t]])
    np.testing.assert_allclose(gramian(lin.A, lin.B, t), expected, rtol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_moments_match_ode_integration(seed):
    rng = np.random.default_rng(seed)
    A, N = random_linear(rng, 3, 2)
    model = linear_model(A, N, sigma=0.8)
    x0 = rng.normal(size=3)
    lin = linearize(model, x0)
    t = 0.7
    mp = integrate_moments(lin, x0, t)
    y0 = np.concatenate([x0, np.zeros(9)])
    sol = solve_ivp(moment_ode_rhs(lin), (0, t), y0, rtol=1e-11, atol=1e-13)
    np.testing.assert_allclose(mp.mu, sol.y[:3, -1], rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(mp.sigma, sol.y[3:, -1].reshape(3, 3), rtol=1e-8, atol=1e-10)


def test_gramian_matches_quadrature(rng):
    A, B = random_linear(rng, 4, 2)
    from scipy.linalg import expm
    ref, _ = quad_vec(lambda s: expm(A * s) @ B @ B.T @ expm(A.T * s), 0, 0.9, epsabs=1e-13)
    np.testing.assert_allclose(gramian(A, B, 0.9), ref, rtol=1e-9, atol=1e-12)


def test_affine_offset_of_nonlinear_model():
    model = pendulum()
    x = np.array([0.8, -0.4])
    lin = linearize(model, x)
    np.testing.assert_allclose(lin.A @ x + lin.c, model.f(x), atol=1e-12)
    exact = np.array([[0.0, 1.0], [-np.cos(0.8), -0.2]])
    np.testing.assert_allclose(lin.A, exact, atol=1e-8)
    np.testing.assert_allclose(lin.B, 0.3 * model.G(x))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=2, max_size=2))
def test_numerical_jacobian_matches_analytic(x):
    f = lambda v: np.array([np.sin(v[0]) * v[1], v[0] ** 2 - np.exp(0.3 * v[1])])
    x = np.array(x)
    exact = np.array([[np.cos(x[0]) * x[1], np.sin(x[0])], [2 * x[0], -0.3 * np.exp(0.3 * x[1])]])
    np.testing.assert_allclose(numerical_jacobian(f, x), exact, atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 2.0))
def test_gramian_is_symmetric_psd(seed, t):
    A, B = random_linear(np.random.default_rng(seed), 3, 1)
    S = gramian(A, B, t)
    np.testing.assert_allclose(S, S.T, atol=1e-14 * max(1.0, np.abs(S).max()))
    assert np.linalg.eigvalsh(S).min() >= -1e-10 * np.abs(S).max()


def test_zero_horizon_moments():
    lin = linearize(single_integrator(2), [1.0, 2.0])
    mp = integrate_moments(lin, [1.0, 2.0], 0.0)
    assert np.all(mp.sigma == 0)
    with pytest.raises(ValueError):
        integrate_moments(lin, [1.0, 2.0], -0.1)


def test_uncontrollable_pair_is_flagged():
    A = np.zeros((2, 2))
    lin = linearize(linear_model(A, np.array([[1.0], [0.0]])), [0.0, 0.0])
    check = gramian_nonsingularity_check(lin, 0.5)
    assert not check.ok and check.condition == np.inf


def test_reduced_quadrotor_structure():
    m = reduced_quadrotor(sigma=0.5, g=9.81)
    G = m.G(np.zeros(4))
    np.testing.assert_allclose(G, [[0, 0], [0, 0], [9.81, 0], [0, -9.81]])
    assert gramian_nonsingularity_check(linearize(m, np.zeros(4)), 0.1).ok


def test_errors():
    with pytest.raises(ConfigError):
        single_integrator(2, 0.0)
    with pytest.raises(ConfigError):
        make_model("unicycle")
    with pytest.raises(ConfigError):
        make_model("single_integrator", wings=2)
    bad = DynamicsModel(1, 1, lambda x: np.array([np.nan]), lambda x: np.eye(1), 1.0)
    with pytest.raises(EvaluationError):
        linearize(bad, [0.0])
    wrong = DynamicsModel(2, 1, lambda x: x, lambda x: np.eye(2), 1.0)
    with pytest.raises(EvaluationError):
        wrong.G(np.zeros(2))
