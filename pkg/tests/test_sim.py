import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from mslmdp.dynamics import single_integrator
from mslmdp.errors import ConfigError, DivergenceError, LossOfControlError
from mslmdp.sim import (QuadrotorPlant, SdePlant, euler_maruyama_step, mixer, quadrotor_step,
                        reduced_state, rotor_forces, simulate_sde, substream)
from mslmdp.dynamics import DynamicsModel


def test_substreams_are_reproducible_and_distinct():
    a = substream(7, "noise", 3).standard_normal(5)
    np.testing.assert_array_equal(a, substream(7, "noise", 3).standard_normal(5))
    assert not np.allclose(a, substream(7, "noise", 4).standard_normal(5))
    assert not np.allclose(a, substream(7, "sampling", 3).standard_normal(5))
    assert not np.allclose(a, substream(8, "noise", 3).standard_normal(5))


def test_euler_maruyama_brownian_statistics():
    plant = SdePlant(single_integrator(1, 0.7), 1e-2)
    rng = np.random.default_rng(0)
    n_paths, steps = 4000, 50
    noise = rng.standard_normal((steps, n_paths, 1))
    x = np.zeros((n_paths, 1))
    for k in range(steps):
        x = x + 0.3 * 1e-2 + 0.7 * math.sqrt(1e-2) * noise[k]
    ends = np.array([simulate_sde(plant, [0.0], [[0.3]] * steps, 1e-2, noise[:, i])[-1, 0]
                     for i in range(200)])
    np.testing.assert_allclose(ends, x[:200, 0], atol=1e-12)
    assert abs(x.mean() - 0.15) < 4 * 0.7 * math.sqrt(0.5 / n_paths)
    assert abs(x.var() - 0.49 * 0.5) < 0.03


def test_noise_override_and_divergence():
    plant = SdePlant(single_integrator(2, 1.0), 1e-3, noise_scale=0.0)
    out = euler_maruyama_step(plant, [0.0, 0.0], [1.0, 2.0], 0.1, [5.0, 5.0])
    np.testing.assert_allclose(out, [0.1, 0.2])
    boom = DynamicsModel(1, 1, lambda x: np.array([np.inf]), lambda x: np.eye(1), 1.0)
    with pytest.raises(DivergenceError):
        euler_maruyama_step(SdePlant(boom, 1e-3), [0.0], [0.0], 1.0, [0.0])
    with pytest.raises(ConfigError):
        SdePlant(single_integrator(1), 0.0)


def test_mixer_roundtrip():
    F = np.array([1.0, 1.2, 0.9, 1.1])
    M = mixer(0.17, 0.01)
    u = M @ F
    np.testing.assert_allclose(rotor_forces(u[0], u[1:], 0.17, 0.01), F)


def test_hover_is_equilibrium():
    plant = QuadrotorPlant()
    s = plant.hover_state(1.0, 2.0)
    for _ in range(200):
        s = quadrotor_step(plant, s, (0.0, 0.0), 1e-3)
    np.testing.assert_allclose(s, plant.hover_state(1.0, 2.0), atol=1e-12)


def zxy(phi, theta, psi):
    return Rotation.from_euler("ZXY", [psi, phi, theta]).as_matrix()


@settings(max_examples=30, deadline=None)
@given(st.floats(-0.6, 0.6), st.floats(-0.6, 0.6), st.floats(-3, 3),
       st.lists(st.floats(-2, 2), min_size=3, max_size=3))
def test_euler_rates_reproduce_body_rates(phi, theta, psi, w):
    plant = QuadrotorPlant()
    s = [0.0] * 12
    s[6:9] = [phi, theta, psi]
    s[9:12] = w
    d = plant.derivative(s, 0.0, 0.0)
    dt = 1e-6
    R0 = zxy(phi, theta, psi)
    R1 = zxy(phi + dt * d[6], theta + dt * d[7], psi + dt * d[8])
    Om = R0.T @ (R1 - R0) / dt
    body = np.array([Om[2, 1], Om[0, 2], Om[1, 0]])
    np.testing.assert_allclose(body, w, atol=1e-4)
    # thrust direction is the body z-axis
    a = np.array(d[3:6]) + [0, 0, plant.g]
    u1 = plant.inner_loop(s, 0.0, 0.0)[0]
    np.testing.assert_allclose(a, R0[:, 2] * u1 / plant.m, atol=1e-10)


def test_small_tilt_matches_reduced_model():
    """Pitch command accelerates +x at ~g*theta, roll command accelerates -y at ~g*phi."""
    plant = QuadrotorPlant()
    s = plant.hover_state()
    cmd = (0.02, 0.01)
    for _ in range(1500):
        s = quadrotor_step(plant, s, cmd, 1e-3)
    r = reduced_state(s)
    # attitude settles within ~0.1 s, so velocity is close to g*angle*(t - lag)
    assert r[2] == pytest.approx(9.81 * 0.02 * 1.5, rel=0.1)
    assert r[3] == pytest.approx(-9.81 * 0.01 * 1.5, rel=0.1)


def test_quadrotor_guards():
    plant = QuadrotorPlant()
    with pytest.raises(ValueError):
        quadrotor_step(plant, plant.hover_state(), (0, 0), 2e-3)
    s = plant.hover_state()
    s[7] = 1.45
    with pytest.raises(LossOfControlError):
        quadrotor_step(plant, s, (1.45, 0.0), 1e-3)
    with pytest.raises(ConfigError):
        QuadrotorPlant(inertia=np.diag([1.0, -1.0, 1.0]))
