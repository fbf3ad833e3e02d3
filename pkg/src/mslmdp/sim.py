"""Plants used to execute control: the SDE itself and a 12-state quadrotor.

The quadrotor carries a PD altitude/attitude inner loop; its outer inputs
are the desired pitch and roll angles, matching the reduced planning model.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dwt import KroneckerBasis, kronecker_basis  # noqa: F401  (re-exported)
from .dynamics import DynamicsModel
from .errors import ConfigError, DivergenceError, LossOfControlError

STREAMS = {"sampling": 0, "noise": 1, "montecarlo": 2}


def substream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Independent named generator derived from the single config seed."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), STREAMS[name], *extra]))


@dataclass
class SdePlant:
    model: DynamicsModel
    dt_sim: float
    seed: int = 0
    noise_scale: Optional[float] = None

    def __post_init__(self):
        if not self.dt_sim > 0:
            raise ConfigError("dt_sim must be positive")

    @property
    def sigma(self) -> float:
        return self.model.noise_scale if self.noise_scale is None else self.noise_scale


def euler_maruyama_step(plant: SdePlant, x, u, dt: float, xi) -> np.ndarray:
    """``x + f dt + G (u dt + sigma sqrt(dt) xi)``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    G = plant.model.G(x)
    out = x + plant.model.f(x) * dt + G @ (np.asarray(u, dtype=float) * dt
                                          + plant.sigma * math.sqrt(dt) * np.asarray(xi, dtype=float))
    if not np.all(np.isfinite(out)):
        raise DivergenceError(f"state diverged: {out!r}")
    return out


def simulate_sde(plant: SdePlant, x0, controls, dt: float, noise) -> np.ndarray:
    """Roll ``len(controls)`` Euler-Maruyama steps; returns all states."""
    xs = [np.asarray(x0, dtype=float)]
    for u, xi in zip(controls, noise):
        xs.append(euler_maruyama_step(plant, xs[-1], u, dt, xi))
    return np.array(xs)


# --- quadrotor ------------------------------------------------------------------

def mixer(L: float, mu: float) -> np.ndarray:
    """Map rotor forces ``F1..F4`` to ``(u1, u2)``."""
    return np.array([[1.0, 1.0, 1.0, 1.0],
                     [0.0, L, 0.0, -L],
                     [-L, 0.0, L, 0.0],
                     [mu * L, -mu * L, mu * L, -mu * L]])


def rotor_forces(u1: float, u2, L: float, mu: float) -> np.ndarray:
    return np.linalg.solve(mixer(L, mu), np.concatenate([[u1], np.asarray(u2, dtype=float)]))


@dataclass
class QuadrotorPlant:
    """Rigid-body quadrotor, state ``(r[3], v[3], phi, theta, psi, p, q, r)``.

    Defaults are at the scale of a 0.5 kg, 0.17 m-arm research platform.
    """

    m: float = 0.5
    g: float = 9.81
    inertia: np.ndarray = field(default_factory=lambda: np.diag([2.32e-3, 2.32e-3, 4.0e-3]))
    L: float = 0.17
    mu_m: float = 0.01
    kp_att: tuple = (400.0, 400.0, 100.0)
    kd_att: tuple = (40.0, 40.0, 20.0)
    kp_z: float = 8.0
    kd_z: float = 4.0
    z0: float = 1.0
    max_tilt: float = math.radians(80.0)

    def __post_init__(self):
        self.inertia = np.asarray(self.inertia, dtype=float)
        if not np.allclose(self.inertia, self.inertia.T) or np.any(np.linalg.eigvalsh(self.inertia) <= 0):
            raise ConfigError("inertia must be symmetric positive definite")
        gains = list(self.kp_att) + list(self.kd_att) + [self.kp_z, self.kd_z, self.m, self.g]
        if any(not k > 0 for k in gains):
            raise ConfigError("gains and physical constants must be positive")
        self._I = [list(map(float, row)) for row in self.inertia]
        self._Iinv = [list(map(float, row)) for row in np.linalg.inv(self.inertia)]

    def hover_state(self, x: float = 0.0, y: float = 0.0) -> np.ndarray:
        s = np.zeros(12)
        s[0], s[1], s[2] = x, y, self.z0
        return s

    def inner_loop(self, s, theta_d: float, phi_d: float):
        """PD altitude/attitude law returning ``(u1, u2)`` with fixed zero yaw."""
        T_d = self.kp_z * (self.z0 - s[2]) - self.kd_z * s[5]
        u1 = self.m * self.g + T_d
        acc = (self.kp_att[0] * (phi_d - s[6]) - self.kd_att[0] * s[9],
               self.kp_att[1] * (theta_d - s[7]) - self.kd_att[1] * s[10],
               self.kp_att[2] * (0.0 - s[8]) - self.kd_att[2] * s[11])
        I = self._I
        u2 = [I[i][0] * acc[0] + I[i][1] * acc[1] + I[i][2] * acc[2] for i in range(3)]
        return u1, u2

    def derivative(self, s, theta_d: float, phi_d: float):
        u1, u2 = self.inner_loop(s, theta_d, phi_d)
        phi, theta, psi = s[6], s[7], s[8]
        p, q, r = s[9], s[10], s[11]
        cph, sph = math.cos(phi), math.sin(phi)
        cth, sth = math.cos(theta), math.sin(theta)
        cps, sps = math.cos(psi), math.sin(psi)
        a = u1 / self.m
        ax = (cps * sth + cth * sph * sps) * a
        ay = (sps * sth - cps * cth * sph) * a
        az = cph * cth * a - self.g
        # Euler-angle rates: inverse of [[cth,0,-cph sth],[0,1,sph],[sth,0,cph cth]]
        det = cph * (cth * cth + sth * sth)
        phid = (cph * cth * p + cph * sth * r) / det
        psid = (-sth * p + cth * r) / det
        thetad = q - sph * psid
        I, Iinv = self._I, self._Iinv
        Iw = [I[i][0] * p + I[i][1] * q + I[i][2] * r for i in range(3)]
        cross = (q * Iw[2] - r * Iw[1], r * Iw[0] - p * Iw[2], p * Iw[1] - q * Iw[0])
        rhs = [u2[i] - cross[i] for i in range(3)]
        wd = [Iinv[i][0] * rhs[0] + Iinv[i][1] * rhs[1] + Iinv[i][2] * rhs[2] for i in range(3)]
        return [s[3], s[4], s[5], ax, ay, az, phid, thetad, psid, wd[0], wd[1], wd[2]]


def quadrotor_step(plant: QuadrotorPlant, x12, outer_cmd, dt: float) -> np.ndarray:
    """One RK4 step of the closed inner loop under ``outer_cmd = (theta_d, phi_d)``."""
    if dt > 1e-3 + 1e-15:
        raise ValueError("quadrotor integration step must not exceed 1e-3 s")
    th, ph = float(outer_cmd[0]), float(outer_cmd[1])
    s = [float(v) for v in x12]
    k1 = plant.derivative(s, th, ph)
    k2 = plant.derivative([a + 0.5 * dt * b for a, b in zip(s, k1)], th, ph)
    k3 = plant.derivative([a + 0.5 * dt * b for a, b in zip(s, k2)], th, ph)
    k4 = plant.derivative([a + dt * b for a, b in zip(s, k3)], th, ph)
    out = np.array([a + dt / 6.0 * (b + 2.0 * c + 2.0 * d + e)
                    for a, b, c, d, e in zip(s, k1, k2, k3, k4)])
    if not np.all(np.isfinite(out)):
        raise DivergenceError("quadrotor state diverged")
    if abs(out[6]) > plant.max_tilt or abs(out[7]) > plant.max_tilt:
        raise LossOfControlError(
            f"attitude left the linearized regime (roll={out[6]:.3f}, pitch={out[7]:.3f})")
    return out


def reduced_state(x12) -> np.ndarray:
    """Planar position/velocity ``(x, y, vx, vy)`` of a 12-state quadrotor."""
    x12 = np.asarray(x12)
    return np.array([x12[0], x12[1], x12[3], x12[4]])
