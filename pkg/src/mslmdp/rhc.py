"""Continuous-time steering between planned mean targets, applied in receding horizon.

Each segment re-linearizes at the current state, reads the expected state
``y_new`` after ``k_RHC`` optimal-policy steps, and steers the linearized
mean onto it with the minimum-energy control; only the first ``tau_r``
seconds are applied before the next segment.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
from scipy.linalg import expm

from .chain import DEFAULT_TRUNCATION_RADIUS
from .dwt import WaveletTree, unpack_wavelets
from .dynamics import DynamicsModel, Linearization, gramian_nonsingularity_check, integrate_moments, linearize
from .environment import SampleSet, Workspace, collision_check
from .errors import ConfigError, DegenerateStateError, UncontrollableError
from .lmdp import DEFAULT_TOL, DesirabilitySolution, optimal_policy
from .local import occupancy_compressed, passive_row, refine, score_and_select, tilt
from .sim import QuadrotorPlant, SdePlant, euler_maruyama_step, quadrotor_step, reduced_state

log = logging.getLogger(__name__)


# --- one segment --------------------------------------------------------------------

@dataclass
class ControlSegment:
    lin: Linearization
    tau: float
    tau_r: float
    y_new: np.ndarray
    mu_tau: np.ndarray
    sigma_tau: np.ndarray
    condition: float = float("nan")
    eta: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if not 0 < self.tau_r <= self.tau * (1 + 1e-12):
            raise ConfigError(f"apply interval {self.tau_r} must lie in (0, tau={self.tau}]")
        if self.eta is None:
            self.eta = np.linalg.solve(self.sigma_tau, self.mu_tau - self.y_new)

    @property
    def x_cur(self) -> np.ndarray:
        return self.lin.anchor

    def u(self, t: float) -> np.ndarray:
        """``-sigma^2 G^T exp(A^T (tau - t)) Sigma(tau)^-1 (mu(tau) - y_new)``."""
        lin = self.lin
        return -lin.sigma ** 2 * lin.G.T @ (expm(lin.A.T * (self.tau - t)) @ self.eta)

    def controls(self, times) -> np.ndarray:
        return np.array([self.u(t) for t in np.asarray(times, dtype=float)])

    def energy(self) -> float:
        """Closed-form ``int_0^tau |u*|^2 dt``."""
        return float(self.lin.sigma ** 2 * (self.mu_tau - self.y_new) @ self.eta)

    def mean_rhs(self, t: float, mu) -> np.ndarray:
        """Controlled linearized mean dynamics ``A mu + G u*(t) + c``."""
        lin = self.lin
        return lin.A @ mu + lin.G @ self.u(t) + lin.c


def control_sequence(x_cur, y_new, model: DynamicsModel, tau: float,
                     tau_r: Optional[float] = None) -> ControlSegment:
    lin = linearize(model, x_cur)
    chk = gramian_nonsingularity_check(lin, tau)
    if not chk.ok:
        raise UncontrollableError(
            f"controllability Gramian singular over tau={tau} (min eig {chk.min_eig:.3e})")
    mom = integrate_moments(lin, x_cur, tau)
    seg = ControlSegment(lin, float(tau), float(tau if tau_r is None else tau_r),
                         np.asarray(y_new, dtype=float), mom.mu, mom.sigma, chk.condition)
    log.debug("segment at %s: Gramian condition %.3e", np.asarray(x_cur), chk.condition)
    return seg


def rollout(p0, policy, steps: int) -> np.ndarray:
    p = np.asarray(p0, dtype=float)
    for _ in range(steps):
        p = policy.step(p)
    return p


def expected_target(x_cur, samples: SampleSet, policy, z, model: DynamicsModel, h: float,
                    k_rhc: int, truncation_radius: float = DEFAULT_TRUNCATION_RADIUS,
                    row: Optional[np.ndarray] = None) -> np.ndarray:
    """Probability-weighted sample mean after ``k_rhc`` optimal-policy steps.

    ``row`` optionally supplies the passive first-step row (decoupled chains
    build it per factor).
    """
    if k_rhc < 1:
        raise ValueError("k_RHC must be at least 1")
    if row is None:
        row = passive_row(x_cur, samples, model, h, truncation_radius)
    p = rollout(tilt(row, z), policy, k_rhc - 1)
    s = p.sum()
    if not s > 0:
        raise DegenerateStateError("rolled-out distribution has no mass")
    return (p / s) @ samples.points


# --- planner state carried through the loop -------------------------------------------

@dataclass
class LocalRefiner:
    tree: WaveletTree
    Q: object
    P: object
    k_lp: int
    budget: int
    tol: float = DEFAULT_TOL
    _wavelets: Optional[np.ndarray] = field(default=None, repr=False)

    def wavelets(self, level: int) -> np.ndarray:
        if self._wavelets is None:
            self._wavelets = unpack_wavelets(self.tree, level)
        return self._wavelets


@dataclass
class Planner:
    """Global solution plus the optional local refinement applied along a run."""

    samples: SampleSet
    model: DynamicsModel
    h: float
    P: object
    solution: DesirabilitySolution
    truncation_radius: float = DEFAULT_TRUNCATION_RADIUS
    row_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    refiner: Optional[LocalRefiner] = None

    def __post_init__(self):
        self.base_policy = optimal_policy(self.P, self.solution.z_hat)
        self.z = self.solution.z_hat
        self.policy = self.base_policy

    @property
    def level(self) -> int:
        return self.solution.level

    @property
    def refines(self) -> bool:
        return self.refiner is not None and self.refiner.budget > 0 and self.level > 0

    def passive_row(self, x) -> np.ndarray:
        if self.row_fn is not None:
            return self.row_fn(x)
        return passive_row(x, self.samples, self.model, self.h, self.truncation_radius)

    def replan(self, x) -> None:
        """Refine the global solution around the occupancy from ``x``."""
        r = self.refiner
        p0 = tilt(self.passive_row(x), self.solution.z_hat)
        occ = occupancy_compressed(p0, self.base_policy, r.tree, self.level, r.k_lp, x)
        W = r.wavelets(self.level)
        sel = score_and_select(occ, r.tree, self.level, r.budget, W)
        refined = refine(self.solution, sel, r.Q, r.P, r.tree, r.tol, h=self.h, wavelets=W)
        self.z = refined.z_hat
        self.policy = optimal_policy(self.P, self.z)

    def target(self, x, k_rhc: int) -> np.ndarray:
        return expected_target(x, self.samples, self.policy, self.z, self.model, self.h,
                               k_rhc, self.truncation_radius, row=self.passive_row(x))


# --- plants as seen by the loop -----------------------------------------------------

class SdeRunner:
    """Euler-Maruyama execution of the planning SDE (possibly with its own noise level)."""

    def __init__(self, plant: SdePlant, x0):
        self.plant = plant
        self.state = np.asarray(x0, dtype=float)

    @property
    def noise_dim(self) -> int:
        return self.plant.model.control_dim

    def planning_state(self) -> np.ndarray:
        return self.state

    def advance(self, u, dt, xi) -> None:
        self.state = euler_maruyama_step(self.plant, self.state, u, dt, xi)


class QuadrotorRunner:
    """Full quadrotor driven by ``(theta_d, phi_d)`` with a planar velocity disturbance."""

    def __init__(self, plant: QuadrotorPlant, x0, disturbance: float = 0.0):
        self.plant = plant
        self.disturbance = float(disturbance)
        x0 = np.asarray(x0, dtype=float)
        if x0.size == 4:
            s = plant.hover_state(x0[0], x0[1])
            s[3], s[4] = x0[2], x0[3]
            x0 = s
        self.state = x0

    noise_dim = 2

    def planning_state(self) -> np.ndarray:
        return reduced_state(self.state)

    def advance(self, u, dt, xi) -> None:
        s = quadrotor_step(self.plant, self.state, u, dt)
        if self.disturbance:
            kick = self.plant.g * self.disturbance * math.sqrt(dt) * np.asarray(xi)
            s[3] += kick[0]
            s[4] -= kick[1]
        self.state = s


# --- the loop -------------------------------------------------------------------------

@dataclass
class TrajectoryLog:
    state_dim: int
    control_dim: int
    rows: List[tuple] = field(default_factory=list)
    status: str = "running"
    reason: str = ""
    colliding_state: Optional[np.ndarray] = None
    path_length: float = 0.0
    control_energy: float = 0.0
    state_cost: float = 0.0
    segments: int = 0
    replans: int = 0
    max_drift: float = 0.0
    max_condition: float = 0.0
    duration: float = 0.0

    @property
    def success(self) -> bool:
        return self.status == "goal"

    def record(self, t, x, u, level, replan) -> None:
        self.rows.append((float(t), *map(float, x), *map(float, u), int(level), int(replan)))

    def header(self) -> List[str]:
        return (["t"] + [f"x{i}" for i in range(self.state_dim)]
                + [f"u{i}" for i in range(self.control_dim)] + ["level", "replan"])

    def write(self, path) -> None:
        with open(path, "w", newline="") as fh:
            self.write_to(fh)

    def write_to(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(self.header())
        for row in self.rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])

    def summary(self) -> dict:
        return {"status": self.status, "reason": self.reason, "success": self.success,
                "duration": self.duration, "path_length": self.path_length,
                "control_energy": self.control_energy, "state_cost": self.state_cost,
                "segments": self.segments, "replans": self.replans,
                "max_linearization_drift": self.max_drift,
                "max_gramian_condition": self.max_condition,
                "colliding_state": None if self.colliding_state is None
                else [float(v) for v in self.colliding_state]}


def rhc_loop(planner: Planner, runner, workspace: Workspace, k_rhc: int, tau_r: float,
             k_lp: int, max_time: float, dt_sim: float, rng: np.random.Generator,
             state_cost: Optional[Callable[[np.ndarray], np.ndarray]] = None,
             log_stride: int = 1) -> TrajectoryLog:
    """Run one closed-loop episode until goal entry, collision, or ``max_time``."""
    tau = planner.h * k_rhc
    if not 0 < tau_r <= tau * (1 + 1e-12):
        raise ConfigError(f"tau_r={tau_r} must lie in (0, tau={tau}]")
    n_sub = int(round(tau_r / dt_sim))
    if n_sub < 1 or abs(n_sub * dt_sim - tau_r) > 1e-12 * max(1.0, tau_r):
        raise ConfigError(f"dt_sim={dt_sim} must divide tau_r={tau_r}")
    if dt_sim > planner.h / 10 * (1 + 1e-12):
        raise ConfigError("dt_sim must not exceed h/10")
    replan_period = k_lp * planner.h
    x_log = runner.state
    trace = TrajectoryLog(state_dim=np.asarray(x_log).size, control_dim=planner.model.control_dim)
    pos_dim = workspace.pos_dim
    t = 0.0
    since_replan = math.inf
    x = runner.planning_state()
    if not collision_check(workspace, x[:pos_dim]):
        trace.status, trace.reason, trace.colliding_state = "collision", "start in collision", x
        return trace
    while True:
        if workspace.in_goal(x[:pos_dim]):
            trace.status = "goal"
            break
        if t >= max_time - 1e-12:
            trace.status, trace.reason = "timeout", f"max_time {max_time} reached"
            break
        replanned = False
        if planner.refines and since_replan >= replan_period - 1e-12:
            planner.replan(x)
            trace.replans += 1
            since_replan = 0.0
            replanned = True
        y_new = planner.target(x, k_rhc)
        seg = control_sequence(x, y_new, planner.model, tau, tau_r)
        trace.segments += 1
        trace.max_condition = max(trace.max_condition, seg.condition)
        stopped = False
        for k in range(n_sub):
            u = seg.u(k * dt_sim)
            if (k % log_stride) == 0:
                trace.record(t, runner.state, u, planner.level, replanned and k == 0)
            xi = rng.standard_normal(runner.noise_dim)
            runner.advance(u, dt_sim, xi)
            x_next = runner.planning_state()
            trace.path_length += float(np.linalg.norm(x_next[:pos_dim] - x[:pos_dim]))
            trace.control_energy += float(u @ u) * dt_sim
            if state_cost is not None:
                trace.state_cost += float(state_cost(x[None, :])[0]) * dt_sim
            lin = seg.lin
            drift = float(np.linalg.norm(planner.model.f(x_next) - (lin.A @ x_next + lin.c)))
            trace.max_drift = max(trace.max_drift, drift)
            x = x_next
            t += dt_sim
            if not collision_check(workspace, x[:pos_dim]):
                trace.status, trace.reason = "collision", f"collision at t={t:.4f}"
                trace.colliding_state = x.copy()
                stopped = True
                break
            if workspace.in_goal(x[:pos_dim]):
                stopped = True
                trace.status = "goal"
                break
        since_replan += n_sub * dt_sim
        if stopped:
            break
    trace.duration = t
    trace.record(t, runner.state, np.zeros(planner.model.control_dim), planner.level, False)
    return trace
