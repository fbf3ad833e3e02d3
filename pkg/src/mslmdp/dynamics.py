"""Control-affine SDE models, linearization and moment propagation.

Models have the form ``dx = f(x) dt + G(x) (u dt + sigma dw)``.  Downstream
code needs the mean and covariance of the linearized passive dynamics over
a short horizon; both are evaluated in closed form with matrix
exponentials.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy.linalg import expm

from .errors import ConfigError, EvaluationError


@dataclass(frozen=True)
class DynamicsModel:
    state_dim: int
    control_dim: int
    drift: Callable[[np.ndarray], np.ndarray]
    control_matrix: Callable[[np.ndarray], np.ndarray]
    noise_scale: float
    jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = "custom"

    def __post_init__(self):
        if self.state_dim < 1 or self.control_dim < 1:
            raise ConfigError("state and control dimensions must be positive")
        if not self.noise_scale > 0:
            raise ConfigError("noise_scale must be positive")

    def f(self, x) -> np.ndarray:
        return np.asarray(self.drift(np.asarray(x, dtype=float)), dtype=float)

    def G(self, x) -> np.ndarray:
        out = np.asarray(self.control_matrix(np.asarray(x, dtype=float)), dtype=float)
        if out.shape != (self.state_dim, self.control_dim):
            raise EvaluationError(
                f"control matrix has shape {out.shape}, expected "
                f"{(self.state_dim, self.control_dim)}")
        return out


@dataclass(frozen=True)
class Linearization:
    A: np.ndarray
    B: np.ndarray
    c: np.ndarray
    anchor: np.ndarray
    G: np.ndarray
    sigma: float


@dataclass(frozen=True)
class MomentPair:
    mu: np.ndarray
    sigma: np.ndarray
    horizon: float


class GramianCheck(NamedTuple):
    ok: bool
    condition: float
    min_eig: float
    max_eig: float


def _finite_or_raise(values, what, x):
    bad = np.flatnonzero(~np.isfinite(np.ravel(values)))
    if bad.size:
        raise EvaluationError(f"non-finite {what} at coordinate {int(bad[0])} (x={x!r})")


def numerical_jacobian(func, x) -> np.ndarray:
    """Central finite differences with step ``1e-6 * (1 + |x_i|)``."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(func(x), dtype=float)
    jac = np.empty((f0.size, x.size))
    for i in range(x.size):
        step = 1e-6 * (1.0 + abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += step
        xm[i] -= step
        jac[:, i] = (np.asarray(func(xp)) - np.asarray(func(xm))) / (2.0 * step)
    return jac


def linearize(model: DynamicsModel, x) -> Linearization:
    x = np.asarray(x, dtype=float)
    fx = model.f(x)
    _finite_or_raise(fx, "drift", x)
    if model.jacobian is not None:
        A = np.asarray(model.jacobian(x), dtype=float)
    else:
        A = numerical_jacobian(model.f, x)
    _finite_or_raise(A, "drift Jacobian", x)
    G = model.G(x)
    _finite_or_raise(G, "control matrix", x)
    return Linearization(A=A, B=model.noise_scale * G, c=fx - A @ x,
                         anchor=x, G=G, sigma=model.noise_scale)


def mean_propagator(A, t):
    """Return ``(e^{At}, int_0^t e^{As} ds)`` from one augmented exponential."""
    n = A.shape[0]
    aug = np.zeros((2 * n, 2 * n))
    aug[:n, :n] = A * t
    aug[:n, n:] = np.eye(n) * t
    E = expm(aug)
    return E[:n, :n], E[:n, n:]


def gramian(A, B, t) -> np.ndarray:
    """Controllability Gramian ``int_0^t e^{As} B B^T e^{A^T s} ds``.

    Uses Van Loan's block-exponential identity.
    """
    n = A.shape[0]
    if t == 0:
        return np.zeros((n, n))
    blk = np.zeros((2 * n, 2 * n))
    blk[:n, :n] = -A
    blk[:n, n:] = B @ B.T
    blk[n:, n:] = A.T
    E = expm(blk * t)
    S = E[n:, n:].T @ E[:n, n:]
    return 0.5 * (S + S.T)


def integrate_moments(lin: Linearization, x0, t: float) -> MomentPair:
    if t < 0:
        raise ValueError(f"horizon must be nonnegative, got {t}")
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    if t == 0:
        return MomentPair(mu=x0.copy(), sigma=np.zeros((n, n)), horizon=0.0)
    eAt, integral = mean_propagator(lin.A, t)
    mu = eAt @ x0 + integral @ lin.c
    return MomentPair(mu=mu, sigma=gramian(lin.A, lin.B, t), horizon=float(t))


def gramian_nonsingularity_check(lin: Linearization, t: float) -> GramianCheck:
    if not t > 0:
        raise ValueError(f"horizon must be positive, got {t}")
    eig = np.linalg.eigvalsh(gramian(lin.A, lin.B, t))
    lo, hi = float(eig[0]), float(eig[-1])
    ok = hi > 0 and lo > 1e-12 * hi
    cond = hi / lo if lo > 0 else float("inf")
    return GramianCheck(ok, cond, lo, hi)


def moment_ode_rhs(lin: Linearization):
    """Right-hand side of the stacked mean/covariance ODE (test oracle)."""
    n = lin.A.shape[0]
    BBt = lin.B @ lin.B.T

    def rhs(_t, y):
        mu = y[:n]
        S = y[n:].reshape(n, n)
        dS = lin.A @ S + S @ lin.A.T + BBt
        return np.concatenate([lin.A @ mu + lin.c, dS.ravel()])

    return rhs


# --- model registry ---------------------------------------------------------

def single_integrator(dim: int = 2, sigma: float = 1.0) -> DynamicsModel:
    eye = np.eye(dim)
    zero = np.zeros(dim)
    return DynamicsModel(dim, dim, lambda x: zero.copy(), lambda x: eye.copy(), sigma,
                         jacobian=lambda x: np.zeros((dim, dim)),
                         name="single_integrator")


def linear_model(M, N, sigma: float = 1.0, name: str = "linear") -> DynamicsModel:
    M = np.asarray(M, dtype=float)
    N = np.asarray(N, dtype=float)
    return DynamicsModel(M.shape[0], N.shape[1], lambda x: M @ x, lambda x: N.copy(),
                         sigma, jacobian=lambda x: M.copy(), name=name)


def double_integrator(sigma: float = 1.0, gain: float = 1.0) -> DynamicsModel:
    """Position/velocity pair driven through the velocity: ``dv = gain (u dt + sigma dw)``."""
    M = np.array([[0.0, 1.0], [0.0, 0.0]])
    return linear_model(M, np.array([[0.0], [gain]]), sigma, name="double_integrator")


def reduced_quadrotor(sigma: float = 0.5, g: float = 9.81) -> DynamicsModel:
    """Hover-linearized planar quadrotor with state ``(x, y, vx, vy)``.

    Controls are the desired pitch and roll angles handed to the inner loop.
    """
    M = np.zeros((4, 4))
    M[0, 2] = M[1, 3] = 1.0
    N = np.zeros((4, 2))
    N[2, 0] = g
    N[3, 1] = -g
    return linear_model(M, N, sigma, name="reduced_quadrotor")


def quadrotor_axis(sigma: float = 0.5, g: float = 9.81, sign: float = 1.0) -> DynamicsModel:
    """One decoupled ``(position, velocity)`` factor of the reduced quadrotor."""
    return double_integrator(sigma=sigma, gain=sign * g)


MODEL_REGISTRY = {
    "single_integrator": single_integrator,
    "double_integrator": double_integrator,
    "reduced_quadrotor": reduced_quadrotor,
    "quadrotor_axis": quadrotor_axis,
}


def make_model(model_id: str, **params) -> DynamicsModel:
    try:
        factory = MODEL_REGISTRY[model_id]
    except KeyError:
        raise ConfigError(f"unknown model id {model_id!r}; known: {sorted(MODEL_REGISTRY)}")
    try:
        return factory(**params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for model {model_id!r}: {exc}") from None
