"""Average-cost linearly-solvable MDP on a wavelet hierarchy.

The desirability ``z = exp(-v)`` is the Perron eigenvector of ``Q P``
with ``Q = diag(exp(-h q))``.  Coarse problems restrict ``Q P`` to the
scaling functions of a level and are solved coarse-to-fine by power
iteration, each level warm-started from the unpacked coarser solution.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np
import scipy.sparse as sp

from .chain import KroneckerChain
from .dwt import WaveletTree, unpack
from .errors import ConfigError, DegenerateStateError, EvaluationError, NonConvergenceError

DEFAULT_TOL = 1e-12
CLAMP_DELTA = 1e-8
# slow inter-region mixing gives near-unit eigenvalue ratios on small
# compressed problems, so 50*k alone is far too few iterations there
MIN_MAX_ITER = 100_000


@dataclass(frozen=True)
class CostModel:
    q: Callable[[np.ndarray], np.ndarray]
    h: float

    def evaluate(self, points) -> np.ndarray:
        vals = np.asarray(self.q(np.atleast_2d(points)), dtype=float).reshape(-1)
        if not np.all(np.isfinite(vals)):
            bad = int(np.flatnonzero(~np.isfinite(vals))[0])
            raise EvaluationError(f"non-finite state cost at sample {bad}")
        if np.any(vals < 0):
            raise EvaluationError("state cost must be nonnegative")
        return vals


@dataclass
class DesirabilitySolution:
    level: int
    weights: np.ndarray
    lambda_hat: float
    z_hat: np.ndarray
    v_hat: np.ndarray
    avg_cost: float
    iterations: int
    level_iterations: Dict[int, int] = field(default_factory=dict)
    clamped: int = 0
    z_raw: Optional[np.ndarray] = None

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "lambda_hat": self.lambda_hat,
            "avg_cost": self.avg_cost,
            "iterations": self.iterations,
            "level_iterations": {str(k): v for k, v in sorted(self.level_iterations.items())},
            "clamped": self.clamped,
            "weights": self.weights.tolist(),
            "z_hat": self.z_hat.tolist(),
            "v_hat": self.v_hat.tolist(),
        }

    @classmethod
    def from_dict(cls, d) -> "DesirabilitySolution":
        return cls(level=int(d["level"]), weights=np.asarray(d["weights"], dtype=float),
                   lambda_hat=float(d["lambda_hat"]), z_hat=np.asarray(d["z_hat"], dtype=float),
                   v_hat=np.asarray(d["v_hat"], dtype=float), avg_cost=float(d["avg_cost"]),
                   iterations=int(d["iterations"]),
                   level_iterations={int(k): int(v) for k, v in d.get("level_iterations", {}).items()},
                   clamped=int(d.get("clamped", 0)))


@dataclass
class OptimalPolicy:
    P_star: sp.csr_matrix

    def step(self, p) -> np.ndarray:
        """Propagate a state distribution one step."""
        return self.P_star.T @ np.asarray(p)


@dataclass
class KroneckerPolicy:
    """Optimal policy over a decoupled joint chain, applied without forming it."""

    chain: KroneckerChain
    z: np.ndarray
    Pz: np.ndarray

    def step(self, p) -> np.ndarray:
        return self.chain.rmatvec(np.asarray(p) / self.Pz) * self.z

    @property
    def P_star(self) -> sp.csr_matrix:
        out = (sp.diags(1.0 / self.Pz) @ self.chain.P @ sp.diags(self.z)).tocsr()
        out.sort_indices()
        return out


def build_Q(cost: CostModel, samples) -> sp.dia_matrix:
    points = samples.points if hasattr(samples, "points") else samples
    q = cost.evaluate(points)
    return sp.diags(np.exp(-cost.h * q)).tocsr()


def power_iteration(M, w0, tol: float = DEFAULT_TOL, max_iter: Optional[int] = None):
    """Dominant eigenpair of ``M`` by normalized power iteration.

    Returns ``(lam, w, iterations)``, where one iteration is one product
    with ``M``; ``w`` is unit-norm with its largest-magnitude entry positive.
    """
    w = np.asarray(w0, dtype=float).copy()
    nrm = np.linalg.norm(w)
    if nrm == 0:
        raise ValueError("start vector must be nonzero")
    w /= nrm
    k = w.size
    max_iter = max(50 * k, MIN_MAX_ITER) if max_iter is None else max_iter
    res = np.inf
    for it in range(1, max_iter + 1):
        y = M @ w
        lam = float(w @ y)
        res = float(np.linalg.norm(y - lam * w))
        if res <= tol * abs(lam):
            if w[np.argmax(np.abs(w))] < 0:
                w = -w
            return lam, w, it
        ny = np.linalg.norm(y)
        if ny == 0:
            raise NonConvergenceError("power iteration collapsed to the zero vector", 0.0)
        w = y / ny
    raise NonConvergenceError(
        f"power iteration did not converge in {max_iter} iterations (residual {res:.3e})", res)


def clamp_desirability(z, delta: float = CLAMP_DELTA):
    """Floor ``z`` at ``delta * max(z)``; returns ``(clamped, count)``."""
    z = np.asarray(z, dtype=float)
    floor = delta * np.max(z)
    if not floor > 0:
        raise DegenerateStateError("desirability has no positive entry")
    mask = z < floor
    return np.where(mask, floor, z), int(mask.sum())


def make_solution(level, w, lam, Phi_w, h, iterations, level_iterations=None) -> DesirabilitySolution:
    if lam <= 0:
        raise DegenerateStateError(f"non-positive principal eigenvalue {lam}")
    z, nclamp = clamp_desirability(Phi_w)
    return DesirabilitySolution(
        level=level, weights=w, lambda_hat=lam, z_hat=z, v_hat=-np.log(z),
        avg_cost=-np.log(min(lam, 1.0)) / h if lam > 0 else np.inf,
        iterations=iterations, level_iterations=level_iterations or {level: iterations},
        clamped=nclamp, z_raw=np.asarray(Phi_w, dtype=float))


def _chain_matrix(P):
    return P.P if hasattr(P, "P") else P


def compressed_operators(tree: WaveletTree, Q, P, level: int) -> Dict[int, np.ndarray]:
    """``M_j`` for ``j = level..J``, compressed recursively from ``M_level``."""
    QP = Q @ _chain_matrix(P)
    Phi = unpack(tree, level)
    Ms = {level: Phi.T @ (QP @ Phi)}
    for j in range(level, tree.depth):
        S = tree.levels[j].scaling
        Ms[j + 1] = S.T @ Ms[j] @ S
    return Ms


def global_plan(tree: WaveletTree, Q, P, target_level: int, tol: float = DEFAULT_TOL,
                max_iter: Optional[int] = None, h: Optional[float] = None) -> DesirabilitySolution:
    """Coarse-to-fine recursive solve returning the level ``target_level`` solution."""
    if not 0 <= target_level <= tree.depth:
        raise ValueError(f"target level {target_level} outside 0..{tree.depth}")
    h = h if h is not None else getattr(P, "h", None)
    if h is None:
        raise ConfigError("time step h is required")
    Ms = compressed_operators(tree, Q, P, target_level)
    J = tree.depth
    counts: Dict[int, int] = {}
    w = np.ones(Ms[J].shape[0])
    lam = None
    for j in range(J, target_level - 1, -1):
        if j < J:
            w = tree.levels[j].scaling @ w
        try:
            lam, w, it = power_iteration(Ms[j], w, tol, max_iter)
        except NonConvergenceError as exc:
            exc.level = j
            raise NonConvergenceError(f"level {j}: {exc}", exc.residual, j) from None
        counts[j] = it
    z = unpack(tree, target_level) @ w
    return make_solution(target_level, w, lam, z, h, sum(counts.values()), counts)


def cold_start(tree: WaveletTree, Q, P, level: int, tol: float = DEFAULT_TOL,
               max_iter: Optional[int] = None, h: Optional[float] = None) -> DesirabilitySolution:
    """Solve directly at ``level`` from the all-ones vector (no warm start)."""
    h = h if h is not None else P.h
    M = compressed_operators(tree, Q, P, level)[level]
    lam, w, it = power_iteration(M, np.ones(M.shape[0]), tol, max_iter)
    return make_solution(level, w, lam, unpack(tree, level) @ w, h, it)


def solve_direct(Q, P, tol: float = DEFAULT_TOL, max_iter: Optional[int] = None,
                 h: Optional[float] = None) -> DesirabilitySolution:
    """Level-0 power iteration on the sparse ``Q P`` itself."""
    h = h if h is not None else P.h
    QP = (Q @ _chain_matrix(P)).tocsr()
    lam, w, it = power_iteration(QP, np.ones(QP.shape[0]), tol, max_iter)
    return make_solution(0, w, lam, w, h, it)


def optimal_policy(P, z):
    """``P*_{nm} = P_{nm} z_m / (P z)_n``."""
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0):
        raise DegenerateStateError("desirability must be strictly positive")
    if isinstance(P, KroneckerChain):
        Pz = P @ z
        _check_pz(Pz)
        return KroneckerPolicy(P, z, Pz)
    P = sp.csr_matrix(_chain_matrix(P))
    Pz = P @ z
    _check_pz(Pz)
    P_star = sp.diags(1.0 / Pz) @ P @ sp.diags(z)
    P_star = P_star.tocsr()
    P_star.sort_indices()
    return OptimalPolicy(P_star)


def _check_pz(Pz):
    bad = np.flatnonzero(Pz <= 0)
    if bad.size:
        raise DegenerateStateError(f"(Pz) vanishes at states {bad[:20].tolist()}")


# --- decoupled (Kronecker) problems ------------------------------------------------

class KroneckerCompressed:
    """``(Phi1 (x) Phi2)^T diag(q) (P1 Phi1 (x) P2 Phi2)`` as a matrix-free operator."""

    def __init__(self, q, chain: KroneckerChain, Phi1, Phi2):
        self.q = np.asarray(q, dtype=float).reshape(chain.first.n, chain.second.n)
        self.Phi1, self.Phi2 = np.asarray(Phi1), np.asarray(Phi2)
        self.A1 = np.asarray(chain.first.P @ self.Phi1)
        self.A2 = np.asarray(chain.second.P @ self.Phi2)
        k = self.Phi1.shape[1] * self.Phi2.shape[1]
        self.shape = (k, k)

    def __matmul__(self, w):
        W = np.asarray(w).reshape(self.Phi1.shape[1], self.Phi2.shape[1])
        Y = (self.A1 @ W) @ self.A2.T
        Y *= self.q
        return (self.Phi1.T @ Y @ self.Phi2).ravel()

    def toarray(self) -> np.ndarray:
        return np.column_stack([self @ e for e in np.eye(self.shape[1])])


def kronecker_plan(tree_x: WaveletTree, tree_y: WaveletTree, Q, chain: KroneckerChain,
                   target_level: int, tol: float = DEFAULT_TOL, max_iter: Optional[int] = None,
                   h: Optional[float] = None) -> DesirabilitySolution:
    """Coarse-to-fine solve on the joint basis ``Phi_x (x) Phi_y`` of two factor trees."""
    J = min(tree_x.depth, tree_y.depth)
    if not 0 <= target_level <= J:
        raise ValueError(f"target level {target_level} outside 0..{J}")
    h = chain.h if h is None else h
    q = Q.diagonal() if sp.issparse(Q) else np.asarray(Q, dtype=float).reshape(-1)
    counts: Dict[int, int] = {}
    w = None
    for j in range(J, target_level - 1, -1):
        op = KroneckerCompressed(q, chain, unpack(tree_x, j), unpack(tree_y, j))
        if w is None:
            w = np.ones(op.shape[0])
        else:
            W = w.reshape(tree_x.dims[j + 1], tree_y.dims[j + 1])
            w = (tree_x.levels[j].scaling @ W @ tree_y.levels[j].scaling.T).ravel()
        try:
            lam, w, it = power_iteration(op, w, tol, max_iter)
        except NonConvergenceError as exc:
            raise NonConvergenceError(f"level {j}: {exc}", exc.residual, j) from None
        counts[j] = it
    W = w.reshape(tree_x.dims[target_level], tree_y.dims[target_level])
    z = (unpack(tree_x, target_level) @ W @ unpack(tree_y, target_level).T).ravel()
    return make_solution(target_level, w, lam, z, h, sum(counts.values()), counts)


def level0_residual(Q, P, z, lam) -> float:
    QP = Q @ _chain_matrix(P)
    return float(np.linalg.norm(QP @ z - lam * z))


def rms_value_error(v_hat, v_ref) -> float:
    """RMS difference of value functions after removing the additive constant."""
    d = np.asarray(v_hat) - np.asarray(v_ref)
    d = d - d.mean()
    return float(np.sqrt(np.mean(d * d)))
