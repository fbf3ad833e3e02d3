"""Occupancy-guided local refinement of a coarse desirability solution."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .chain import DEFAULT_TRUNCATION_RADIUS, gaussian_row
from .dwt import WaveletTree, unpack, unpack_wavelets
from .errors import IsolatedStateError, NonConvergenceError
from .lmdp import DEFAULT_TOL, DesirabilitySolution, OptimalPolicy, make_solution, power_iteration

log = logging.getLogger(__name__)


@dataclass
class OccupancyMeasure:
    d: np.ndarray
    horizon_steps: int
    source_state: Optional[np.ndarray] = None
    clamped_mass: float = 0.0


@dataclass
class BasisSelection:
    scores: np.ndarray
    selected: np.ndarray
    budget: int


def passive_row(x_cur, samples, model, h, truncation_radius=DEFAULT_TRUNCATION_RADIUS) -> np.ndarray:
    idx, p = gaussian_row(x_cur, model, h, samples, truncation_radius)
    if idx.size == 0:
        raise IsolatedStateError(f"no sample within the truncation radius of {np.asarray(x_cur)!r}")
    row = np.zeros(len(samples))
    row[idx] = p
    return row


def tilt(row, z) -> np.ndarray:
    """Reweight a passive row by the desirability and renormalize."""
    w = np.asarray(row) * np.asarray(z)
    s = w.sum()
    if not s > 0:
        raise IsolatedStateError("desirability-weighted row has no mass")
    return w / s


def initial_transition(x_cur, samples, model, h, z,
                       truncation_radius=DEFAULT_TRUNCATION_RADIUS) -> np.ndarray:
    """First-step law from an off-sample state under the optimal policy."""
    return tilt(passive_row(x_cur, samples, model, h, truncation_radius), z)


def policy_power_basis(P_star, Phi, power: int) -> np.ndarray:
    """``(P*)^power @ Phi`` by repeated sparse products."""
    X = Phi
    for _ in range(power):
        X = P_star @ X
    return X


def occupancy_compressed(p0, policy, tree: WaveletTree, level: int, k_lp: int,
                         source_state=None) -> OccupancyMeasure:
    """Averaged visitation over ``k_lp`` steps, propagated on level-``level`` bases."""
    stride = 2 ** level
    if k_lp < stride:
        raise ValueError(f"k_LP={k_lp} is shorter than one compressed step (2^{level})")
    steps = math.ceil(k_lp / stride)
    P_star = policy.P_star if isinstance(policy, OptimalPolicy) else policy
    Phi = unpack(tree, level)
    p_bar = np.asarray(p0) @ Phi
    P_bar = Phi.T @ policy_power_basis(P_star, Phi, stride)
    d_bar = p_bar / steps
    for _ in range(1, steps):
        p_bar = p_bar @ P_bar
        d_bar = d_bar + p_bar / steps
    d = d_bar @ Phi.T
    neg = d < 0
    clamped = float(-d[neg].sum())
    d = np.where(neg, 0.0, d)
    total = d.sum()
    if not total > 0:
        raise NonConvergenceError("occupancy measure vanished after clamping")
    if clamped > 0:
        log.debug("occupancy: clamped %.3e negative mass", clamped)
    return OccupancyMeasure(d / total, int(k_lp),
                            None if source_state is None else np.asarray(source_state),
                            clamped)


def occupancy_exact(p0, policy, k_lp: int) -> np.ndarray:
    """Uncompressed k-step average (reference path)."""
    P_star = policy.P_star if isinstance(policy, OptimalPolicy) else policy
    p = np.asarray(p0, dtype=float)
    d = p / k_lp
    PT = sp.csr_matrix(P_star).T.tocsr()
    for _ in range(1, k_lp):
        p = PT @ p
        d = d + p / k_lp
    return d


def score_and_select(occ, tree: WaveletTree, level: int, budget: int,
                     wavelets: Optional[np.ndarray] = None) -> BasisSelection:
    Psi = unpack_wavelets(tree, level) if wavelets is None else wavelets
    if not 0 <= budget <= Psi.shape[1]:
        raise ValueError(f"budget {budget} outside 0..{Psi.shape[1]}")
    d = occ.d if isinstance(occ, OccupancyMeasure) else np.asarray(occ)
    scores = d @ np.abs(Psi)
    order = np.lexsort((np.arange(scores.size), -scores))
    return BasisSelection(scores, order[:budget], int(budget))


def refine(solution: DesirabilitySolution, selection: BasisSelection, Q, P,
           tree: WaveletTree, tol: float = DEFAULT_TOL, max_iter: Optional[int] = None,
           h: Optional[float] = None, wavelets: Optional[np.ndarray] = None) -> DesirabilitySolution:
    """Re-solve on ``[Phi_l | Psi_LP]`` warm-started from ``(w_l, 0)``."""
    if len(selection.selected) == 0:
        raise ValueError("refinement needs at least one selected wavelet")
    level = solution.level
    Psi = unpack_wavelets(tree, level) if wavelets is None else wavelets
    basis = np.hstack([unpack(tree, level), Psi[:, selection.selected]])
    M0 = Q @ (P.P if hasattr(P, "P") else P)
    block = basis.T @ (M0 @ basis)
    w0 = np.concatenate([solution.weights, np.zeros(len(selection.selected))])
    lam, w, it = power_iteration(block, w0, tol, max_iter)
    h = h if h is not None else P.h
    out = make_solution(level, w, lam, basis @ w, h, it, {level: it})
    return out
