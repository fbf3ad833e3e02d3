"""Diffusion wavelet tree over a column-stochastic diffusion operator.

Level ``j`` stores the scaling block ``[Phi_{j+1}]_{Phi_j}``, the wavelet
block ``[Psi_j]_{Phi_j}`` and the compressed operator ``T_{j+1}`` (the
dyadic power ``T^(2^(j+1))`` written on ``Phi_{j+1}``).  Blocks are held
densely in memory and serialized as sparse triplets.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List

import numpy as np
import scipy.sparse as sp

from .chain import read_triplets, write_triplets
from .errors import ConfigError

log = logging.getLogger(__name__)

DEFAULT_EPSILON = 1e-4
DEFAULT_MAX_LEVELS = 14


def sparse_qr(M, epsilon: float) -> np.ndarray:
    """Rank-revealing orthonormal basis of the column span of ``M``.

    Modified Gram-Schmidt with greedy pivoting on the residual column norm
    (ties go to the lowest column index), stopping once every residual is
    at most ``epsilon``.  Small entries are hard-zeroed afterwards to keep
    the basis sparse, followed by one renormalization pass.
    """
    R = M.toarray() if sp.issparse(M) else np.array(M, dtype=float, copy=True)
    if not np.all(np.isfinite(R)):
        raise ValueError("sparse_qr input must be finite")
    n, m = R.shape
    cols: List[np.ndarray] = []
    Q = np.empty((n, 0))
    norms = np.sqrt(np.einsum("ij,ij->j", R, R))
    while len(cols) < min(n, m):
        j = int(np.argmax(norms))
        if norms[j] <= epsilon:
            break
        q = R[:, j] / norms[j]
        if cols:
            # second projection pass keeps orthogonality at working precision
            q = q - Q @ (Q.T @ q)
            q /= np.linalg.norm(q)
        cols.append(q)
        Q = np.column_stack(cols)
        R -= np.outer(q, q @ R)
        norms = np.sqrt(np.einsum("ij,ij->j", R, R))
        norms[j] = 0.0
    if not cols:
        return np.zeros((n, 0))
    Q[np.abs(Q) < epsilon / (10.0 * n)] = 0.0
    Q /= np.linalg.norm(Q, axis=0)
    return Q


@dataclass
class WaveletLevel:
    scaling: np.ndarray          # |X_j| x |X_{j+1}|
    wavelets: np.ndarray         # |X_j| x (|X_j| - |X_{j+1}|)
    compressed_op: np.ndarray    # |X_{j+1}| x |X_{j+1}|


@dataclass
class WaveletTree:
    levels: List[WaveletLevel]
    T0: np.ndarray
    epsilon: float
    _unpacked: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.T0.shape[0]

    @property
    def depth(self) -> int:
        """Deepest level index ``J``."""
        return len(self.levels)

    @property
    def dims(self) -> List[int]:
        return [self.n] + [lv.scaling.shape[1] for lv in self.levels]

    def operator(self, j: int) -> np.ndarray:
        return self.T0 if j == 0 else self.levels[j - 1].compressed_op


def _dense(T) -> np.ndarray:
    return T.toarray() if sp.issparse(T) else np.asarray(T, dtype=float)


def build_tree(T, epsilon: float = DEFAULT_EPSILON,
               max_levels: int = DEFAULT_MAX_LEVELS) -> WaveletTree:
    T0 = _dense(T)
    if not np.all(np.isfinite(T0)):
        raise ConfigError("diffusion operator contains non-finite entries")
    if epsilon <= 0 or max_levels < 1:
        raise ConfigError("epsilon and max_levels must be positive")
    levels: List[WaveletLevel] = []
    dims = [T0.shape[0]]
    Tj = T0
    for j in range(max_levels):
        phi = sparse_qr(Tj, epsilon)
        T_next = phi.T @ (Tj @ (Tj @ phi))
        proj = np.eye(Tj.shape[0]) - phi @ phi.T
        psi = sparse_qr(proj, epsilon)
        expected = Tj.shape[0] - phi.shape[1]
        if psi.shape[1] != expected:
            log.warning("level %d: wavelet count %d differs from %d", j, psi.shape[1], expected)
            psi = psi[:, :expected]
        levels.append(WaveletLevel(phi, psi, T_next))
        dims.append(phi.shape[1])
        log.debug("level %d -> %d bases", j + 1, dims[-1])
        if dims[-1] <= 1:
            break
        if len(dims) >= 3 and dims[-1] == dims[-2] == dims[-3]:
            break
        Tj = T_next
    return WaveletTree(levels, T0, float(epsilon))


def unpack(tree: WaveletTree, level: int) -> np.ndarray:
    """Scaling functions of ``level`` in original coordinates (N x |X_level|)."""
    if not 0 <= level <= tree.depth:
        raise ValueError(f"level {level} outside 0..{tree.depth}")
    if level == 0:
        return np.eye(tree.n)
    cache = tree._unpacked
    if level not in cache:
        prev = tree.levels[0].scaling if level == 1 else unpack(tree, level - 1) @ tree.levels[level - 1].scaling
        cache[level] = prev
    return cache[level]


def unpack_wavelets(tree: WaveletTree, up_to_level: int) -> np.ndarray:
    """Wavelets of levels ``0..up_to_level-1`` in original coordinates."""
    if not 1 <= up_to_level <= tree.depth:
        raise ValueError(f"level {up_to_level} outside 1..{tree.depth}")
    blocks = [tree.levels[0].wavelets]
    for j in range(1, up_to_level):
        blocks.append(unpack(tree, j) @ tree.levels[j].wavelets)
    return np.hstack(blocks)


def wavelet_levels(tree: WaveletTree, up_to_level: int) -> np.ndarray:
    """Level index of every column returned by :func:`unpack_wavelets`."""
    return np.concatenate([np.full(tree.levels[j].wavelets.shape[1], j)
                           for j in range(up_to_level)])


def basis_localization(tree: WaveletTree, threshold: float = 1e-6) -> List[float]:
    """Mean fraction of entries above ``threshold`` per unpacked scaling column."""
    out = []
    for j in range(1, tree.depth + 1):
        U = unpack(tree, j)
        out.append(float(np.mean(np.abs(U) > threshold)))
    return out


# --- Kronecker products of factor trees ---------------------------------------

class KroneckerBasis:
    """Lazy ``A (x) B`` with C-ordered joint index ``a * nB + b``."""

    def __init__(self, A, B):
        self.A = np.asarray(A)
        self.B = np.asarray(B)

    @property
    def shape(self):
        return (self.A.shape[0] * self.B.shape[0], self.A.shape[1] * self.B.shape[1])

    @property
    def n_columns(self) -> int:
        return self.shape[1]

    def matvec(self, w):
        W = np.asarray(w).reshape(self.A.shape[1], self.B.shape[1])
        return (self.A @ W @ self.B.T).ravel()

    def rmatvec(self, v):
        V = np.asarray(v).reshape(self.A.shape[0], self.B.shape[0])
        return (self.A.T @ V @ self.B).ravel()

    def toarray(self) -> np.ndarray:
        return np.kron(self.A, self.B)


def kronecker_basis(tree_x: WaveletTree, tree_y: WaveletTree, level: int) -> KroneckerBasis:
    if level > tree_x.depth or level > tree_y.depth or level < 0:
        raise ValueError(f"level {level} not reached by both factor trees "
                         f"(depths {tree_x.depth}, {tree_y.depth})")
    return KroneckerBasis(unpack(tree_x, level), unpack(tree_y, level))


def kronecker_tree(tree_x: WaveletTree, tree_y: WaveletTree) -> WaveletTree:
    """Joint tree whose scaling blocks are Kronecker products of the factors'.

    The joint wavelet block at level ``j`` spans the complement of
    ``Vx_{j+1} (x) Vy_{j+1}`` inside ``Vx_j (x) Vy_j``.
    """
    J = min(tree_x.depth, tree_y.depth)
    levels = []
    for j in range(J):
        ax, ay = tree_x.levels[j], tree_y.levels[j]
        wav = np.hstack([np.kron(ax.scaling, ay.wavelets),
                         np.kron(ax.wavelets, ay.scaling),
                         np.kron(ax.wavelets, ay.wavelets)])
        levels.append(WaveletLevel(np.kron(ax.scaling, ay.scaling), wav,
                                   np.kron(ax.compressed_op, ay.compressed_op)))
    return WaveletTree(levels, np.kron(tree_x.T0, tree_y.T0),
                       max(tree_x.epsilon, tree_y.epsilon))


# --- serialization ------------------------------------------------------------

def save_tree(tree: WaveletTree, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_triplets(d / "T0.txt", tree.T0, {"block": "T0"})
    for j, lv in enumerate(tree.levels):
        write_triplets(d / f"level{j:02d}_scaling.txt", lv.scaling, {"block": "scaling", "level": j})
        write_triplets(d / f"level{j:02d}_wavelets.txt", lv.wavelets, {"block": "wavelets", "level": j})
        write_triplets(d / f"level{j + 1:02d}_operator.txt", lv.compressed_op,
                       {"block": "operator", "level": j + 1})
    manifest = {"format": "mslmdp-dwt/1", "epsilon": tree.epsilon,
                "levels": tree.depth, "dims": tree.dims}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_tree(directory) -> WaveletTree:
    d = Path(directory)
    mpath = d / "manifest.json"
    if not mpath.exists():
        raise FileNotFoundError(f"no wavelet tree manifest in {d}")
    manifest = json.loads(mpath.read_text())
    T0 = read_triplets(d / "T0.txt")[0].toarray()
    levels = []
    for j in range(manifest["levels"]):
        levels.append(WaveletLevel(
            read_triplets(d / f"level{j:02d}_scaling.txt")[0].toarray(),
            read_triplets(d / f"level{j:02d}_wavelets.txt")[0].toarray(),
            read_triplets(d / f"level{j + 1:02d}_operator.txt")[0].toarray()))
    tree = WaveletTree(levels, T0, float(manifest["epsilon"]))
    if tree.dims != manifest["dims"]:
        raise ValueError(f"tree in {d} does not match its manifest dims")
    return tree
