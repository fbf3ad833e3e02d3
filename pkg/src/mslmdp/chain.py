"""Passive Markov chain over a sample set (Gaussian approximation).

Each row is the linearized SDE's Gaussian one-step law evaluated at the
samples, importance-weighted by the inverse sample density, truncated at a
Mahalanobis radius and renormalized.
"""
from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .dynamics import DynamicsModel, gramian_nonsingularity_check, integrate_moments, linearize
from .environment import SampleSet
from .errors import IsolatedStateError, UncontrollableError

DEFAULT_TRUNCATION_RADIUS = 4.0


@dataclass
class MarkovChain:
    P: sp.csr_matrix
    h: float
    samples: Optional[SampleSet]
    truncation_radius: float

    @property
    def n(self) -> int:
        return self.P.shape[0]

    @property
    def T(self) -> sp.csr_matrix:
        """Column-stochastic transpose used by the wavelet construction."""
        return self.P.T.tocsr()


@dataclass
class ConsistencyReport:
    mean_error: np.ndarray
    cov_error: np.ndarray
    row_sum_error: np.ndarray
    interior: np.ndarray

    def summary(self, interior_only: bool = True) -> dict:
        mask = self.interior if interior_only and self.interior.any() else np.ones_like(self.interior)
        return {
            "states": int(mask.sum()),
            "mean_error_max": float(self.mean_error[mask].max()),
            "mean_error_mean": float(self.mean_error[mask].mean()),
            "cov_error_max": float(self.cov_error[mask].max()),
            "cov_error_mean": float(self.cov_error[mask].mean()),
            "row_sum_error_max": float(self.row_sum_error.max()),
        }


def _cholesky_inverse(sigma):
    L = np.linalg.cholesky(sigma)
    return np.linalg.inv(L)


def gaussian_row(anchor, model: DynamicsModel, h: float, samples: SampleSet,
                 truncation_radius: float = DEFAULT_TRUNCATION_RADIUS,
                 weighted: bool = True):
    """Sparse one-step passive law from ``anchor``.

    Returns ``(indices, probabilities)``; an empty index array means every
    candidate was truncated.
    """
    lin = linearize(model, anchor)
    mom = integrate_moments(lin, anchor, h)
    Linv = _cholesky_inverse(mom.sigma)
    white = (samples.points - mom.mu) @ Linv.T
    d2 = np.einsum("ij,ij->i", white, white)
    idx = np.flatnonzero(d2 <= truncation_radius ** 2)
    if idx.size == 0:
        return idx, np.empty(0)
    w = np.exp(-0.5 * d2[idx])
    if weighted:
        w = w / samples.density[idx]
    return idx, w / w.sum()


def build_chain(samples: SampleSet, model: DynamicsModel, h: float,
                truncation_radius: float = DEFAULT_TRUNCATION_RADIUS,
                full_check: bool = False) -> MarkovChain:
    n = len(samples)
    check_idx = np.arange(n) if full_check else np.unique(
        np.linspace(0, n - 1, min(n, 50)).round().astype(int))
    for i in check_idx:
        chk = gramian_nonsingularity_check(linearize(model, samples.points[i]), h)
        if not chk.ok:
            raise UncontrollableError(
                f"singular one-step covariance at state {i} (min eig {chk.min_eig:.3e})")
    rows, cols, vals, isolated = [], [], [], []
    for i in range(n):
        idx, p = gaussian_row(samples.points[i], model, h, samples, truncation_radius)
        if idx.size == 0:
            isolated.append(i)
            continue
        rows.append(np.full(idx.size, i))
        cols.append(idx)
        vals.append(p)
    if isolated:
        raise IsolatedStateError(
            f"{len(isolated)} state(s) have no transition within the truncation radius: "
            f"{isolated[:20]}", isolated)
    P = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n))
    P.sort_indices()
    return MarkovChain(P, float(h), samples, float(truncation_radius))


def check_local_consistency(chain: MarkovChain, model: DynamicsModel,
                            samples: Optional[SampleSet] = None) -> ConsistencyReport:
    """Compare per-state chain moments with the SDE's one-step moments.

    A state is flagged interior when its truncation ellipsoid stays inside
    the bounding box of the samples (boundary rows are one-sided by
    construction).
    """
    samples = samples if samples is not None else chain.samples
    X = samples.points
    lo, hi = X.min(axis=0), X.max(axis=0)
    P = chain.P.tocsr()
    n = chain.n
    mean_err = np.empty(n)
    cov_err = np.empty(n)
    interior = np.empty(n, dtype=bool)
    row_sums = np.asarray(P.sum(axis=1)).ravel()
    for i in range(n):
        start, stop = P.indptr[i], P.indptr[i + 1]
        idx, p = P.indices[start:stop], P.data[start:stop]
        ybar = p @ X[idx]
        dev = X[idx] - ybar
        cov = (dev * p[:, None]).T @ dev
        mom = integrate_moments(linearize(model, X[i]), X[i], chain.h)
        mean_err[i] = np.linalg.norm(ybar - mom.mu)
        cov_err[i] = np.linalg.norm(cov - mom.sigma) / np.linalg.norm(mom.sigma)
        half = chain.truncation_radius * np.sqrt(np.diag(mom.sigma))
        interior[i] = np.all(mom.mu - half >= lo) and np.all(mom.mu + half <= hi)
    return ConsistencyReport(mean_err, cov_err, np.abs(row_sums - 1.0), interior)


# --- triplet serialization --------------------------------------------------

def write_triplets(path, M, header: dict):
    """Write a sparse matrix as ``row col value`` lines with a key=value header."""
    M = sp.coo_matrix(M)
    order = np.lexsort((M.col, M.row))
    buf = io.StringIO()
    buf.write("# " + " ".join(f"{k}={v!r}" for k, v in header.items()) + "\n")
    buf.write(f"# shape={M.shape[0]!r} {M.shape[1]!r}\n")
    for r, c, v in zip(M.row[order], M.col[order], M.data[order]):
        buf.write(f"{r} {c} {float(v)!r}\n")
    Path(path).write_text(buf.getvalue())


def read_triplets(path):
    header, shape = {}, None
    rows, cols, vals = [], [], []
    for line in Path(path).read_text().splitlines():
        if line.startswith("# shape="):
            a, b = line[len("# shape="):].split()
            shape = (int(a), int(b))
        elif line.startswith("#"):
            for tok in line[1:].split():
                k, v = tok.split("=", 1)
                header[k] = _parse_scalar(v)
        elif line.strip():
            r, c, v = line.split()
            rows.append(int(r))
            cols.append(int(c))
            vals.append(float(v))
    M = sp.csr_matrix((vals, (rows, cols)), shape=shape)
    M.sort_indices()
    return M, header


def _parse_scalar(v: str):
    v = v.strip("'\"")
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            pass
    return v


def save_chain(chain: MarkovChain, path):
    write_triplets(path, chain.P, {"N": chain.n, "h": chain.h,
                                   "truncation_radius": chain.truncation_radius})


def load_chain(path, samples: Optional[SampleSet] = None) -> MarkovChain:
    P, header = read_triplets(path)
    return MarkovChain(P, float(header["h"]), samples, float(header["truncation_radius"]))


# --- decoupled products -----------------------------------------------------------

def product_samples(first: SampleSet, second: SampleSet, order=None) -> SampleSet:
    """Joint samples with index ``a * len(second) + b``.

    ``order`` permutes the concatenated coordinates ``(first, second)``
    into the joint state layout.
    """
    n2 = len(second)
    pts = np.hstack([np.repeat(first.points, n2, axis=0), np.tile(second.points, (len(first), 1))])
    if order is not None:
        pts = pts[:, list(order)]
    return SampleSet(pts, np.kron(first.density, second.density))


class KroneckerChain:
    """Joint chain ``P1 (x) P2`` of two independent factors, never formed densely."""

    def __init__(self, first: MarkovChain, second: MarkovChain, samples: Optional[SampleSet] = None):
        if first.h != second.h:
            raise ValueError("factor chains must share the time step")
        self.first = first
        self.second = second
        self.h = first.h
        self.samples = samples
        self.truncation_radius = first.truncation_radius

    @property
    def n(self) -> int:
        return self.first.n * self.second.n

    @property
    def shape(self):
        return (self.n, self.n)

    def _grid(self, v):
        return np.asarray(v, dtype=float).reshape(self.first.n, self.second.n)

    def __matmul__(self, z):
        """``P z``."""
        return (self.first.P @ (self.second.P @ self._grid(z).T).T).ravel()

    def rmatvec(self, p):
        """``p P`` (propagate a distribution one step)."""
        R = self._grid(p)
        return (self.first.P.T @ (self.second.P.T @ R.T).T).ravel()

    @property
    def P(self) -> sp.csr_matrix:
        out = sp.kron(self.first.P, self.second.P, format="csr")
        out.sort_indices()
        return out
