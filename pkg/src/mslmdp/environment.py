"""Workspaces with obstacles, collision checks and sample sets.

Obstacles only ever constrain the position coordinates of a state (the
first ``pos_dim`` entries); any trailing coordinates such as velocities are
merely box-bounded.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .errors import ConfigError, SamplingError


@dataclass(frozen=True)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if lo.shape != hi.shape or np.any(hi < lo):
            raise ConfigError(f"degenerate box lo={lo} hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def contains(self, p) -> np.ndarray:
        """Closed-set membership for one point or a stack of points."""
        p = np.asarray(p, dtype=float)
        return np.all((p >= self.lo) & (p <= self.hi), axis=-1)

    @property
    def volume(self) -> float:
        return float(np.prod(self.hi - self.lo))

    def to_dict(self):
        return {"type": "box", "lo": self.lo.tolist(), "hi": self.hi.tolist()}


@dataclass(frozen=True)
class ConvexPolygon:
    """Planar convex polygon given by its vertices (either orientation)."""

    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
            raise ConfigError("polygon needs at least three 2-D vertices")
        area2 = np.sum(v[:, 0] * np.roll(v[:, 1], -1) - np.roll(v[:, 0], -1) * v[:, 1])
        if area2 == 0:
            raise ConfigError("polygon has zero area")
        if area2 < 0:
            v = v[::-1].copy()
        object.__setattr__(self, "vertices", v)

    def halfplanes(self):
        """Outward normals ``n`` and offsets ``b`` with ``n.p <= b`` inside."""
        v = self.vertices
        e = np.roll(v, -1, axis=0) - v
        normals = np.column_stack([e[:, 1], -e[:, 0]])
        offsets = np.sum(normals * v, axis=1)
        return normals, offsets

    def contains(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        normals, offsets = self.halfplanes()
        return np.all(p @ normals.T <= offsets, axis=-1)

    def to_dict(self):
        return {"type": "polygon", "vertices": self.vertices.tolist()}


@dataclass(frozen=True)
class Disc:
    center: np.ndarray
    radius: float

    def contains(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return np.sum((p - self.center) ** 2, axis=-1) <= self.radius ** 2

    def to_dict(self):
        return {"center": np.asarray(self.center).tolist(), "radius": self.radius}


@dataclass(frozen=True)
class Region:
    """A sampling region: union of boxes over the full state."""

    name: str
    boxes: tuple

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        hit = np.zeros(x.shape[:-1], dtype=bool)
        for b in self.boxes:
            hit |= b.contains(x)
        return hit

    def bounding_box(self) -> Box:
        lo = np.min([b.lo for b in self.boxes], axis=0)
        hi = np.max([b.hi for b in self.boxes], axis=0)
        return Box(lo, hi)


@dataclass(frozen=True)
class Workspace:
    bounds: Box
    obstacles: tuple = ()
    goal: Optional[Disc] = None
    regions: tuple = ()
    state_bounds: Optional[Box] = None

    def __post_init__(self):
        if self.goal is not None:
            c = np.asarray(self.goal.center, dtype=float)
            if not self.bounds.contains(c) or any(o.contains(c) for o in self.obstacles):
                raise ConfigError("goal region must lie inside bounds and outside obstacles")

    @property
    def pos_dim(self) -> int:
        return self.bounds.lo.size

    def in_goal(self, x) -> bool:
        if self.goal is None:
            return False
        return bool(self.goal.contains(np.asarray(x)[..., :self.pos_dim]))


def collision_check(ws: Workspace, x) -> np.ndarray:
    """True where the position part of ``x`` is in bounds and strictly
    outside every obstacle.  Accepts a single state or an ``(n, d)`` stack.
    """
    x = np.asarray(x, dtype=float)
    p = x[..., :ws.pos_dim]
    free = ws.bounds.contains(p)
    for obs in ws.obstacles:
        free &= ~obs.contains(p)
    if x.ndim == 1:
        return bool(free)
    return free


@dataclass
class SampleSet:
    points: np.ndarray
    density: np.ndarray
    region_labels: Optional[np.ndarray] = None
    seed: Optional[int] = None

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.density = np.asarray(self.density, dtype=float)
        if self.density.shape != (len(self.points),):
            raise ConfigError("density must have one entry per point")
        if not np.all(np.isfinite(self.density)) or np.any(self.density <= 0):
            raise ConfigError("densities must be strictly positive and finite")

    def __len__(self):
        return len(self.points)

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def scott_bandwidth(points) -> np.ndarray:
    points = np.atleast_2d(points)
    n, d = points.shape
    std = points.std(axis=0, ddof=1)
    std = np.where(std > 0, std, 1.0)
    return std * n ** (-1.0 / (d + 4))


def kde_density(points, bandwidth=None, chunk: int = 1024) -> np.ndarray:
    """Gaussian kernel density estimate evaluated at the samples themselves.

    ``bandwidth`` may be a scalar or one value per coordinate; ``None``
    selects the Scott-style default.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n, d = points.shape
    if n < 2:
        raise ValueError("kernel density needs at least two samples")
    bw = scott_bandwidth(points) if bandwidth is None else np.broadcast_to(
        np.asarray(bandwidth, dtype=float), (d,))
    if np.any(bw <= 0):
        raise ValueError("bandwidth must be positive")
    scaled = points / bw
    norm = n * np.prod(bw) * (2.0 * np.pi) ** (d / 2.0)
    out = np.empty(n)
    for s in range(0, n, chunk):
        diff = scaled[s:s + chunk, None, :] - scaled[None, :, :]
        out[s:s + chunk] = np.exp(-0.5 * np.sum(diff * diff, axis=-1)).sum(axis=1)
    return out / norm


def sample_states(ws: Workspace, count_per_region: int, seed: int,
                  rng: Optional[np.random.Generator] = None, bandwidth=None,
                  min_trials: int = 100_000) -> SampleSet:
    """Uniform rejection sampling of ``count_per_region`` states per region."""
    if count_per_region < 1:
        raise ConfigError("count_per_region must be positive")
    regions = ws.regions or (Region("bounds", (ws.state_bounds or ws.bounds,)),)
    rng = np.random.default_rng(seed) if rng is None else rng
    pts, labels = [], []
    for label, region in enumerate(regions):
        bb = region.bounding_box()
        accepted: List[np.ndarray] = []
        got = trials = 0
        batch = max(64, 4 * count_per_region)
        while got < count_per_region:
            cand = bb.lo + (bb.hi - bb.lo) * rng.random((batch, bb.lo.size))
            ok = region.contains(cand) & collision_check(ws, cand)
            trials += batch
            take = cand[ok][:count_per_region - got]
            accepted.append(take)
            got += len(take)
            if trials >= min_trials and got < count_per_region and got / trials < 1e-4:
                raise SamplingError(
                    f"acceptance rate {got / trials:.2e} below 1e-4 in region {region.name!r}")
        pts.append(np.concatenate(accepted))
        labels.append(np.full(count_per_region, label))
    points = np.concatenate(pts)
    density = kde_density(points, bandwidth) if len(points) > 1 else np.ones(1)
    return SampleSet(points, density, np.concatenate(labels), seed)


def grid_samples(lo: Sequence[float], hi: Sequence[float], counts: Sequence[int]) -> SampleSet:
    """Tensor grid (C order, last coordinate fastest) with its exact uniform density."""
    axes = [np.linspace(a, b, n) for a, b, n in zip(lo, hi, counts)]
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.column_stack([m.ravel() for m in mesh])
    vol = float(np.prod(np.asarray(hi, float) - np.asarray(lo, float)))
    density = np.full(len(points), 1.0 / vol if vol > 0 else 1.0)
    return SampleSet(points, density)


def obstacle_from_dict(d) -> object:
    kind = d.get("type", "box")
    if kind == "box":
        return Box(d["lo"], d["hi"])
    if kind == "polygon":
        return ConvexPolygon(d["vertices"])
    raise ConfigError(f"unknown obstacle type {kind!r}")


def workspace_from_dict(d) -> Workspace:
    try:
        bounds = Box(*np.asarray(d["bounds"], dtype=float).T)
        obstacles = tuple(obstacle_from_dict(o) for o in d.get("obstacles", []))
        goal = None
        if d.get("goal") is not None:
            goal = Disc(np.asarray(d["goal"]["center"], dtype=float), float(d["goal"]["radius"]))
        regions = tuple(
            Region(r.get("name", f"region{i}"),
                   tuple(Box(b[0], b[1]) for b in r["boxes"]))
            for i, r in enumerate(d.get("regions", [])))
        state_bounds = None
        if d.get("state_bounds") is not None:
            state_bounds = Box(*np.asarray(d["state_bounds"], dtype=float).T)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed workspace description: {exc}") from None
    return Workspace(bounds, obstacles, goal, regions, state_bounds)


def workspace_to_dict(ws: Workspace) -> dict:
    out = {
        "bounds": np.column_stack([ws.bounds.lo, ws.bounds.hi]).tolist(),
        "obstacles": [o.to_dict() for o in ws.obstacles],
        "goal": ws.goal.to_dict() if ws.goal is not None else None,
        "regions": [{"name": r.name, "boxes": [[b.lo.tolist(), b.hi.tolist()] for b in r.boxes]}
                    for r in ws.regions],
    }
    if ws.state_bounds is not None:
        out["state_bounds"] = np.column_stack([ws.state_bounds.lo, ws.state_bounds.hi]).tolist()
    return out


def save_samples(samples: SampleSet, path) -> None:
    """CSV with coordinates, density and region label (``-1`` when unlabeled)."""
    d = samples.dim
    labels = (samples.region_labels if samples.region_labels is not None
              else np.full(len(samples), -1))
    lines = [",".join([f"x{i}" for i in range(d)] + ["density", "label"])]
    for p, dens, lab in zip(samples.points, samples.density, labels):
        lines.append(",".join([repr(float(v)) for v in p] + [repr(float(dens)), str(int(lab))]))
    Path(path).write_text("\n".join(lines) + "\n")


def load_samples(path, seed: Optional[int] = None) -> SampleSet:
    rows = Path(path).read_text().splitlines()
    data = np.array([[float(v) for v in r.split(",")] for r in rows[1:] if r.strip()])
    labels = data[:, -1].astype(int)
    return SampleSet(data[:, :-2], data[:, -2],
                     None if np.all(labels < 0) else labels, seed)
