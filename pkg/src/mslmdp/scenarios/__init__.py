"""Bundled scenarios: config, tolerance-tagged expected metrics and a description.

The JSON files under ``data/`` are generated by :func:`write_bundles` and
checked against the generators by the test suite, so the code here is the
single source of truth for every bundle.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from ..config import ScenarioConfig, parse_config
from ..environment import Box, Region, workspace_to_dict, Workspace, Disc
from ..errors import ConfigError

DATA_DIR = Path(__file__).parent / "data"
# plus-shaped arrangement: centre then east, west, north, south
PLUS = ((0, 0), (1, 0), (-1, 0), (0, 1), (0, -1))


@dataclass
class ScenarioBundle:
    name: str
    config: dict
    expected: dict
    description: str

    def scenario(self) -> ScenarioConfig:
        return parse_config(self.config)


# --- fractal rooms ---------------------------------------------------------------------

def room_centers(scale: str, pitch: float) -> List[Tuple[float, float]]:
    """Rooms in a plus; at full scale, five such plusses arranged in a plus."""
    groups = ((0, 0),) if scale == "desk" else PLUS
    return [(gx * 3 * pitch + rx * pitch, gy * 3 * pitch + ry * pitch)
            for gx, gy in groups for rx, ry in PLUS]


def fractal_workspace(scale: str = "desk", room: float = 1.0, wall: float = 0.5,
                      door: float = 0.4) -> Tuple[List[Tuple[float, float]], Workspace]:
    """Square rooms joined by corridors of width ``door`` through walls of width ``wall``.

    Each room owns its square plus the half of every corridor on its side,
    and that union is its sampling region.  Obstacles fill the rest of the
    bounding box, cut along the coordinates of all free-space edges.
    """
    if scale not in ("desk", "full"):
        raise ConfigError(f"unknown scale {scale!r}")
    pitch = room + wall
    rooms = room_centers(scale, pitch)
    half = room / 2
    owned: Dict[int, List[Box]] = {i: [] for i in range(len(rooms))}
    for i, (x, y) in enumerate(rooms):
        for j, (x2, y2) in enumerate(rooms):
            if j <= i:
                continue
            for axis in (0, 1):
                a, b = (x, y), (x2, y2)
                if abs(abs(a[axis] - b[axis]) - pitch) > 1e-9 or abs(a[1 - axis] - b[1 - axis]) > 1e-9:
                    continue
                lo_room, hi_room = (i, j) if a[axis] < b[axis] else (j, i)
                start, mid = min(a[axis], b[axis]) + half, (a[axis] + b[axis]) / 2
                end, c = max(a[axis], b[axis]) - half, a[1 - axis]
                for owner, (s, e) in ((lo_room, (start, mid)), (hi_room, (mid, end))):
                    lo, hi = [0.0, 0.0], [0.0, 0.0]
                    lo[axis], hi[axis] = s, e
                    lo[1 - axis], hi[1 - axis] = c - door / 2, c + door / 2
                    owned[owner].append(Box(lo, hi))
    regions, free = [], []
    for i, (x, y) in enumerate(rooms):
        boxes = (Box([x - half, y - half], [x + half, y + half]),) + tuple(owned[i])
        regions.append(Region(f"room{i}", boxes))
        free.extend(boxes)
    xs = sorted({float(v) for b in free for v in (b.lo[0], b.hi[0])})
    ys = sorted({float(v) for b in free for v in (b.lo[1], b.hi[1])})
    obstacles = []
    for i in range(len(xs) - 1):
        run = None
        # vertically adjacent blocked cells merge into one box per column run
        for j in range(len(ys)):
            blocked = j < len(ys) - 1 and not any(
                b.contains([(xs[i] + xs[i + 1]) / 2, (ys[j] + ys[j + 1]) / 2]) for b in free)
            if blocked and run is None:
                run = j
            elif not blocked and run is not None:
                obstacles.append(Box([xs[i], ys[run]], [xs[i + 1], ys[j]]))
                run = None
    bounds = Box([xs[0], ys[0]], [xs[-1], ys[-1]])
    return rooms, Workspace(bounds, tuple(obstacles), None, tuple(regions))


def fractal_scenario(scale: str = "desk") -> ScenarioBundle:
    rooms, ws = fractal_workspace(scale)
    # goal in the easternmost room, start in the westernmost
    east = max(rooms, key=lambda r: (r[0], -abs(r[1])))
    west = min(rooms, key=lambda r: (r[0], abs(r[1])))
    wsd = workspace_to_dict(ws)
    wsd["goal"] = {"center": list(east), "radius": 0.5}
    n = 100 * len(rooms)
    name = f"fractal_{scale}"
    config = {
        "name": name, "kind": "sampled", "seed": 0,
        "workspace": wsd,
        "model": {"id": "single_integrator", "params": {"dim": 2, "sigma": 1.0}},
        "h": 0.01, "truncation_radius": 4.0,
        "sampling": {"count_per_region": 100, "bandwidth": None},
        "tree": {"epsilon": 1e-4, "max_levels": 14},
        "cost": {"goal": 0.0, "free": 1.0, "obstacle": 0.0, "margin": 0.0},
        "planning": {"level": "auto", "auto_fraction": 0.1, "tol": 1e-12, "sweep": scale == "desk"},
        "local": {"k_lp": 128, "budget_fraction": 0.2, "source": list(west), "report_fraction": 0.1},
        "rhc": {"k_rhc": 10, "tau_r": 0.05, "dt_sim": 1e-3, "max_time": 20.0, "runs": 20,
                "start": list(west), "plant": "sde", "plant_noise": 0.1, "log_stride": 10,
                "refine": True},
    }
    expected = {
        "discretize.states": {"value": n, "abs": 0},
        # regression bounds from a reference run; 100 samples per room are too
        # sparse for the tight per-state tolerances met by dense integrator grids
        "discretize.consistency.mean_error_mean": {"max": 0.05},
        "discretize.consistency.cov_error_mean": {"max": 0.6},
        "plan.states": {"value": n, "abs": 0},
        "plan.bases": {"max": 0.1 * n},
    }
    if scale == "desk":
        expected.update({
            "plan.rms_value_error": {"max": 1.0},
            "plan.local.reduction": {"min": 0.2},
            "simulate.success_rate": {"min": 0.8},
            "simulate.collisions": {"max": 4},
        })
    rows = "one plus-shaped group of five rooms" if scale == "desk" else \
        "five plus-shaped groups of five rooms, themselves arranged in a plus"
    description = f"""# {name}

Point robot (two-dimensional single integrator, sigma = 1, h = 0.01) in
{rows}.  Rooms are 1 m squares separated by 0.5 m walls and joined by
0.4 m wide corridors; 100 states are sampled uniformly in each room
(together with its half of every adjoining corridor), giving {n} states.

The goal is a disc of radius 0.5 m at the centre of the easternmost room
and the robot starts at the centre of the westernmost room.  State cost
is 0 in the goal and 1 elsewhere; walls are never sampled so they carry
no separate cost.

Planning uses the first level with at most 10 % of the states.  Local
refinement spends 20 % of the remaining wavelets around the occupancy of
a 128-step horizon.  Closed-loop runs apply the receding-horizon controller
(k_RHC = 10, tau_r = 0.05 s) to the SDE with noise level 0.1 (the
planning model keeps sigma = 1).

The room geometry is an approximate reconstruction: room, wall and door
sizes are chosen for this bundle, not measured.
"""
    if scale == "full":
        # dense tree blocks at N = 2500
        description += "\nThe abstract stage takes about ten minutes on one CPU core.\n"
    return ScenarioBundle(name, config, expected, description)


# --- quadrotor -------------------------------------------------------------------------

def quadrotor_workspace(task: int, side: float = 5.0, wall: float = 0.3) -> Tuple[Workspace, list]:
    """Walled square with a central block; returns the workspace and the start position."""
    if task not in (1, 2):
        raise ConfigError(f"unknown quadrotor task {task!r}")
    L = side
    frame = (Box([0, 0], [L, wall]), Box([0, L - wall], [L, L]),
             Box([0, 0], [wall, L]), Box([L - wall, 0], [L, L]))
    block = Box([1.7, 1.7], [3.3, 3.3])
    if task == 1:
        goal, start = Disc(np.array([L - 0.9, L - 0.9]), 0.5), [0.8, 0.8]
    else:
        goal, start = Disc(np.array([L - 0.9, 0.9]), 0.5), [0.8, L - 0.8]
    return Workspace(Box([0, 0], [L, L]), frame + (block,), goal), start


def quadrotor_scenario(task: int = 1, level: int = 4, scale: str = "desk") -> ScenarioBundle:
    if not 0 <= int(level) <= 4:
        raise ConfigError("quadrotor level must lie in 0..4")
    if scale not in ("desk", "full"):
        raise ConfigError(f"unknown scale {scale!r}")
    ws, start = quadrotor_workspace(task)
    pos_points, vel_points = (10, 5) if scale == "desk" else (20, 10)
    n_factor = pos_points * vel_points
    name = f"quadrotor_task{task}_level{level}" + ("" if scale == "desk" else "_full")
    config = {
        "name": name, "kind": "factored", "seed": 0,
        "workspace": workspace_to_dict(ws),
        "model": {"id": "reduced_quadrotor", "params": {"sigma": 0.05, "g": 9.81}},
        "h": 1.0, "truncation_radius": 4.0,
        "factors": {"pos_range": [0.0, 5.0], "vel_range": [-1.0, 1.0],
                    "pos_points": pos_points, "vel_points": vel_points},
        "tree": {"epsilon": 1e-3 if scale == "desk" else 5e-7, "max_levels": 14},
        "cost": {"goal": 0.0, "free": 0.5, "obstacle": 8.0, "margin": 0.2},
        # the receding-horizon loop only needs the policy, not a tight eigenvector
        "planning": {"level": int(level), "tol": 1e-9, "sweep": False},
        "local": {"k_lp": 50, "budget_fraction": 0.0},
        "rhc": {"k_rhc": 1, "tau_r": 0.5, "dt_sim": 1e-3, "max_time": 60.0, "runs": 20,
                "start": start + [0.0, 0.0], "plant": "quadrotor", "plant_noise": 0.01,
                "log_stride": 50, "refine": False},
    }
    expected = {
        "discretize.states": {"value": n_factor ** 2, "abs": 0},
        "abstract.dims.0": {"value": n_factor ** 2, "abs": 0},
        "plan.level": {"value": int(level), "abs": 0},
    }
    if scale == "full":
        expected["abstract.dims.4"] = {"value": 1444, "rel": 0.2}
    else:
        expected["simulate.successes"] = {"min": 16}
    layout = ("start in the south-west corner, goal disc in the north-east corner"
              if task == 1 else "start in the north-west corner, goal disc in the south-east corner")
    description = f"""# {name}

Planar quadrotor task {task}: a 5 m square room with 0.3 m walls and a
central 1.6 m square block; {layout}.  The layout is an approximate
reconstruction of a two-obstacle-course comparison, not a measured map.

Planning uses the hover-linearized model (x, y, vx, vy) with sigma = 0.05
and h = 1 s.  It decouples into (x, vx) and (y, vy) factors, each
discretized on a {pos_points} x {vel_points} grid over [0, 5] m x [-1, 1] m/s,
so the joint chain has {n_factor ** 2} states.  Diffusion wavelet trees
(epsilon = {config['tree']['epsilon']:g}) are built per factor and planning
happens on their Kronecker product at level {level}.

State cost is 0.5 in free space, 8 within 0.2 m of any obstacle and 0 in
the goal.  The controller hands desired pitch and roll angles to the
12-state rigid-body quadrotor with its attitude and altitude PD loops,
re-planning every 0.5 s, with a planar velocity disturbance of intensity
0.01 g.  Grid states inside obstacles are kept: they carry the obstacle
cost rather than being removed, which preserves the product structure.
"""
    return ScenarioBundle(name, config, expected, description)


# --- bundle registry ---------------------------------------------------------------

def all_bundles() -> List[ScenarioBundle]:
    out = [fractal_scenario("desk"), fractal_scenario("full")]
    for task in (1, 2):
        for level in (0, 4):
            out.append(quadrotor_scenario(task, level))
    out.append(quadrotor_scenario(1, 4, "full"))
    return out


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def bundle_files(bundle: ScenarioBundle) -> Dict[str, str]:
    return {"config.json": _dump(bundle.config), "expected.json": _dump(bundle.expected),
            "description.md": bundle.description}


def write_bundles(directory=DATA_DIR) -> None:
    directory = Path(directory)
    bundles = all_bundles()
    for b in bundles:
        d = directory / b.name
        d.mkdir(parents=True, exist_ok=True)
        for fname, text in bundle_files(b).items():
            (d / fname).write_text(text)
    (directory / "manifest.json").write_text(_dump({"bundles": [b.name for b in bundles]}))


def bundle_names() -> List[str]:
    return json.loads((DATA_DIR / "manifest.json").read_text())["bundles"]


def bundle_dir(name: str) -> Path:
    d = DATA_DIR / name
    if not d.is_dir():
        raise ConfigError(f"unknown scenario {name!r}; available: {bundle_names()}")
    return d


def load_bundle(name: str) -> ScenarioBundle:
    d = bundle_dir(name)
    return ScenarioBundle(name, json.loads((d / "config.json").read_text()),
                          json.loads((d / "expected.json").read_text()),
                          (d / "description.md").read_text())


# --- expected-metric checks --------------------------------------------------------

def lookup(reports: dict, key: str):
    """Resolve ``stage.path.to.value`` (list indices allowed) in stage summaries."""
    stage, *path = key.split(".")
    node = reports[stage]["summary"]
    for p in path:
        node = node[int(p)] if isinstance(node, list) else node[p]
    return node


def check_metric(value, bound: dict) -> bool:
    if value is None or not np.isfinite(value):
        return False
    ok = True
    if "value" in bound:
        target = bound["value"]
        slack = max(bound.get("abs", 0.0), bound.get("rel", 0.0) * abs(target))
        ok &= abs(value - target) <= slack
    if "min" in bound:
        ok &= value >= bound["min"]
    if "max" in bound:
        ok &= value <= bound["max"]
    return bool(ok)


def check_expected(expected: dict, reports: dict) -> List[Tuple[str, bool, object]]:
    """Evaluate each expected metric present in ``reports`` (stage manifests)."""
    out = []
    for key, bound in sorted(expected.items()):
        if key.split(".")[0] not in reports:
            continue
        try:
            value = lookup(reports, key)
        except (KeyError, IndexError, TypeError):
            out.append((key, False, None))
            continue
        out.append((key, check_metric(value, bound), value))
    return out
