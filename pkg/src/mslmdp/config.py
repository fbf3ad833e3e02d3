"""Scenario configuration: parsing, validation and derived objects."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from .dynamics import MODEL_REGISTRY, DynamicsModel, make_model, quadrotor_axis
from .environment import Box, Workspace, workspace_from_dict
from .errors import ConfigError
from .lmdp import CostModel

KINDS = ("sampled", "factored")
PLANTS = ("sde", "quadrotor")

DEFAULTS: Dict[str, Any] = {
    "seed": 0,
    "kind": "sampled",
    "h": 0.01,
    "truncation_radius": 4.0,
    "sampling": {"count_per_region": 100, "bandwidth": None},
    "tree": {"epsilon": 1e-4, "max_levels": 14},
    "cost": {"goal": 0.0, "free": 1.0, "obstacle": 0.0, "margin": 0.0},
    "planning": {"level": 0, "auto_fraction": 0.1, "tol": 1e-12, "sweep": False},
    "local": {"k_lp": 50, "budget_fraction": 0.0, "source": None, "report_fraction": 0.1},
    "rhc": {"k_rhc": 10, "tau_r": None, "dt_sim": None, "max_time": 20.0, "runs": 20,
            "start": None, "plant": "sde", "plant_noise": None, "log_stride": 10,
            "refine": True},
    "quadrotor": {},
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _positive(value, name, upper=None, allow_zero=False):
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a number, got {value!r}") from None
    ok = (v >= 0 if allow_zero else v > 0) and np.isfinite(v)
    if not ok or (upper is not None and v > upper):
        rng = f"[0, {upper}]" if allow_zero else f"(0, {upper if upper is not None else 'inf'})"
        raise ConfigError(f"{name}={value!r} outside {rng}")
    return v


def _int(value, name, lo=None, hi=None):
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    if (lo is not None and value < lo) or (hi is not None and value > hi):
        raise ConfigError(f"{name}={value} outside [{lo}, {hi}]")
    return int(value)


@dataclass(frozen=True)
class FactorGrid:
    """Tensor grid over one ``(position, velocity)`` factor."""

    pos_range: tuple
    vel_range: tuple
    pos_points: int
    vel_points: int

    @property
    def count(self) -> int:
        return self.pos_points * self.vel_points


@dataclass(frozen=True)
class CostField:
    """Piecewise-constant state cost over positions.

    ``obstacle`` applies inside obstacles grown by ``margin``; ``goal`` inside
    the goal disc; ``free`` everywhere else.
    """

    goal: float
    free: float
    obstacle: float
    margin: float
    workspace: Workspace

    def __call__(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        p = X[:, :self.workspace.pos_dim]
        q = np.full(len(X), self.free)
        if self.obstacle:
            hit = np.zeros(len(X), dtype=bool)
            for o in self.workspace.obstacles:
                if isinstance(o, Box):
                    hit |= Box(o.lo - self.margin, o.hi + self.margin).contains(p)
                else:
                    hit |= o.contains(p)
            q[hit] = self.obstacle
        if self.workspace.goal is not None:
            q[self.workspace.goal.contains(p)] = self.goal
        return q


@dataclass(frozen=True)
class ScenarioConfig:
    raw: dict
    name: str
    kind: str
    seed: int
    workspace: Workspace
    h: float
    truncation_radius: float
    epsilon: float
    max_levels: int
    level: Union[int, str]
    output: Optional[str]
    factors: Optional[FactorGrid] = None

    # -- sections as validated dicts ------------------------------------------
    @property
    def sampling(self) -> dict:
        return self.raw["sampling"]

    @property
    def planning(self) -> dict:
        return self.raw["planning"]

    @property
    def local(self) -> dict:
        return self.raw["local"]

    @property
    def rhc(self) -> dict:
        return self.raw["rhc"]

    @property
    def quadrotor(self) -> dict:
        return self.raw["quadrotor"]

    # -- derived objects ---------------------------------------------------------
    def model(self) -> DynamicsModel:
        m = self.raw["model"]
        return make_model(m["id"], **m.get("params", {}))

    def factor_models(self):
        """``(x, vx)`` and ``(y, vy)`` factor models of a decoupled planar system."""
        p = self.raw["model"].get("params", {})
        sigma, g = float(p.get("sigma", 0.5)), float(p.get("g", 9.81))
        return quadrotor_axis(sigma, g, 1.0), quadrotor_axis(sigma, g, -1.0)

    def cost_field(self) -> CostField:
        c = self.raw["cost"]
        return CostField(float(c["goal"]), float(c["free"]), float(c["obstacle"]),
                         float(c["margin"]), self.workspace)

    def cost_model(self) -> CostModel:
        return CostModel(self.cost_field(), self.h)

    @property
    def tau(self) -> float:
        return self.h * self.rhc["k_rhc"]

    @property
    def tau_r(self) -> float:
        t = self.rhc["tau_r"]
        return self.tau / 2 if t is None else float(t)

    @property
    def dt_sim(self) -> float:
        d = self.rhc["dt_sim"]
        return min(self.h / 10, 1e-3) if d is None else float(d)

    def with_overrides(self, seed: Optional[int] = None, level: Optional[int] = None,
                       output: Optional[str] = None) -> "ScenarioConfig":
        raw = copy.deepcopy(self.raw)
        if seed is not None:
            raw["seed"] = seed
        if level is not None:
            raw["planning"]["level"] = level
        if output is not None:
            raw["output"] = output
        return parse_config(raw)

    def digest(self, *sections: str) -> str:
        """Hash of the named config sections (all when none given), output excluded."""
        keys = sections or tuple(k for k in sorted(self.raw) if k not in ("output", "description"))
        blob = json.dumps({k: self.raw.get(k) for k in keys}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()


def parse_config(d: dict, base_dir: Optional[Path] = None) -> ScenarioConfig:
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    raw = _merge(DEFAULTS, d)
    for key in ("name", "workspace", "model"):
        if key not in raw:
            raise ConfigError(f"config is missing required key {key!r}")
    kind = raw["kind"]
    if kind not in KINDS:
        raise ConfigError(f"kind must be one of {KINDS}, got {kind!r}")
    seed = _int(raw["seed"], "seed", 0, 2 ** 63 - 1)
    ws = workspace_from_dict(raw["workspace"])
    m = raw["model"]
    if not isinstance(m, dict) or m.get("id") not in MODEL_REGISTRY:
        raise ConfigError(f"unknown model id {m.get('id') if isinstance(m, dict) else m!r}; "
                          f"known: {sorted(MODEL_REGISTRY)}")
    h = _positive(raw["h"], "h", upper=10.0)
    radius = _positive(raw["truncation_radius"], "truncation_radius", upper=20.0)
    eps = _positive(raw["tree"]["epsilon"], "tree.epsilon", upper=0.5)
    max_levels = _int(raw["tree"]["max_levels"], "tree.max_levels", 1, 64)
    level = raw["planning"]["level"]
    if level != "auto":
        level = _int(level, "planning.level", 0, max_levels)
    _positive(raw["planning"]["auto_fraction"], "planning.auto_fraction", upper=1.0)
    _positive(raw["planning"]["tol"], "planning.tol", upper=1e-2)
    for k in ("goal", "free", "obstacle", "margin"):
        _positive(raw["cost"][k], f"cost.{k}", allow_zero=True, upper=1e6)
    _int(raw["local"]["k_lp"], "local.k_lp", 1)
    _positive(raw["local"]["budget_fraction"], "local.budget_fraction", upper=1.0, allow_zero=True)
    _positive(raw["local"]["report_fraction"], "local.report_fraction", upper=1.0)
    r = raw["rhc"]
    _int(r["k_rhc"], "rhc.k_rhc", 1)
    _int(r["runs"], "rhc.runs", 0, 10_000)
    _int(r["log_stride"], "rhc.log_stride", 1)
    _positive(r["max_time"], "rhc.max_time", upper=1e5)
    if r["plant"] not in PLANTS:
        raise ConfigError(f"rhc.plant must be one of {PLANTS}")
    if r["plant_noise"] is not None:
        _positive(r["plant_noise"], "rhc.plant_noise", allow_zero=True, upper=100.0)
    factors = None
    if kind == "factored":
        f = raw.get("factors")
        if not isinstance(f, dict):
            raise ConfigError("factored scenarios need a 'factors' section")
        try:
            factors = FactorGrid(tuple(map(float, f["pos_range"])), tuple(map(float, f["vel_range"])),
                                 _int(f["pos_points"], "factors.pos_points", 2),
                                 _int(f["vel_points"], "factors.vel_points", 2))
        except KeyError as exc:
            raise ConfigError(f"factors section lacks {exc}") from None
        if m["id"] != "reduced_quadrotor":
            raise ConfigError("factored scenarios use the reduced_quadrotor model")
    else:
        _int(raw["sampling"]["count_per_region"], "sampling.count_per_region", 1)
    cfg = ScenarioConfig(raw=raw, name=str(raw["name"]), kind=kind, seed=seed, workspace=ws,
                         h=h, truncation_radius=radius, epsilon=eps, max_levels=max_levels,
                         level=level, output=raw.get("output"), factors=factors)
    # model parameters are checked by constructing the model once
    cfg.model()
    if r["start"] is not None and len(r["start"]) != cfg.model().state_dim:
        raise ConfigError("rhc.start must have one entry per state coordinate")
    tau_r, dt = cfg.tau_r, cfg.dt_sim
    if not 0 < tau_r <= cfg.tau * (1 + 1e-12):
        raise ConfigError(f"rhc.tau_r={tau_r} must lie in (0, h*k_rhc={cfg.tau}]")
    if dt > h / 10 * (1 + 1e-12):
        raise ConfigError(f"rhc.dt_sim={dt} exceeds h/10")
    n_sub = round(tau_r / dt)
    if n_sub < 1 or abs(n_sub * dt - tau_r) > 1e-12 * max(1.0, tau_r):
        raise ConfigError(f"rhc.dt_sim={dt} must divide tau_r={tau_r}")
    if r["plant"] == "quadrotor" and dt > 1e-3 + 1e-15:
        raise ConfigError("quadrotor plant needs rhc.dt_sim <= 1e-3")
    return cfg


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    return parse_config(d, path.parent)
