"""Pipeline stages with on-disk artifacts: discretize, abstract, plan, simulate.

Every stage writes into a scratch directory and moves its outputs into
place only after succeeding.  Each stage leaves a JSON manifest holding
the SHA-256 of its files and a digest of the config sections it consumed;
downstream stages refuse to run on missing or stale upstream artifacts.
Wall-clock timestamps go to ``metadata.json`` only, so every other output
is byte-identical across re-runs with the same config and seed.
"""
from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import io
import json
import logging
import math
import os
import shutil
import tempfile
from contextlib import contextmanager
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import plotting
from .chain import (KroneckerChain, build_chain, check_local_consistency, gaussian_row,
                    load_chain, product_samples, save_chain)
from .config import ScenarioConfig
from .dwt import build_tree, load_tree, save_tree
from .environment import grid_samples, load_samples, sample_states, save_samples
from .errors import ConfigError, DependencyError, NumericalError
from .lmdp import (build_Q, cold_start, global_plan, kronecker_plan, level0_residual,
                   rms_value_error, solve_direct, DesirabilitySolution, optimal_policy)
from .local import initial_transition, occupancy_compressed, refine, score_and_select
from .rhc import LocalRefiner, Planner, QuadrotorRunner, SdeRunner, rhc_loop
from .sim import QuadrotorPlant, SdePlant, substream

log = logging.getLogger(__name__)

STAGES = ("discretize", "abstract", "plan", "simulate")
SECTIONS = {
    "discretize": ("kind", "seed", "workspace", "model", "h", "truncation_radius",
                   "sampling", "factors"),
    "abstract": ("tree",),
    "plan": ("cost", "planning", "local"),
    "simulate": ("rhc", "quadrotor"),
}
# joint samples of a decoupled planar system are ordered (x, y, vx, vy)
JOINT_ORDER = (0, 2, 1, 3)


def stage_digest(cfg: ScenarioConfig, stage: str) -> str:
    keys: List[str] = []
    for s in STAGES[:STAGES.index(stage) + 1]:
        keys.extend(SECTIONS[s])
    return cfg.digest(*keys)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


# --- atomic stage output ----------------------------------------------------------

class StageOutput:
    def __init__(self, root: Path):
        self.root = root
        self.files: List[str] = []

    def path(self, rel: str) -> Path:
        p = self.root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        self.files.append(rel)
        return p

    def write_text(self, rel: str, text: str) -> None:
        self.path(rel).write_text(text)


@contextmanager
def stage_output(out_dir: Path, stage: str):
    out_dir.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{stage}-", dir=out_dir))
    try:
        so = StageOutput(tmp)
        yield so
        # files from this stage's previous run go first; other stages' files stay
        old = out_dir / f"{stage}.json"
        if old.exists():
            for rel in json.loads(old.read_text()).get("files", {}):
                (out_dir / rel).unlink(missing_ok=True)
        for src in sorted(p for p in tmp.rglob("*") if p.is_file()):
            target = out_dir / src.relative_to(tmp)
            target.parent.mkdir(parents=True, exist_ok=True)
            os.replace(src, target)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


def write_manifest(so: StageOutput, cfg: ScenarioConfig, stage: str, summary: dict,
                   upstream: Optional[dict] = None) -> dict:
    files = {rel: sha256_file(so.root / rel) for rel in sorted(set(so.files))}
    manifest = {"stage": stage, "scenario": cfg.name, "config_digest": stage_digest(cfg, stage),
                "files": files, "summary": summary, "upstream": upstream or {}}
    (so.root / f"{stage}.json").write_text(dump_json(manifest))
    return manifest


def touch_metadata(out_dir: Path, stage: str) -> None:
    """Record the wall-clock time of a stage (the only non-reproducible output)."""
    path = out_dir / "metadata.json"
    meta = json.loads(path.read_text()) if path.exists() else {}
    meta[stage] = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    path.write_text(dump_json(meta))


def require(out_dir: Path, cfg: ScenarioConfig, stage: str) -> dict:
    """Load an upstream manifest, verifying file checksums and config digest."""
    mpath = out_dir / f"{stage}.json"
    if not mpath.exists():
        raise DependencyError(f"missing upstream artifact: run '{stage}' first ({mpath} not found)")
    manifest = json.loads(mpath.read_text())
    if manifest.get("config_digest") != stage_digest(cfg, stage):
        raise DependencyError(f"stale '{stage}' artifacts in {out_dir}: config changed since they were "
                              f"written; re-run '{stage}'")
    for rel, digest in manifest["files"].items():
        p = out_dir / rel
        if not p.exists():
            raise DependencyError(f"'{stage}' artifact {p} is missing")
        if sha256_file(p) != digest:
            raise DependencyError(f"'{stage}' artifact {p} fails its checksum; re-run '{stage}'")
    return manifest


def upstream_ref(out_dir: Path, stage: str) -> dict:
    return {stage: sha256_file(out_dir / f"{stage}.json")}


# --- discretize ----------------------------------------------------------------------

def _factor_samples(cfg: ScenarioConfig):
    f = cfg.factors
    lo, hi = (f.pos_range[0], f.vel_range[0]), (f.pos_range[1], f.vel_range[1])
    s = grid_samples(lo, hi, (f.pos_points, f.vel_points))
    return s, grid_samples(lo, hi, (f.pos_points, f.vel_points))


def discretize(cfg: ScenarioConfig, out_dir) -> dict:
    out_dir = Path(out_dir)
    with stage_output(out_dir, "discretize") as so:
        if cfg.kind == "sampled":
            samples = sample_states(cfg.workspace, cfg.sampling["count_per_region"], cfg.seed,
                                    rng=substream(cfg.seed, "sampling"),
                                    bandwidth=cfg.sampling.get("bandwidth"))
            model = cfg.model()
            chain = build_chain(samples, model, cfg.h, cfg.truncation_radius)
            save_samples(samples, so.path("samples.csv"))
            save_chain(chain, so.path("chain.txt"))
            rep = check_local_consistency(chain, model).summary()
            summary = {"states": chain.n, "nnz": int(chain.P.nnz), "consistency": rep}
        else:
            sx, sy = _factor_samples(cfg)
            mx, my = cfg.factor_models()
            cx = build_chain(sx, mx, cfg.h, cfg.truncation_radius)
            cy = build_chain(sy, my, cfg.h, cfg.truncation_radius)
            save_samples(sx, so.path("samples_x.csv"))
            save_samples(sy, so.path("samples_y.csv"))
            save_chain(cx, so.path("chain_x.txt"))
            save_chain(cy, so.path("chain_y.txt"))
            summary = {"states": cx.n * cy.n, "factor_states": [cx.n, cy.n],
                       "nnz": [int(cx.P.nnz), int(cy.P.nnz)],
                       "consistency": [check_local_consistency(cx, mx).summary(),
                                       check_local_consistency(cy, my).summary()]}
        manifest = write_manifest(so, cfg, "discretize", summary)
    touch_metadata(out_dir, "discretize")
    return manifest


def load_discretization(cfg: ScenarioConfig, out_dir):
    out_dir = Path(out_dir)
    if cfg.kind == "sampled":
        samples = load_samples(out_dir / "samples.csv", cfg.seed)
        return samples, load_chain(out_dir / "chain.txt", samples)
    sx, sy = load_samples(out_dir / "samples_x.csv"), load_samples(out_dir / "samples_y.csv")
    cx, cy = load_chain(out_dir / "chain_x.txt", sx), load_chain(out_dir / "chain_y.txt", sy)
    joint = product_samples(sx, sy, JOINT_ORDER)
    return joint, KroneckerChain(cx, cy, joint)


# --- abstract ------------------------------------------------------------------------

def abstract(cfg: ScenarioConfig, out_dir) -> dict:
    out_dir = Path(out_dir)
    up = require(out_dir, cfg, "discretize")
    _, chain = load_discretization(cfg, out_dir)
    with stage_output(out_dir, "abstract") as so:
        if cfg.kind == "sampled":
            tree = build_tree(chain.T, cfg.epsilon, cfg.max_levels)
            _save_tree_tracked(so, tree, "tree")
            summary = {"dims": tree.dims, "depth": tree.depth, "epsilon": cfg.epsilon}
        else:
            tx = build_tree(chain.first.T, cfg.epsilon, cfg.max_levels)
            ty = build_tree(chain.second.T, cfg.epsilon, cfg.max_levels)
            _save_tree_tracked(so, tx, "tree_x")
            _save_tree_tracked(so, ty, "tree_y")
            depth = min(tx.depth, ty.depth)
            summary = {"factor_dims": [tx.dims, ty.dims], "depth": depth, "epsilon": cfg.epsilon,
                       "dims": [tx.dims[j] * ty.dims[j] for j in range(depth + 1)]}
        summary["upstream_states"] = up["summary"]["states"]
        manifest = write_manifest(so, cfg, "abstract", summary, upstream_ref(out_dir, "discretize"))
    touch_metadata(out_dir, "abstract")
    return manifest


def _save_tree_tracked(so: StageOutput, tree, name: str) -> None:
    save_tree(tree, so.root / name)
    for p in sorted((so.root / name).iterdir()):
        so.files.append(f"{name}/{p.name}")


def load_trees(cfg: ScenarioConfig, out_dir):
    out_dir = Path(out_dir)
    if cfg.kind == "sampled":
        return (load_tree(out_dir / "tree"),)
    return load_tree(out_dir / "tree_x"), load_tree(out_dir / "tree_y")


def joint_dims(trees) -> List[int]:
    if len(trees) == 1:
        return trees[0].dims
    depth = min(t.depth for t in trees)
    return [trees[0].dims[j] * trees[1].dims[j] for j in range(depth + 1)]


def resolve_level(cfg: ScenarioConfig, dims: List[int]) -> int:
    if cfg.level == "auto":
        frac = cfg.planning["auto_fraction"]
        hits = [j for j, d in enumerate(dims) if d <= frac * dims[0]]
        if not hits:
            raise NumericalError(f"no level has at most {frac:g} of the {dims[0]} states "
                                 f"(dims {dims})")
        return hits[0]
    if cfg.level > len(dims) - 1:
        raise NumericalError(f"planning level {cfg.level} exceeds tree depth {len(dims) - 1}")
    return int(cfg.level)


# --- plan ----------------------------------------------------------------------------

def solve_level(cfg: ScenarioConfig, trees, Q, chain, level: int) -> DesirabilitySolution:
    tol = cfg.planning["tol"]
    if cfg.kind == "sampled":
        return global_plan(trees[0], Q, chain, level, tol)
    return kronecker_plan(trees[0], trees[1], Q, chain, level, tol)


def level_table(cfg: ScenarioConfig, trees, Q, chain, oracle: DesirabilitySolution) -> List[dict]:
    """Per-level basis count, warm/cold iterations and value error against level 0."""
    dims = joint_dims(trees)
    rows = []
    for j in range(len(dims)):
        warm = solve_level(cfg, trees, Q, chain, j)
        row = {"level": j, "bases": dims[j], "warm_iterations": warm.iterations,
               "level_iterations": warm.level_iterations.get(j, 0),
               "rms_value_error": rms_value_error(warm.v_hat, oracle.v_hat),
               "lambda": warm.lambda_hat, "clamped": warm.clamped}
        if cfg.kind == "sampled":
            row["cold_iterations"] = cold_start(trees[0], Q, chain, j, cfg.planning["tol"]).iterations
        rows.append(row)
    return rows


def local_report(cfg: ScenarioConfig, samples, chain, trees, Q, sol, oracle) -> Optional[dict]:
    loc = cfg.local
    if cfg.kind != "sampled" or sol.level == 0 or not loc["budget_fraction"] or loc["source"] is None:
        return None
    tree = trees[0]
    if loc["k_lp"] < 2 ** sol.level:
        raise ConfigError(f"local.k_lp={loc['k_lp']} is shorter than one level-{sol.level} "
                          f"step (2^{sol.level})")
    budget = int(loc["budget_fraction"] * (chain.n - tree.dims[sol.level]))
    if budget < 1:
        return {"budget": 0, "skipped": "budget rounds to zero wavelets"}
    source = np.asarray(loc["source"], dtype=float)
    model = cfg.model()
    policy = optimal_policy(chain, sol.z_hat)
    p0 = initial_transition(source, samples, model, cfg.h, sol.z_hat, cfg.truncation_radius)
    occ = occupancy_compressed(p0, policy, tree, sol.level, loc["k_lp"], source)
    sel = score_and_select(occ, tree, sol.level, budget)
    ref = refine(sol, sel, Q, chain, tree, cfg.planning["tol"])
    top = np.lexsort((np.arange(chain.n), -occ.d))[:max(1, int(loc["report_fraction"] * chain.n))]
    before = float(np.mean(np.abs(oracle.v_hat[top] - sol.v_hat[top])))
    after = float(np.mean(np.abs(oracle.v_hat[top] - ref.v_hat[top])))
    return {"source": source.tolist(), "k_lp": loc["k_lp"], "budget": budget,
            "selected": [int(i) for i in sel.selected], "top_states": [int(i) for i in top],
            "error_before": before, "error_after": after,
            "reduction": 1.0 - after / before if before > 0 else 0.0,
            "residual_before": level0_residual(Q, chain, sol.z_hat, sol.lambda_hat),
            "residual_after": level0_residual(Q, chain, ref.z_hat, ref.lambda_hat),
            "iterations": ref.iterations, "occupancy_clamped_mass": occ.clamped_mass}


def plan(cfg: ScenarioConfig, out_dir) -> dict:
    out_dir = Path(out_dir)
    require(out_dir, cfg, "discretize")
    require(out_dir, cfg, "abstract")
    samples, chain = load_discretization(cfg, out_dir)
    trees = load_trees(cfg, out_dir)
    dims = joint_dims(trees)
    level = resolve_level(cfg, dims)
    Q = build_Q(cfg.cost_model(), samples)
    sol = solve_level(cfg, trees, Q, chain, level)
    report = {"level": level, "bases": dims[level], "states": dims[0], "dims": dims,
              "lambda": sol.lambda_hat, "avg_cost": sol.avg_cost, "iterations": sol.iterations,
              "level_iterations": {str(k): v for k, v in sorted(sol.level_iterations.items())},
              "clamped": sol.clamped}
    table = None
    oracle = None
    if cfg.planning["sweep"] or level > 0:
        oracle = solve_direct(Q, chain, cfg.planning["tol"]) if cfg.kind == "sampled" \
            else solve_level(cfg, trees, Q, chain, 0)
        report["oracle"] = {"lambda": oracle.lambda_hat, "iterations": oracle.iterations}
        report["rms_value_error"] = rms_value_error(sol.v_hat, oracle.v_hat)
        if cfg.planning["sweep"]:
            table = level_table(cfg, trees, Q, chain, oracle)
            report["levels"] = table
        local = local_report(cfg, samples, chain, trees, Q, sol, oracle)
        if local is not None:
            report["local"] = local
    with stage_output(out_dir, "plan") as so:
        so.write_text("solution.json", dump_json(sol.to_dict()))
        so.write_text("value.csv", _value_csv(samples, sol, oracle))
        if table is not None:
            so.write_text("levels.csv", _table_csv(table, ("level", "bases", "warm_iterations",
                                                           "level_iterations", "cold_iterations",
                                                           "rms_value_error", "lambda", "clamped")))
            plotting.plot_levels(table, so.path("figures/levels.png"))
        plotting.plot_value(samples, sol.v_hat, cfg.workspace, so.path("figures/value.png"),
                            title=f"value at level {level}")
        manifest = write_manifest(so, cfg, "plan", report,
                                  {**upstream_ref(out_dir, "discretize"), **upstream_ref(out_dir, "abstract")})
    touch_metadata(out_dir, "plan")
    return manifest


def _value_csv(samples, sol, oracle) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    d = samples.dim
    w.writerow([f"x{i}" for i in range(d)] + ["z_hat", "v_hat"] + (["v_level0"] if oracle else []))
    for i, p in enumerate(samples.points):
        row = [repr(float(v)) for v in p] + [repr(float(sol.z_hat[i])), repr(float(sol.v_hat[i]))]
        if oracle is not None:
            row.append(repr(float(oracle.v_hat[i])))
        w.writerow(row)
    return buf.getvalue()


def _table_csv(rows: List[dict], columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = [c for c in columns if any(c in r for r in rows)]
    w.writerow(cols)
    for r in rows:
        w.writerow([repr(r[c]) if isinstance(r.get(c), float) else r.get(c, "") for c in cols])
    return buf.getvalue()


def load_solution(out_dir) -> DesirabilitySolution:
    return DesirabilitySolution.from_dict(json.loads((Path(out_dir) / "solution.json").read_text()))


# --- simulate ------------------------------------------------------------------------

def build_planner(cfg: ScenarioConfig, samples, chain, trees, sol) -> Planner:
    if cfg.kind == "sampled":
        refiner = None
        loc = cfg.local
        if cfg.rhc["refine"] and loc["budget_fraction"] and sol.level > 0:
            budget = int(loc["budget_fraction"] * (chain.n - trees[0].dims[sol.level]))
            if loc["k_lp"] < 2 ** sol.level:
                raise ConfigError(f"local.k_lp={loc['k_lp']} is shorter than one level-"
                                  f"{sol.level} step (2^{sol.level})")
            refiner = LocalRefiner(trees[0], build_Q(cfg.cost_model(), samples), chain,
                                   loc["k_lp"], budget, cfg.planning["tol"])
        return Planner(samples, cfg.model(), cfg.h, chain, sol, cfg.truncation_radius,
                       refiner=refiner)
    mx, my = cfg.factor_models()
    sx, sy = chain.first.samples, chain.second.samples

    def row_fn(x):
        rows = []
        for m, s, xy in ((mx, sx, (x[0], x[2])), (my, sy, (x[1], x[3]))):
            idx, p = gaussian_row(np.asarray(xy), m, cfg.h, s, cfg.truncation_radius)
            r = np.zeros(len(s))
            r[idx] = p
            rows.append(r)
        return np.kron(rows[0], rows[1])

    return Planner(samples, cfg.model(), cfg.h, chain, sol, cfg.truncation_radius, row_fn=row_fn)


def make_runner(cfg: ScenarioConfig, start):
    r = cfg.rhc
    if r["plant"] == "quadrotor":
        plant = QuadrotorPlant(**_quad_params(cfg.quadrotor))
        return QuadrotorRunner(plant, start, r["plant_noise"] or 0.0)
    return SdeRunner(SdePlant(cfg.model(), cfg.dt_sim, cfg.seed, r["plant_noise"]), start)


def _quad_params(d: dict) -> dict:
    out = dict(d)
    for k in ("inertia",):
        if k in out:
            out[k] = np.asarray(out[k], dtype=float)
    for k in ("kp_att", "kd_att"):
        if k in out:
            out[k] = tuple(out[k])
    return out


def run_episode(cfg: ScenarioConfig, planner: Planner, run: int):
    r = cfg.rhc
    start = np.asarray(r["start"], dtype=float)
    runner = make_runner(cfg, start)
    planner.z, planner.policy = planner.solution.z_hat, planner.base_policy
    try:
        return rhc_loop(planner, runner, cfg.workspace, r["k_rhc"], cfg.tau_r, cfg.local["k_lp"],
                        r["max_time"], cfg.dt_sim, substream(cfg.seed, "noise", run),
                        state_cost=cfg.cost_field(), log_stride=r["log_stride"])
    except NumericalError as exc:
        from .rhc import TrajectoryLog
        trace = TrajectoryLog(np.asarray(runner.state).size, planner.model.control_dim)
        trace.status, trace.reason = "planner_error", f"{type(exc).__name__}: {exc}"
        return trace


def simulate(cfg: ScenarioConfig, out_dir) -> dict:
    out_dir = Path(out_dir)
    for stage in ("discretize", "abstract", "plan"):
        require(out_dir, cfg, stage)
    if cfg.rhc["start"] is None:
        raise DependencyError("simulate needs rhc.start in the config")
    samples, chain = load_discretization(cfg, out_dir)
    trees = load_trees(cfg, out_dir)
    sol = load_solution(out_dir)
    planner = build_planner(cfg, samples, chain, trees, sol)
    runs = []
    with stage_output(out_dir, "simulate") as so:
        paths = []
        for k in range(cfg.rhc["runs"]):
            trace = run_episode(cfg, planner, k)
            trace.write(so.path(f"runs/run_{k:03d}.csv"))
            s = trace.summary()
            s["run"] = k
            runs.append(s)
            pts = np.array([row[1:3] for row in trace.rows]) if trace.rows else np.zeros((0, 2))
            paths.append((pts, trace.status))
        ok = [s for s in runs if s["success"]]
        summary = {
            "level": sol.level, "runs": len(runs), "successes": len(ok),
            "success_rate": len(ok) / len(runs) if runs else float("nan"),
            "collisions": sum(s["status"] == "collision" for s in runs),
            "timeouts": sum(s["status"] == "timeout" for s in runs),
            "planner_errors": sum(s["status"] == "planner_error" for s in runs),
            "mean_path_length": _mean([s["path_length"] for s in ok]),
            "mean_duration": _mean([s["duration"] for s in ok]),
            "mean_control_energy": _mean([s["control_energy"] for s in ok]),
            "mean_state_cost": _mean([s["state_cost"] for s in ok]),
        }
        so.write_text("runs.csv", _table_csv(
            runs, ("run", "status", "duration", "path_length", "control_energy", "state_cost",
                   "segments", "replans", "max_linearization_drift", "max_gramian_condition")))
        so.write_text("runs.json", dump_json(runs))
        plotting.plot_trajectories(cfg.workspace, paths, so.path("figures/trajectories.png"),
                                   title=f"{cfg.name}: level {sol.level}, "
                                         f"{len(ok)}/{len(runs)} reached the goal")
        manifest = write_manifest(so, cfg, "simulate", summary,
                                  {**upstream_ref(out_dir, "plan")})
    touch_metadata(out_dir, "simulate")
    return manifest


def _mean(xs) -> float:
    return float(np.mean(xs)) if xs else float("nan")


def run_pipeline(cfg: ScenarioConfig, out_dir) -> Dict[str, dict]:
    return {"discretize": discretize(cfg, out_dir), "abstract": abstract(cfg, out_dir),
            "plan": plan(cfg, out_dir), "simulate": simulate(cfg, out_dir)}
