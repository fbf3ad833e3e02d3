import numpy as np

from mslmdp import plotting
from mslmdp.environment import grid_samples
from mslmdp.scenarios import fractal_workspace, quadrotor_workspace


def test_figures_are_written_deterministically(tmp_path):
    _, ws = fractal_workspace("desk")
    s = grid_samples(ws.bounds.lo, ws.bounds.hi, [12, 12])
    v = np.hypot(*(s.points - [1.5, 0.0]).T)
    for k in (1, 2):
        plotting.plot_value(s, v, ws, tmp_path / f"v{k}.png", title="value")
    assert (tmp_path / "v1.png").read_bytes() == (tmp_path / "v2.png").read_bytes()


def test_velocity_states_collapse_to_positions(tmp_path):
    ws, _ = quadrotor_workspace(1)
    s = grid_samples([0, 0, -1, -1], [5, 5, 1, 1], [4, 4, 2, 2])
    plotting.plot_value(s, np.arange(len(s), dtype=float), ws, tmp_path / "q.png")
    paths = [(np.array([[0.8, 0.8], [2.0, 1.0]]), "goal"), (np.zeros((0, 2)), "timeout")]
    plotting.plot_trajectories(ws, paths, tmp_path / "t.png", title="runs")
    rows = [{"level": j, "bases": 100 >> j, "warm_iterations": 10 * j, "rms_value_error": 0.1 * j}
            for j in range(4)]
    plotting.plot_levels(rows, tmp_path / "l.png")
    assert all((tmp_path / n).stat().st_size > 0 for n in ("q.png", "t.png", "l.png"))
