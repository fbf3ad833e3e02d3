import os
import tempfile

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import gaussian_kde

from mslmdp.environment import (Box, ConvexPolygon, Disc, Region, SampleSet, Workspace,
                                collision_check, grid_samples, kde_density, load_samples,
                                sample_states, save_samples, workspace_from_dict,
                                workspace_to_dict)
from mslmdp.errors import ConfigError, SamplingError
from mslmdp.scenarios import fractal_workspace


def simple_ws():
    return Workspace(Box([0, 0], [2, 1]), (Box([0.8, 0.0], [1.2, 0.6]),),
                     Disc(np.array([1.8, 0.5]), 0.1))


def test_collision_check_boundaries_and_stacks():
    ws = simple_ws()
    assert collision_check(ws, [0.5, 0.5])
    assert not collision_check(ws, [1.0, 0.3])
    # obstacles are closed sets
    assert not collision_check(ws, [0.8, 0.3])
    assert not collision_check(ws, [2.1, 0.5])
    stack = np.array([[0.5, 0.5], [1.0, 0.3], [1.0, 0.8]])
    np.testing.assert_array_equal(collision_check(ws, stack), [True, False, True])


def test_velocity_coordinates_ignored_by_obstacles():
    ws = simple_ws()
    assert collision_check(ws, [0.5, 0.5, 100.0, -3.0])


def test_polygon_orientation_and_membership():
    tri = ConvexPolygon([[0, 0], [0, 1], [1, 0]])   # clockwise input
    assert tri.contains([0.2, 0.2])
    assert not tri.contains([0.8, 0.8])
    with pytest.raises(ConfigError):
        ConvexPolygon([[0, 0], [1, 1], [2, 2]])


def test_kde_matches_direct_sum(rng):
    pts = rng.normal(size=(300, 2))
    bw = 0.3
    mine = kde_density(pts, bandwidth=bw)
    ref = np.array([np.mean(np.exp(-0.5 * np.sum(((p - pts) / bw) ** 2, axis=1)))
                    / (2 * np.pi * bw ** 2) for p in pts])
    np.testing.assert_allclose(mine, ref, rtol=1e-12)


def test_kde_scott_default_is_scipy_scott_for_isotropic_data(rng):
    pts = rng.uniform(size=(400, 1))
    ref = gaussian_kde(pts.T, bw_method="scott")(pts.T)
    np.testing.assert_allclose(kde_density(pts), ref, rtol=1e-6)


def test_sample_states_respects_regions_and_obstacles():
    _, ws = fractal_workspace("desk")
    s = sample_states(ws, 40, seed=3)
    assert len(s) == 200
    assert np.all(collision_check(ws, s.points))
    for label, region in enumerate(ws.regions):
        assert np.all(region.contains(s.points[s.region_labels == label]))
    again = sample_states(ws, 40, seed=3)
    np.testing.assert_array_equal(s.points, again.points)


def test_sampling_failure_on_blocked_region():
    ws = Workspace(Box([0, 0], [1, 1]), (Box([0, 0], [1, 1]),), None,
                   (Region("all", (Box([0, 0], [1, 1]),)),))
    with pytest.raises(SamplingError):
        sample_states(ws, 5, seed=0, min_trials=2000)


def test_grid_samples_order_and_density():
    s = grid_samples([0, -1], [4, 1], [5, 3])
    np.testing.assert_allclose(s.points[:4], [[0, -1], [0, 0], [0, 1], [1, -1]])
    np.testing.assert_allclose(s.density, 1 / 8)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(2, 30))
def test_samples_roundtrip_exact(seed, n):
    rng = np.random.default_rng(seed)
    s = SampleSet(rng.normal(size=(n, 3)), rng.uniform(0.1, 5, n), rng.integers(0, 4, n))
    with tempfile.TemporaryDirectory() as d:
        save_samples(s, os.path.join(d, "s.csv"))
        back = load_samples(os.path.join(d, "s.csv"))
    np.testing.assert_array_equal(back.points, s.points)
    np.testing.assert_array_equal(back.density, s.density)
    np.testing.assert_array_equal(back.region_labels, s.region_labels)


def test_workspace_dict_roundtrip():
    _, ws = fractal_workspace("desk")
    again = workspace_from_dict(workspace_to_dict(ws))
    pts = np.random.default_rng(0).uniform(ws.bounds.lo, ws.bounds.hi, (2000, 2))
    np.testing.assert_array_equal(collision_check(ws, pts), collision_check(again, pts))


def test_invalid_inputs():
    with pytest.raises(ConfigError):
        Box([1, 1], [0, 0])
    with pytest.raises(ConfigError):
        SampleSet(np.zeros((3, 2)), np.array([1.0, 0.0, 1.0]))
    with pytest.raises(ConfigError):
        Workspace(Box([0, 0], [1, 1]), (Box([0, 0], [1, 1]),), Disc(np.array([0.5, 0.5]), 0.1))
    with pytest.raises(ConfigError):
        workspace_from_dict({"bounds": [[0, 1]], "obstacles": [{"type": "blob"}]})
