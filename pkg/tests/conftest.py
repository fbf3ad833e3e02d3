import numpy as np
import pytest

from mslmdp.chain import build_chain
from mslmdp.dynamics import double_integrator, single_integrator
from mslmdp.environment import grid_samples


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def ring_chain():
    """1-D integrator on a 60-point grid: small, irreducible, reversible-ish."""
    s = grid_samples([0.0], [1.0], [60])
    return build_chain(s, single_integrator(1, 1.0), 0.002)


@pytest.fixture(scope="session")
def di_chain():
    s = grid_samples([0.0, -1.0], [5.0, 1.0], [10, 5])
    return build_chain(s, double_integrator(0.05, 9.81), 1.0)


def tiny_config(**over):
    """Two-room sampled scenario small enough for end-to-end tests."""
    cfg = {
        "name": "tiny", "kind": "sampled", "seed": 3,
        "workspace": {
            "bounds": [[0.0, 2.0], [0.0, 1.0]],
            "obstacles": [{"type": "box", "lo": [0.9, 0.0], "hi": [1.1, 0.35]},
                          {"type": "box", "lo": [0.9, 0.65], "hi": [1.1, 1.0]}],
            "goal": {"center": [1.7, 0.5], "radius": 0.2},
            "regions": [{"name": "west", "boxes": [[[0.0, 0.0], [0.9, 1.0]]]},
                        {"name": "east", "boxes": [[[1.1, 0.0], [2.0, 1.0]]]}],
        },
        "model": {"id": "single_integrator", "params": {"dim": 2, "sigma": 1.0}},
        "h": 0.01,
        "sampling": {"count_per_region": 40},
        "tree": {"epsilon": 1e-4, "max_levels": 8},
        "planning": {"level": 3, "sweep": True},
        "local": {"k_lp": 8, "budget_fraction": 0.2, "source": [0.4, 0.5]},
        "rhc": {"runs": 2, "start": [0.4, 0.5], "k_rhc": 10, "tau_r": 0.05, "dt_sim": 1e-3,
                "max_time": 3.0, "plant_noise": 0.05, "log_stride": 20},
    }
    for k, v in over.items():
        cfg[k] = v
    return cfg


@pytest.fixture
def tiny():
    return tiny_config()
