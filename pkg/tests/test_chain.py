import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st
from scipy.stats import multivariate_normal

from mslmdp.chain import (KroneckerChain, build_chain, check_local_consistency, gaussian_row,
                          load_chain, product_samples, read_triplets, save_chain,
                          write_triplets)
from mslmdp.dynamics import double_integrator, quadrotor_axis, single_integrator
from mslmdp.environment import SampleSet, grid_samples, kde_density
from mslmdp.errors import IsolatedStateError, UncontrollableError
from mslmdp.dynamics import DynamicsModel, linear_model


def test_row_matches_normal_pdf_on_uniform_grid():
    s = grid_samples([-1, -1], [1, 1], [21, 21])
    model = double_integrator(0.8, 1.0)
    x = np.array([0.1, 0.2])
    idx, p = gaussian_row(x, model, 0.2, s, truncation_radius=50.0)
    # x' = x + t v, v' = v; covariance of the integrated noise
    t, sig = 0.2, 0.8
    mean = np.array([x[0] + t * x[1], x[1]])
    cov = sig ** 2 * np.array([[t ** 3 / 3, t ** 2 / 2], [t ** 2 / 2, t]])
    dist = multivariate_normal(mean, cov)
    d2 = np.einsum("ij,jk,ik->i", s.points - mean, np.linalg.inv(cov), s.points - mean)
    np.testing.assert_array_equal(idx, np.flatnonzero(d2 <= 50.0 ** 2))
    ref = dist.pdf(s.points[idx])
    np.testing.assert_allclose(p, ref / ref.sum(), rtol=1e-9)


def test_density_weighting_divides_by_density():
    pts = np.linspace(0, 1, 9)[:, None]
    dens = np.linspace(1, 3, 9)
    s = SampleSet(pts, dens)
    idx, p = gaussian_row([0.5], single_integrator(1, 1.0), 0.01, s, 10.0)
    raw = np.exp(-0.5 * (pts[:, 0] - 0.5) ** 2 / 0.01) / dens
    np.testing.assert_allclose(p, raw / raw.sum(), rtol=1e-12)


def test_rows_are_stochastic_and_truncated(di_chain):
    P = di_chain.P
    np.testing.assert_allclose(np.asarray(P.sum(axis=1)).ravel(), 1.0, atol=1e-14)
    assert P.nnz < P.shape[0] ** 2
    assert np.all(P.data > 0)


def test_consistency_improves_with_density():
    h, sig = 0.01, 1.0
    errs = []
    for n in (200, 800):
        pts = np.random.default_rng(1).uniform(0, 1, (n, 1))
        s = SampleSet(pts, kde_density(pts))
        c = build_chain(s, single_integrator(1, sig), h)
        errs.append(check_local_consistency(c, single_integrator(1, sig)).summary())
    assert errs[1]["mean_error_mean"] < errs[0]["mean_error_mean"]
    assert errs[1]["cov_error_mean"] < errs[0]["cov_error_mean"]
    assert errs[1]["cov_error_mean"] < 0.1


def test_isolated_state_reported():
    # constant drift carries the upper cluster's means beyond every sample
    pts = np.concatenate([np.linspace(0, 0.1, 11), np.linspace(1.0, 1.1, 11)])[:, None]
    s = SampleSet(pts, np.ones(len(pts)))
    drift = DynamicsModel(1, 1, lambda x: np.array([100.0]), lambda x: np.eye(1), 1.0)
    with pytest.raises(IsolatedStateError) as exc:
        build_chain(s, drift, 0.009)
    assert exc.value.indices == list(range(11, 22))


def test_uncontrollable_model_rejected():
    s = grid_samples([0, 0], [1, 1], [4, 4])
    model = linear_model(np.zeros((2, 2)), np.array([[1.0], [0.0]]))
    with pytest.raises(UncontrollableError):
        build_chain(s, model, 0.1)


def test_chain_roundtrip_exact(tmp_path, di_chain):
    save_chain(di_chain, tmp_path / "c.txt")
    back = load_chain(tmp_path / "c.txt", di_chain.samples)
    assert back.h == di_chain.h and back.truncation_radius == di_chain.truncation_radius
    assert (back.P != di_chain.P).nnz == 0


def test_triplet_header_types(tmp_path):
    write_triplets(tmp_path / "m.txt", sp.eye(3), {"level": 2, "block": "x", "eps": 1e-4})
    M, hdr = read_triplets(tmp_path / "m.txt")
    assert hdr == {"level": 2, "block": "x", "eps": 1e-4}
    assert M.shape == (3, 3)


def test_product_sample_layout():
    a = grid_samples([0, 10], [1, 11], [2, 2])
    b = grid_samples([5, 20], [6, 21], [2, 2])
    joint = product_samples(a, b, order=(0, 2, 1, 3))
    # index a * 4 + b, coordinates (a0, b0, a1, b1)
    np.testing.assert_allclose(joint.points[1 * 4 + 2], [0, 6, 11, 20])
    np.testing.assert_allclose(joint.density, np.kron(a.density, b.density))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_kronecker_products_match_explicit_kron(seed):
    rng = np.random.default_rng(seed)
    s1 = grid_samples([0, -1], [5, 1], [10, 5])
    s2 = grid_samples([0, -1], [5, 1], [8, 4])
    c1 = build_chain(s1, quadrotor_axis(0.05, 9.81, 1.0), 1.0)
    c2 = build_chain(s2, quadrotor_axis(0.05, 9.81, -1.0), 1.0)
    K = KroneckerChain(c1, c2)
    P = sp.kron(c1.P, c2.P).toarray()
    z = rng.uniform(0.1, 1, K.n)
    p = rng.dirichlet(np.ones(K.n))
    np.testing.assert_allclose(K @ z, P @ z, rtol=1e-12)
    np.testing.assert_allclose(K.rmatvec(p), p @ P, rtol=1e-12, atol=1e-16)
