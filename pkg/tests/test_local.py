import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mslmdp.chain import build_chain
from mslmdp.dwt import build_tree, unpack_wavelets
from mslmdp.dynamics import single_integrator
from mslmdp.environment import SampleSet, kde_density
from mslmdp.errors import IsolatedStateError
from mslmdp.lmdp import CostModel, build_Q, global_plan, level0_residual, optimal_policy, solve_direct
from mslmdp.local import (BasisSelection, initial_transition, occupancy_compressed,
                          occupancy_exact, passive_row, refine, score_and_select, tilt)

H = 0.004


@pytest.fixture(scope="module")
def setup():
    pts = np.sort(np.random.default_rng(11).uniform(0, 1, 70))[:, None]
    s = SampleSet(pts, kde_density(pts))
    model = single_integrator(1, 1.0)
    chain = build_chain(s, model, H)
    Q = build_Q(CostModel(lambda X: np.where(X[:, 0] > 0.9, 0.0, 1.0), H), s)
    tree = build_tree(chain.T, 1e-12, 8)
    sol = solve_direct(Q, chain)
    return s, model, chain, Q, tree, sol


def test_passive_row_and_tilt(setup):
    s, model, chain, _, _, sol = setup
    x = s.points[5]
    # from a sample state the passive row is that state's chain row
    np.testing.assert_allclose(passive_row(x, s, model, H), chain.P[5].toarray().ravel())
    p0 = initial_transition(x, s, model, H, sol.z_hat)
    pol = optimal_policy(chain, sol.z_hat)
    np.testing.assert_allclose(p0, pol.P_star[5].toarray().ravel(), rtol=1e-12)
    with pytest.raises(IsolatedStateError):
        passive_row(np.array([40.0]), s, model, H)
    with pytest.raises(IsolatedStateError):
        tilt(np.zeros(3), np.ones(3))


def test_level0_occupancy_is_exact(setup):
    s, model, chain, _, tree, sol = setup
    pol = optimal_policy(chain, sol.z_hat)
    p0 = initial_transition(s.points[3], s, model, H, sol.z_hat)
    occ = occupancy_compressed(p0, pol, tree, 0, 25)
    exact = occupancy_exact(p0, pol, 25)
    np.testing.assert_allclose(occ.d, exact / exact.sum(), atol=1e-13)
    assert occ.horizon_steps == 25


def test_compressed_occupancy_strides_dyadic_powers(setup):
    s, model, chain, _, tree, sol = setup
    pol = optimal_policy(chain, sol.z_hat)
    p0 = initial_transition(s.points[3], s, model, H, sol.z_hat)
    level, k = 2, 30
    occ = occupancy_compressed(p0, pol, tree, level, k)
    # with a lossless basis the compressed walk visits p0 (P*)^(4t), t < ceil(30/4)
    P4 = np.linalg.matrix_power(pol.P_star.toarray(), 4)
    p, acc = p0.copy(), np.zeros_like(p0)
    for _ in range(8):
        acc += p
        p = p @ P4
    np.testing.assert_allclose(occ.d, acc / acc.sum(), atol=1e-6)
    with pytest.raises(ValueError):
        occupancy_compressed(p0, pol, tree, 3, 4)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(0, 20))
def test_selection_is_top_scores_with_index_ties(seed, budget):
    rng = np.random.default_rng(seed)
    d = rng.dirichlet(np.ones(30))
    Psi = rng.normal(size=(30, 20))
    Psi[:, 5] = Psi[:, 2]                      # forced tie
    sel = score_and_select(d, None, 1, budget, wavelets=Psi)
    scores = d @ np.abs(Psi)
    np.testing.assert_allclose(sel.scores, scores)
    order = sorted(range(20), key=lambda i: (-scores[i], i))
    assert list(sel.selected) == order[:budget]


def test_full_budget_refinement_recovers_level0(setup):
    _, _, chain, Q, tree, sol0 = setup
    level = 3
    coarse = global_plan(tree, Q, chain, level)
    n_wav = chain.n - tree.dims[level]
    sel = BasisSelection(np.zeros(n_wav), np.arange(n_wav), n_wav)
    ref = refine(coarse, sel, Q, chain, tree)
    assert abs(ref.lambda_hat - sol0.lambda_hat) < 1e-10
    np.testing.assert_allclose(ref.v_hat - ref.v_hat.mean(), sol0.v_hat - sol0.v_hat.mean(), atol=1e-6)


def test_partial_refinement_reduces_residual(setup):
    s, model, chain, Q, tree, _ = setup
    level = 3
    coarse = global_plan(tree, Q, chain, level)
    pol = optimal_policy(chain, coarse.z_hat)
    p0 = initial_transition(s.points[10], s, model, H, coarse.z_hat)
    occ = occupancy_compressed(p0, pol, tree, level, 16)
    budget = (chain.n - tree.dims[level]) // 3
    sel = score_and_select(occ, tree, level, budget)
    ref = refine(coarse, sel, Q, chain, tree)
    assert level0_residual(Q, chain, ref.z_hat, ref.lambda_hat) < \
        level0_residual(Q, chain, coarse.z_hat, coarse.lambda_hat)
    with pytest.raises(ValueError):
        refine(coarse, BasisSelection(np.zeros(1), np.array([], int), 0), Q, chain, tree)
    with pytest.raises(ValueError):
        score_and_select(occ, tree, level, unpack_wavelets(tree, level).shape[1] + 1)
