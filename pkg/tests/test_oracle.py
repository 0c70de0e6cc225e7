"""Event-tree oracle: structure, exact expectations, exact representations,
discrete backward solver, and dynamic programming, with hand-solved anchors."""
import math
from fractions import Fraction

import numpy as np
import pytest

from defaultlab.oracle import (
    build_tree,
    merton_matched_delta,
    spanning_dimensions,
    tree_bsde,
    tree_conditional_expectation,
    tree_dp_optimize,
    tree_probs_from_model,
    tree_representation,
)


def _merton_generator(phi, alpha):
    """Flat-market generator: -(z phi + phi^2/(2 alpha)); no jump terms."""

    def f(t, z, w_marks, w_def, pre_default):
        return -(z * phi + phi * phi / (2.0 * alpha))

    return f


def _default_generator(lam, alpha, phi=0.0):
    def f(t, z, w_marks, w_def, pre_default):
        comp = (np.exp(alpha * w_def) - 1.0 - alpha * w_def) * lam / alpha
        return -(z * phi + phi * phi / (2.0 * alpha)) + comp * pre_default

    return f


# ---------------------------------------------------------------- build_tree
def test_three_leaf_tree():
    tree = build_tree(n=1, m=0, dt=1.0, delta=1.0, default_probs=0.1)
    assert tree.n_leaves == 3
    probs = tree.branch_probs(0, defaulted=False)
    assert probs == pytest.approx([0.45, 0.45, 0.1])


def test_leaf_count_upper_bound():
    tree = build_tree(n=8, m=1, dt=0.125, delta=math.sqrt(0.125),
                      mark_probs=[0.05], default_probs=0.03)
    assert tree.n_leaves <= 4**8
    assert tree.n_nodes() == sum(lev.size for lev in tree.levels)


def test_no_default_branch_after_default():
    tree = build_tree(n=2, m=0, dt=0.5, delta=1.0, default_probs=0.2)
    lev = tree.levels[2]
    # children of the defaulted level-1 node are up/down only
    defaulted_parents = np.nonzero(tree.levels[1].defaulted)[0]
    for p in defaulted_parents:
        labels = lev.label[lev.parent == p]
        assert set(labels.tolist()) == {0, 1}
        probs = lev.prob[lev.parent == p]
        assert probs == pytest.approx([0.5, 0.5])


def test_probability_budget_violation():
    with pytest.raises(ValueError, match="probability budget"):
        build_tree(n=1, m=1, dt=1.0, delta=1.0, mark_probs=[0.7], default_probs=0.3)


def test_node_cap():
    with pytest.raises(ValueError, match="node cap"):
        build_tree(n=15, m=2, dt=0.1, delta=1.0, mark_probs=[0.1, 0.1],
                   default_probs=0.1)


def test_branch_probs_sum_to_one():
    tree = build_tree(n=3, m=2, dt=1.0 / 3, delta=0.5,
                      mark_probs=[0.1, 0.2], default_probs=[0.1, 0.0, 0.05])
    for k in range(3):
        for defaulted in (False, True):
            assert sum(tree.branch_probs(k, defaulted)) == pytest.approx(1.0)
        lev = tree.levels[k + 1]
        for i in range(tree.levels[k].size):
            assert lev.prob[lev.parent == i].sum() == pytest.approx(1.0)


# ------------------------------------------------- conditional expectations
def test_condexp_constants():
    tree = build_tree(n=3, m=1, dt=1.0 / 3, delta=1.0, mark_probs=[0.1],
                      default_probs=0.1)
    vals = tree_conditional_expectation(tree, np.full(tree.n_leaves, 2.5), 0)
    assert vals[0] == pytest.approx(2.5, abs=1e-14)


def test_condexp_identity_at_leaf_level():
    tree = build_tree(n=2, m=0, dt=0.5, delta=1.0)
    leaves = np.arange(tree.n_leaves, dtype=float)
    np.testing.assert_array_equal(tree_conditional_expectation(tree, leaves, 2), leaves)


def test_condexp_three_leaf_hand_value():
    tree = build_tree(n=1, m=0, dt=1.0, delta=1.0, default_probs=0.1)
    root = tree_conditional_expectation(tree, np.array([1.0, -1.0, 0.0]), 0)
    assert root[0] == pytest.approx(0.0, abs=1e-15)


def test_condexp_tower_property():
    tree = build_tree(n=4, m=1, dt=0.25, delta=0.5, mark_probs=[0.15],
                      default_probs=0.1)
    rng = np.random.default_rng(0)
    leaves = rng.uniform(-1, 1, tree.n_leaves)
    via_two = tree_conditional_expectation(
        tree, leaves, 2
    )
    direct_root = tree_conditional_expectation(tree, leaves, 0)[0]
    # averaging the level-2 values with the first two steps reproduces the root
    probs_to_level2 = np.ones(tree.levels[2].size)
    lev1, lev2 = tree.levels[1], tree.levels[2]
    probs_to_level2 = lev2.prob * lev1.prob[lev2.parent]
    assert float(np.sum(probs_to_level2 * via_two)) == pytest.approx(direct_root, rel=1e-13)


# ------------------------------------------------------------ representation
def test_representation_hand_case_diffusion():
    tree = build_tree(n=1, m=0, dt=1.0, delta=1.0, default_probs=0.1)
    rep = tree_representation(tree, np.array([1.0, -1.0, 0.0]))
    assert rep.K[0][0] == pytest.approx(1.0, abs=1e-15)
    assert rep.W_def[0][0] == pytest.approx(0.0, abs=1e-15)
    assert rep.max_residual <= 1e-15


def test_representation_hand_case_compensated_default():
    tree = build_tree(n=1, m=0, dt=1.0, delta=1.0, default_probs=0.1)
    rep = tree_representation(tree, np.array([-0.1, -0.1, 0.9]))
    assert rep.K[0][0] == pytest.approx(0.0, abs=1e-15)
    assert rep.W_def[0][0] == pytest.approx(1.0, abs=1e-14)


def test_representation_random_payoffs_small_tree():
    tree = build_tree(n=4, m=1, dt=0.25, delta=0.5, mark_probs=[0.12],
                      default_probs=0.08)
    rng = np.random.default_rng(7)
    for _ in range(20):
        rep = tree_representation(tree, rng.uniform(-1, 1, tree.n_leaves))
        assert rep.max_residual <= 1e-12


def test_representation_exact_rational_zero_residual():
    tree = build_tree(
        n=3, m=1, dt=Fraction(1, 3), delta=Fraction(1, 2),
        mark_probs=[Fraction(1, 10)], default_probs=Fraction(1, 20), exact=True,
    )
    rng = np.random.default_rng(3)
    leaves = np.array(
        [Fraction(int(v), 97) for v in rng.integers(-100, 100, tree.n_leaves)],
        dtype=object,
    )
    rep = tree_representation(tree, leaves)
    assert rep.max_residual == 0  # exactly zero, not merely small


def test_representation_unique_vs_least_squares():
    """Independent weighted least-squares per node reproduces (K, W, W_def)."""
    tree = build_tree(n=2, m=1, dt=0.5, delta=0.7, mark_probs=[0.15],
                      default_probs=0.1)
    rng = np.random.default_rng(11)
    leaves = rng.uniform(-2, 2, tree.n_leaves)
    rep = tree_representation(tree, leaves)
    values = [tree_conditional_expectation(tree, leaves, k) for k in range(3)]
    for k in range(2):
        cur, ch = tree.levels[k], tree.levels[k + 1]
        for i in range(cur.size):
            sel = ch.parent == i
            labels, probs = ch.label[sel], ch.prob[sel]
            dv = values[k + 1][sel] - values[k][i]
            cols = [np.where(labels == 0, tree.delta, np.where(labels == 1, -tree.delta, 0.0))]
            names = ["K"]
            if np.any(labels == 2):
                cols.append((labels == 2).astype(float) - tree.mark_probs[k][0])
                names.append("W")
            if np.any(labels == 3):
                cols.append((labels == 3).astype(float) - tree.q[k])
                names.append("Wd")
            A = np.array(cols).T * np.sqrt(probs)[:, None]
            coef, *_ = np.linalg.lstsq(A, dv * np.sqrt(probs), rcond=None)
            got = dict(zip(names, coef))
            assert got["K"] == pytest.approx(rep.K[k][i], abs=1e-10)
            if "W" in got:
                assert got["W"] == pytest.approx(rep.W[k][i, 0], abs=1e-10)
            if "Wd" in got:
                assert got["Wd"] == pytest.approx(rep.W_def[k][i], abs=1e-10)


def test_spanning_dimension_full():
    tree = build_tree(n=5, m=1, dt=0.2, delta=0.5, mark_probs=[0.1],
                      default_probs=0.07)
    for level_info in spanning_dimensions(tree):
        for outcomes, rank in level_info:
            assert rank == outcomes - 1


# -------------------------------------------------------------------- BSDE
def test_tree_bsde_merton_single_step():
    tree = build_tree(n=1, m=0, dt=1.0, delta=1.0)
    res = tree_bsde(tree, np.zeros(tree.n_leaves), _merton_generator(0.2, 1.0), 1.0)
    assert res.y0 == pytest.approx(-0.02, abs=1e-15)


def test_tree_bsde_default_hand_recursion():
    q = 1.0 - math.exp(-0.3)
    tree = build_tree(n=1, m=0, dt=1.0, delta=1.0, default_probs=q)
    leaves = (~tree.levels[1].defaulted).astype(float)  # 1 on no-default
    res = tree_bsde(tree, leaves, _default_generator(0.3, 1.0), 1.0)
    expected = math.exp(-0.3) + 0.3 * math.exp(-1.0)
    assert res.y0 == pytest.approx(expected, abs=1e-12)
    assert res.rep.W_def[0][0] == pytest.approx(-1.0, abs=1e-12)


def test_tree_bsde_constant_claim():
    tree = build_tree(n=3, m=1, dt=1.0 / 3, delta=0.5, mark_probs=[0.1],
                      default_probs=0.1)
    res = tree_bsde(tree, np.full(tree.n_leaves, 0.7),
                    _default_generator(0.3, 1.0, phi=0.0), 1.0)
    for k in range(4):
        np.testing.assert_allclose(res.y[k], 0.7, atol=1e-13)


def test_tree_bsde_overflow_reports_location():
    tree = build_tree(n=1, m=0, dt=1.0, delta=1.0, default_probs=0.1)
    big = 800.0 * (~tree.levels[1].defaulted).astype(float)
    with pytest.raises(ValueError, match="generator overflow"):
        tree_bsde(tree, big, _default_generator(0.3, 1.0), 1.0)


# ---------------------------------------------------------------------- DP
def test_dp_single_step_hand_case():
    tree = build_tree(n=1, m=0, dt=1.0, delta=1.0, phi=0.2)
    res = tree_dp_optimize(tree, np.zeros(tree.n_leaves), alpha=1.0, x=0.0)
    theta_star = math.log(1.5) / 2.0
    assert res.theta[0][0] == pytest.approx(theta_star, abs=1e-9)
    value = -0.5 * (math.exp(-1.2 * theta_star) + math.exp(0.8 * theta_star))
    assert res.value == pytest.approx(value, abs=1e-9)
    assert res.value == pytest.approx(-0.980066, abs=1e-6)


def test_dp_symmetric_tree_no_trading():
    tree = build_tree(n=3, m=0, dt=1.0 / 3, delta=0.6)
    res = tree_dp_optimize(tree, np.zeros(tree.n_leaves), alpha=2.0, x=0.3)
    for arr in res.theta:
        np.testing.assert_allclose(arr, 0.0, atol=1e-10)
    assert res.value == pytest.approx(-math.exp(-2.0 * 0.3), rel=1e-12)


def test_dp_matches_bsde_on_matched_merton_tree():
    n, phi, alpha = 8, 0.2, 1.0
    dt = 1.0 / n
    delta = merton_matched_delta(phi, alpha, dt)
    tree = build_tree(n=n, m=0, dt=dt, delta=delta, phi=phi)
    res_bsde = tree_bsde(tree, np.zeros(tree.n_leaves), _merton_generator(phi, alpha), alpha)
    res_dp = tree_dp_optimize(tree, np.zeros(tree.n_leaves), alpha=alpha, x=0.0)
    assert abs(res_dp.y0 - res_bsde.y0) <= 1e-8
    assert res_bsde.y0 == pytest.approx(-0.02, abs=1e-12)


def test_dp_bsde_gap_shrinks_linearly_with_dt():
    """With marks present the two backward recursions differ at O(dt)."""
    phi, alpha, lam_q = 0.2, 1.0, 0.3

    def gap(n):
        dt = 1.0 / n
        tree = build_tree(
            n=n, m=1, dt=dt, delta=merton_matched_delta(phi, alpha, dt),
            mark_probs=[0.2 * dt], default_probs=1.0 - math.exp(-lam_q * dt), phi=phi,
        )
        leaves = (~tree.levels[n].defaulted).astype(float)
        res_b = tree_bsde(tree, leaves, _default_generator(lam_q, alpha, phi), alpha)
        res_d = tree_dp_optimize(tree, leaves, alpha=alpha, x=0.0)
        return abs(res_d.y0 - res_b.y0)

    g4, g8 = gap(4), gap(8)
    assert g8 < 0.75 * g4  # roughly halves when dt halves


def test_matched_delta_near_sqrt_dt():
    dt = 0.125
    delta = merton_matched_delta(0.2, 1.0, dt)
    assert delta == pytest.approx(math.sqrt(dt), rel=2e-3)
    assert delta > math.sqrt(dt)
    assert merton_matched_delta(0.0, 1.0, dt) == math.sqrt(dt)


# -------------------------------------------------- on-tree hazard identity
def test_tree_survival_matches_hazard_quadrature():
    """With q_k = 1 - exp(-int lambda), on-tree survival equals exp(-int lambda)
    exactly, so the cumulative -log(1-q) compensator matches the hazard."""
    from defaultlab.core import FiniteLevyMeasure, IntensitySpec, TimeFunction, build_grid

    grid = build_grid(1.0, 8)
    intensity = IntensitySpec(rate=TimeFunction.piecewise([0.0, 0.5], [0.2, 0.6]))
    pi, q = tree_probs_from_model(FiniteLevyMeasure.none(), intensity, grid)
    on_tree = np.cumsum(-np.log1p(-q))
    exact = intensity.rate.cumulative_at(grid.nodes[1:])
    np.testing.assert_allclose(on_tree, exact, atol=1e-12)
    crude = intensity.lam(grid.nodes[:-1]) * grid.dt  # first-order branch probs
    gap = np.abs(np.cumsum(-np.log1p(-crude)) - exact)
    assert np.max(gap) <= 0.6**2 * grid.T * grid.dt  # O(dt), lam^2 T dt bound
