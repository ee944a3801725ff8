import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from doetree import datasets
from doetree import tree as T
from doetree.design import Dataset, Factor, enumerate_design
from doetree.io import tree_to_dict
from doetree.tree import (
    Tree,
    TreeConfig,
    calibrate_pvalue,
    choose_split_variable,
    curvature_pvalue,
    cv_select,
    fit_node,
    grow_tree,
    interaction_pvalue,
    make_leaf,
    make_split,
    predict,
    prune_sequence,
    to_polynomial,
)
from doetree.glm import Family


def null_data(k=4, r=1, seed=0):
    rng = np.random.default_rng(seed)
    x = np.repeat(enumerate_design(k), r, axis=0)
    return Dataset.from_signed(x, rng.normal(size=len(x)))


def signal_data(seed=0, r=2):
    rng = np.random.default_rng(seed)
    x = np.repeat(enumerate_design(4), r, axis=0)
    y = 2.0 * x[:, 3] + 1.5 * x[:, 1] * x[:, 3] + rng.normal(0, 0.3, len(x))
    return Dataset.from_signed(x, y)


class TestCurvatureTest:
    def test_asymptotic_matches_scipy(self):
        rng = np.random.default_rng(0)
        v = rng.integers(0, 3, 300)
        r = rng.normal(size=300) + 0.2 * v
        table = np.array([[np.sum((v == g) & (r >= 0)), np.sum((v == g) & (r < 0))] for g in range(3)])
        ref = stats.chi2_contingency(table, correction=False)[1]
        assert curvature_pvalue(v, r) == pytest.approx(ref, rel=1e-10)

    def test_randomized_exact_brackets_hypergeometric(self):
        # two groups of 5 and 7, 6 positives: enumerate the hypergeometric law
        v = np.array([0] * 5 + [1] * 7)
        r = np.array([1, 1, 1, 1, -1, 1, 1, -1, -1, -1, -1, -1], dtype=float)
        N, m, n1 = 12, 6, 5

        def stat(a):
            tab = np.array([[a, n1 - a], [m - a, N - n1 - m + a]])
            return stats.chi2_contingency(tab, correction=False)[0]

        obs = stat(4)
        support = range(max(0, m - (N - n1)), min(m, n1) + 1)
        pmf = {a: stats.hypergeom.pmf(a, N, m, n1) for a in support}
        p_gt = sum(p for a, p in pmf.items() if stat(a) > obs + 1e-9)
        p_ge = sum(p for a, p in pmf.items() if stat(a) >= obs - 1e-9)
        ps = [curvature_pvalue(v, r, rng=np.random.default_rng(s)) for s in range(50)]
        assert min(ps) >= p_gt - 1e-12 and max(ps) <= p_ge + 1e-12
        assert max(ps) - min(ps) > 0.5 * (p_ge - p_gt)

    def test_randomized_exact_is_uniform_under_null(self):
        rng = np.random.default_rng(1)
        ps = []
        for _ in range(1500):
            v = rng.integers(0, 2, 16)
            if v.min() == v.max():
                continue
            ps.append(curvature_pvalue(v, rng.normal(size=16), rng=rng))
        assert stats.kstest(ps, "uniform").pvalue > 0.01

    def test_degenerate_tables(self):
        assert curvature_pvalue([0, 1, 0, 1], [1.0, 1.0, 2.0, 3.0]) == 1.0
        with pytest.raises(ValueError):
            curvature_pvalue([1, 1, 1], [1.0, -1.0, 1.0])

    def test_interaction_cells(self):
        rng = np.random.default_rng(2)
        u, v = rng.integers(0, 2, 400), rng.integers(0, 2, 400)
        r = np.where(u == v, 1.0, -1.0) * rng.uniform(0.5, 1, 400)
        assert interaction_pvalue(u, v, r) < 1e-20
        assert interaction_pvalue(u, v, rng.normal(size=400)) > 1e-3


class TestCalibration:
    def test_identity_scale(self):
        assert calibrate_pvalue(0.3, 2, None) == 0.3
        assert calibrate_pvalue(0.3, 2, 1.0) == 0.3

    def test_scale_moves_statistic(self):
        stat = stats.chi2.isf(0.2, 3)
        assert calibrate_pvalue(0.2, 3, 0.5) == pytest.approx(stats.chi2.sf(0.5 * stat, 3))
        assert calibrate_pvalue(0.2, 3, 2.0) < 0.2


class TestNodeModels:
    def test_constant_is_mean(self):
        d = null_data(seed=3)
        m = fit_node(d)
        assert m.coefficients[0] == pytest.approx(d.y.mean())
        assert m.deviance == pytest.approx(np.sum((d.y - d.y.mean()) ** 2))

    def test_best_simple_picks_strongest_factor(self):
        d = signal_data()
        m = fit_node(d, "best_simple")
        assert m.columns == ((3, None),)
        np.testing.assert_allclose(m.coefficients[1], np.mean(d.y * d.signed_codes()[:, 3]))

    def test_best_simple_falls_back_to_constant(self):
        m = fit_node(null_data(seed=4), "best_simple")
        t = np.abs(m.coefficients[1:] / m.std_errors[1:]) if m.columns else np.array([])
        assert not m.columns or np.all(t > 2)

    def test_multiple_uses_all_numeric_factors(self):
        m = fit_node(signal_data(), "multiple")
        assert [c for c, _ in m.columns] == [0, 1, 2, 3]

    def test_stepwise_keeps_signal(self):
        m = fit_node(signal_data(), "stepwise")
        assert (3, None) in m.columns


class TestGrowth:
    def test_first_split_on_dominant_factor(self):
        tree = grow_tree(signal_data(), TreeConfig(), rng=0)
        assert tree.root.split.variable == 3

    def test_deterministic_given_seed(self):
        d = null_data(seed=5, r=2)
        a = tree_to_dict(grow_tree(d, TreeConfig(), rng=7))
        b = tree_to_dict(grow_tree(d, TreeConfig(), rng=7))
        assert a == b

    def test_min_node_size_respected(self):
        tree = grow_tree(signal_data(r=3), TreeConfig(min_node_size=10), rng=0)
        assert all(leaf.n >= 10 for leaf in tree.root.leaves())

    def test_max_depth_zero_is_root_only(self):
        assert grow_tree(signal_data(), TreeConfig(max_depth=0), rng=0).n_leaves == 1

    def test_choose_split_variable_reports_pvalues(self):
        j, info = choose_split_variable(signal_data(), rng=0)
        assert j == 3
        assert set(info["curvature"]) == {0, 1, 2, 3}
        assert set(info["interaction"]) == set(itertools.combinations(range(4), 2))
        assert min(info["curvature"], key=info["curvature"].get) == 3

    @pytest.mark.parametrize("kind", ["constant", "best_simple", "stepwise"])
    @pytest.mark.parametrize("seed", range(6))
    def test_compiled_grower_matches_reference(self, kind, seed, monkeypatch):
        d = null_data(seed=seed, r=1 + seed % 2) if seed % 3 else signal_data(seed=seed)
        cfg = TreeConfig(kind=kind)
        fast = tree_to_dict(grow_tree(d, cfg, rng=seed))
        monkeypatch.setattr(T, "USE_KERNELS", False)
        slow = tree_to_dict(grow_tree(d, cfg, rng=seed))
        _assert_close(fast, slow)

    def test_nominal_factor_subset_split_and_unseen_level(self):
        rng = np.random.default_rng(8)
        f = (Factor("M", ("a", "b", "c", "d")), Factor("A", ("-", "+")))
        codes = np.array(list(itertools.product(range(4), range(2))) * 8)
        y = np.where(np.isin(codes[:, 0], [0, 2]), 5.0, 0.0) + rng.normal(0, 0.2, len(codes))
        d = Dataset(f, codes, y)
        train = d.subset(codes[:, 0] != 3)
        tree = grow_tree(train, TreeConfig(), rng=0)
        assert tree.root.split.variable == 0 and tree.root.split.kind == "subset"
        assert set(tree.root.split.left_levels(f[0])) in ({0, 2}, {1})
        out, flags = predict(tree, np.array([[3, 0], [0, 0]]), return_flags=True)
        assert flags.tolist() == [True, False]
        assert np.isfinite(out).all()

    def test_poisson_tree_on_counts(self):
        d = datasets.synthetic_solder(seed=0).dataset
        tree = grow_tree(d, TreeConfig(family="poisson", max_depth=2), rng=0)
        mu = tree.predict(d)
        assert np.all(mu > 0) and tree.n_leaves >= 2

    def test_binomial_simple_tree_root_split(self):
        d = datasets.seed_germination().dataset
        tree = grow_tree(d, TreeConfig(kind="best_simple", family="binomial"), rng=0)
        assert d.factor_names[tree.root.split.variable] == "moist"


def _assert_close(a, b, path="root"):
    if isinstance(a, dict):
        assert a.keys() == b.keys(), path
        for k in a:
            _assert_close(a[k], b[k], f"{path}.{k}")
    elif isinstance(a, list):
        assert len(a) == len(b), path
        for i, (x, y) in enumerate(zip(a, b)):
            _assert_close(x, y, f"{path}[{i}]")
    elif isinstance(a, float) and isinstance(b, float):
        assert a == pytest.approx(b, rel=1e-9, abs=1e-9), path
    else:
        assert a == b, path


def _random_tree(draw_ints, draw_floats, k, depth, used=()):
    free = [j for j in range(k) if j not in used]
    if depth == 0 or not free or draw_ints(0, 2) == 0:
        slopes = {j: draw_floats() for j in range(k) if draw_ints(0, 1)}
        return make_leaf(draw_floats(), slopes)
    j = free[draw_ints(0, len(free) - 1)]
    left = _random_tree(draw_ints, draw_floats, k, depth - 1, used + (j,))
    right = _random_tree(draw_ints, draw_floats, k, depth - 1, used + (j,))
    return make_split(j, left, right)


class TestPolynomialExpansion:
    def _tree(self, root, k):
        factors = tuple(Factor(f"x{i + 1}", ("-", "+")) for i in range(k))
        return Tree(root, factors, Family.of("gaussian"), TreeConfig())

    def test_random_trees_match_predictions(self):
        rng = np.random.default_rng(9)
        ints = lambda lo, hi: int(rng.integers(lo, hi + 1))
        floats = lambda: float(rng.normal(0, 5))
        for _ in range(200):
            k = ints(1, 5)
            tree = self._tree(_random_tree(ints, floats, k, 4), k)
            pts = enumerate_design(k)
            np.testing.assert_allclose(to_polynomial(tree).evaluate(pts), predict(tree, (pts + 1) // 2), atol=1e-10)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_property(self, seed):
        rng = np.random.default_rng(seed)
        ints = lambda lo, hi: int(rng.integers(lo, hi + 1))
        floats = lambda: float(rng.uniform(-3, 3))
        tree = self._tree(_random_tree(ints, floats, 4, 3), 4)
        pts = enumerate_design(4)
        np.testing.assert_allclose(to_polynomial(tree).evaluate(pts), predict(tree, (pts + 1) // 2), atol=1e-10)

    def test_single_split(self):
        tree = self._tree(make_split(0, make_leaf(1.0), make_leaf(3.0)), 1)
        assert to_polynomial(tree).pruned().coefficients == {frozenset(): 2.0, frozenset({0}): 1.0}


class TestPruning:
    def test_sequence_is_nested_and_monotone(self):
        tree = grow_tree(null_data(seed=10, r=2), TreeConfig(), rng=0)
        seq = prune_sequence(tree)
        assert list(seq.alphas) == sorted(seq.alphas)
        sizes = [s.n_leaves for s in seq.subtrees]
        assert sizes[0] == tree.n_leaves and sizes[-1] == 1
        assert all(a > b for a, b in zip(sizes, sizes[1:]))
        cuts = [set(c) for c in seq.cuts]
        assert all(a <= b for a, b in zip(cuts, cuts[1:]))

    def test_weakest_link_by_hand(self):
        # leaves 0, 1 under the left child, 10, 30 under the right: the left
        # branch gains less per extra leaf and is pruned first
        left = make_split(1, make_leaf(0.0, n=2), make_leaf(1.0, n=2))
        right = make_split(1, make_leaf(10.0, n=2), make_leaf(30.0, n=2))
        codes = np.array(list(itertools.product(range(2), range(2))) * 2)
        y = np.array([0.0, 1.0, 10.0, 30.0] * 2)
        d = Dataset((Factor("A", ("-", "+")), Factor("B", ("-", "+"))), codes, y)
        tree = grow_tree(d, TreeConfig(min_node_size=2), rng=0)
        seq = prune_sequence(tree)
        assert seq.subtree(1).n_leaves == 3
        kept = seq.subtree(1).root
        assert kept.left.is_leaf and not kept.right.is_leaf

    def test_cv_select_deterministic(self):
        d = signal_data(seed=11)
        a = cv_select(d, TreeConfig(), folds=5, seed=3)
        b = cv_select(d, TreeConfig(), folds=5, seed=3)
        assert tree_to_dict(a) == tree_to_dict(b)
        assert a.cv.folds == 5 and len(a.cv.errors) == len(a.cv.betas)
        assert a.cv.betas[-1] == np.inf

    def test_cv_prefers_root_on_pure_noise(self):
        roots = sum(cv_select(null_data(seed=s, r=6), TreeConfig(), seed=s).n_leaves == 1 for s in range(10))
        assert roots >= 6

    def test_cv_recovers_signal(self):
        tree = cv_select(signal_data(seed=12, r=3), TreeConfig(), seed=0)
        assert tree.root.split.variable == 3 and tree.n_leaves >= 3


class TestInvariants:
    def test_heredity_of_expanded_trees(self):
        rng = np.random.default_rng(13)
        ints = lambda lo, hi: int(rng.integers(lo, hi + 1))
        floats = lambda: float(rng.normal(0, 5))
        factors = tuple(Factor(f"x{i + 1}", ("-", "+")) for i in range(5))
        for _ in range(100):
            tree = Tree(_random_tree(ints, floats, 5, 4), factors, Family.of("gaussian"), TreeConfig())
            poly = to_polynomial(tree).pruned(1e-9)
            for t in poly.terms:
                if len(t) >= 2:
                    assert any(poly[t - {f}] != 0.0 for f in t), sorted(t)

    @pytest.mark.parametrize("kind", ["constant", "best_simple", "multiple", "stepwise"])
    def test_leaf_counts_sum_to_n(self, kind):
        d = signal_data(seed=14, r=3)
        tree = grow_tree(d, TreeConfig(kind=kind), rng=0)
        assert sum(leaf.n for leaf in tree.root.leaves()) == d.n
        ids = {leaf.node_id for leaf in tree.root.leaves()}
        codes = d.codes
        reached = set()
        for row in codes:
            node = tree.root
            while not node.is_leaf:
                node = node.left if node.split.route(row[[node.split.variable]])[0] else node.right
            reached.add(node.node_id)
        assert reached <= ids
