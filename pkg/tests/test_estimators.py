import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from doetree import FactorialModelSelector, GuideTreeRegressor, datasets
from doetree.classic import estimate_effects, select_ier


@pytest.fixture(scope="module")
def wafer():
    d = datasets.wafer_reconstruction().dataset
    return d, d.signed_codes(), d.y


def test_selector_matches_functional_api(wafer):
    d, X, y = wafer
    est = FactorialModelSelector("ier").fit(X, y)
    ref = select_ier(estimate_effects(d), 0.05)
    assert est.terms_ == ref.terms
    np.testing.assert_allclose(est.predict(X), ref.predict(X))
    assert est.intercept_ == pytest.approx(14.16125)


@pytest.mark.parametrize("method", ["ier", "eer", "aic"])
def test_selector_methods(wafer, method):
    _, X, y = wafer
    est = FactorialModelSelector(method).fit(X, y)
    assert frozenset({3}) in est.terms_ and 0 < est.score(X, y) < 1


def test_selector_lenth_on_reactor():
    d = datasets.reactor_reconstruction().dataset
    est = FactorialModelSelector("lenth-eer").fit(d.signed_codes(), d.y)
    assert len(est.terms_) == 4


def test_selector_validation(wafer):
    _, X, y = wafer
    with pytest.raises(ValueError):
        FactorialModelSelector("bogus").fit(X, y)
    with pytest.raises(NotFittedError):
        FactorialModelSelector().predict(X)
    with pytest.raises(ValueError):
        FactorialModelSelector().fit(X, y).predict(X[:, :3])


def test_tree_regressor(wafer):
    _, X, y = wafer
    est = GuideTreeRegressor(random_state=0).fit(X, y)
    assert est.tree_.root.split.variable == 3
    leaves = est.apply(X)
    assert len(np.unique(leaves)) == est.tree_.n_leaves
    # constant leaves predict their training means
    for leaf in np.unique(leaves):
        np.testing.assert_allclose(est.predict(X[leaves == leaf]), y[leaves == leaf].mean())


def test_tree_regressor_params_and_clone():
    est = GuideTreeRegressor(model="stepwise", folds=5, random_state=3)
    c = clone(est)
    assert c.get_params() == est.get_params()
    c.set_params(max_depth=2)
    assert c.max_depth == 2


def test_tree_regressor_binomial_with_ordinal():
    d = datasets.seed_germination().dataset
    X = np.column_stack([d.factors[0].values()[d.codes[:, 0]], d.factors[1].values()[d.codes[:, 1]], d.codes[:, 2]])
    est = GuideTreeRegressor(model="best_simple", family="binomial", ordinal=[1], folds=0).fit(X, d.y, n_trials=d.n_trials)
    p = est.predict(X)
    assert np.all((p > 0) & (p < 1))
    assert est.tree_.root.split.variable == 2


def test_tree_regressor_rejects_unseen_values(wafer):
    _, X, y = wafer
    est = GuideTreeRegressor(folds=0).fit(X, y)
    with pytest.raises(ValueError):
        est.predict(np.array([[0.0, 1.0, 1.0, 1.0]]))


def test_tree_regressor_deterministic(wafer):
    _, X, y = wafer
    a = GuideTreeRegressor(random_state=5).fit(X, y).predict(X)
    b = GuideTreeRegressor(random_state=5).fit(X, y).predict(X)
    np.testing.assert_array_equal(a, b)
