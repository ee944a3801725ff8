"""scikit-learn style wrappers around the selection rules and the tree grower."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .classic import (
    DEFAULT_MC_SEED,
    MC_DRAWS,
    estimate_effects,
    select_eer,
    select_ier,
    select_lenth,
    stepwise_aic,
)
from .design import Dataset, Factor
from .tree import NODE_KINDS, TreeConfig, cv_select, grow_tree

__all__ = ["FactorialModelSelector", "GuideTreeRegressor"]

_METHODS = ("ier", "eer", "aic", "lenth-ier", "lenth-eer")
_DEFAULT_ALPHA = {"ier": 0.05, "eer": 0.10, "lenth-ier": 0.05, "lenth-eer": 0.10}


def _check_xy(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2:
        raise ValueError("X must be two-dimensional")
    if X.shape[0] != y.shape[0]:
        raise ValueError("X and y have inconsistent numbers of rows")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("X and y must be finite")
    return X, y


class FactorialModelSelector(BaseEstimator, RegressorMixin):
    """Effect selection on a complete two-level factorial.

    Parameters
    ----------
    method : {"ier", "eer", "aic", "lenth-ier", "lenth-eer"}
        Selection rule. The first three need replicates.
    alpha : float, optional
        Test level; defaults to 0.05 for IER rules and 0.10 for EER rules.
        Ignored by ``"aic"``.
    random_state : int
        Seed of the Monte Carlo critical values of Lenth's rules.

    Attributes
    ----------
    effects_ : EffectTable
        Saturated estimates.
    terms_ : frozenset
        Selected terms as sets of column indices.
    polynomial_ : Polynomial
        Fitted polynomial in +/-1 codes.
    intercept_ : float
    critical_value_ : float or None
    """

    def __init__(self, method: str = "ier", alpha: float | None = None, random_state: int = DEFAULT_MC_SEED):
        self.method = method
        self.alpha = alpha
        self.random_state = random_state

    def fit(self, X, y):
        """Fit on +/-1 coded rows ``X`` of shape (n, k)."""
        if self.method not in _METHODS:
            raise ValueError(f"method must be one of {_METHODS}")
        X, y = _check_xy(X, y)
        data = Dataset.from_signed(X, y)
        table = estimate_effects(data)
        alpha = self.alpha if self.alpha is not None else _DEFAULT_ALPHA.get(self.method)
        if self.method == "ier":
            model = select_ier(table, alpha)
        elif self.method == "eer":
            model = select_eer(table, alpha)
        elif self.method == "aic":
            model = stepwise_aic(data)
        else:
            mode = self.method.split("-")[1].upper()
            model = select_lenth(table, mode, alpha, MC_DRAWS, int(self.random_state))
        self.effects_ = table
        self.model_ = model
        self.terms_ = model.terms
        self.polynomial_ = model.fitted
        self.intercept_ = model.fitted[frozenset()]
        self.critical_value_ = model.critical_value
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} columns, expected {self.n_features_in_}")
        return self.polynomial_.evaluate(X)


class GuideTreeRegressor(BaseEstimator, RegressorMixin):
    """Regression tree with unbiased split selection and linear node models.

    Columns of ``X`` are factors. A column with two distinct values becomes
    a two-level factor coded by its sorted values; columns with more values
    are nominal unless listed in ``ordinal``, in which case the values act
    as level scores.

    Parameters
    ----------
    model : {"constant", "best_simple", "multiple", "stepwise"}
        Node model kind.
    family : {"gaussian", "poisson", "binomial"}
    folds : int
        Cross-validation folds for pruning; 0 keeps the grown tree.
    se_rule : float
        Standard-error multiplier of the subtree choice.
    max_depth, min_node_size, n_bootstrap, interactions
        Growth settings passed to :class:`TreeConfig`.
    ordinal : sequence of int, optional
        Column indices treated as ordered.
    random_state : int
        Seed of cross-validation folds and bootstrap calibration.

    Attributes
    ----------
    tree_ : Tree
    categories_ : list of ndarray
        Sorted distinct values of each column.
    """

    def __init__(
        self,
        model: str = "constant",
        family: str = "gaussian",
        folds: int = 10,
        se_rule: float = 0.0,
        max_depth: int = 6,
        min_node_size: int | None = None,
        n_bootstrap: int = 50,
        interactions: bool = True,
        ordinal=None,
        random_state: int = 0,
    ):
        self.model = model
        self.family = family
        self.folds = folds
        self.se_rule = se_rule
        self.max_depth = max_depth
        self.min_node_size = min_node_size
        self.n_bootstrap = n_bootstrap
        self.interactions = interactions
        self.ordinal = ordinal
        self.random_state = random_state

    def _codes(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} columns, expected {self.n_features_in_}")
        codes = np.empty(X.shape, dtype=np.int64)
        for j, cats in enumerate(self.categories_):
            idx = np.searchsorted(cats, X[:, j])
            idx = np.minimum(idx, cats.size - 1)
            if np.any(cats[idx] != X[:, j]):
                raise ValueError(f"column {j} has values not seen during fit")
            codes[:, j] = idx
        return codes

    def fit(self, X, y, n_trials=None):
        """Grow and prune a tree.

        ``n_trials`` gives binomial denominators; without it a binomial
        ``y`` must be 0/1.
        """
        if self.model not in NODE_KINDS:
            raise ValueError(f"model must be one of {NODE_KINDS}")
        if self.random_state is None:
            raise ValueError("random_state must be an integer seed")
        X, y = _check_xy(X, y)
        ordinal = set(self.ordinal or ())
        self.n_features_in_ = X.shape[1]
        self.categories_ = [np.unique(X[:, j]) for j in range(X.shape[1])]
        factors = []
        for j, cats in enumerate(self.categories_):
            labels = [f"{v:g}" for v in cats]
            if cats.size < 2:
                raise ValueError(f"column {j} is constant")
            if j in ordinal and cats.size > 2:
                factors.append(Factor(f"x{j + 1}", labels, "ordinal", tuple(cats)))
            else:
                factors.append(Factor(f"x{j + 1}", labels))
        kind = {"gaussian": "gaussian", "poisson": "count", "binomial": "proportion"}.get(self.family)
        if kind is None:
            raise ValueError("family must be gaussian, poisson or binomial")
        if kind == "proportion" and n_trials is None:
            n_trials = np.ones_like(y)
        codes = np.empty(X.shape, dtype=np.int64)
        for j, cats in enumerate(self.categories_):
            codes[:, j] = np.searchsorted(cats, X[:, j])
        data = Dataset(tuple(factors), codes, y, n_trials if kind == "proportion" else None, kind)
        config = TreeConfig(
            kind=self.model,
            family=self.family,
            min_node_size=self.min_node_size,
            max_depth=self.max_depth,
            n_bootstrap=self.n_bootstrap,
            interactions=self.interactions,
        )
        if self.folds:
            self.tree_ = cv_select(data, config, folds=self.folds, seed=int(self.random_state), se_rule=self.se_rule)
        else:
            self.tree_ = grow_tree(data, config, rng=np.random.default_rng(int(self.random_state)))
        return self

    def predict(self, X):
        """Response-scale predictions (means, rates or probabilities)."""
        check_is_fitted(self, "tree_")
        return self.tree_.predict(self._codes(X))

    def apply(self, X):
        """Node id of the leaf reached by each row."""
        check_is_fitted(self, "tree_")
        codes = self._codes(X)
        out = np.empty(codes.shape[0], dtype=np.int64)
        for i, row in enumerate(codes):
            node = self.tree_.root
            while not node.is_leaf:
                left = node.split.route(row[node.split.variable : node.split.variable + 1])[0]
                node = node.left if left else node.right
            out[i] = node.node_id
        return out
