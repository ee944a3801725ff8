"""GUIDE-style regression trees with unbiased split-variable selection.

A node is split in two steps. First the split variable is chosen by
chi-squared tests of association between the signs of the node model's
residuals and each variable's grouped values (plus pairwise interaction
tests). Then the split set or threshold for that variable alone is found by
exhaustive search. Trees are pruned by cost complexity and the subtree is
picked by V-fold cross-validation.

Small contingency tables are referred to the exact conditional (fixed
margins) distribution of the Pearson statistic, with a uniform draw used to
randomize over ties so the null p-values are exactly uniform. Larger tables
use the asymptotic chi-squared distribution.
"""

from __future__ import annotations

import bisect
import itertools
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.special import chdtrc, chdtri, gammaln

from . import _kernels
from .design import INTERCEPT, DataError, Dataset, Factor, Polynomial
from .glm import ConvergenceError, Family, FitResult, ols_fit, irls_fit

__all__ = [
    "NODE_KINDS",
    "TreeConfig",
    "NodeModel",
    "Split",
    "TreeNode",
    "Tree",
    "PruneSequence",
    "CVPath",
    "fit_node",
    "curvature_pvalue",
    "interaction_pvalue",
    "calibrate_pvalue",
    "bootstrap_scale",
    "choose_split_variable",
    "best_split_value",
    "grow_tree",
    "prune_sequence",
    "cv_select",
    "predict",
    "to_polynomial",
    "make_leaf",
    "make_split",
]

NODE_KINDS = ("constant", "best_simple", "multiple", "stepwise")
EXACT_LIMIT = 50_000
EQ_TOL = _kernels.EQ_TOL
# compiled kernels for two-level designs; the tests switch this off to
# compare against the pure numpy path
USE_KERNELS = True
MAX_SUBSET_LEVELS = 12
T_THRESHOLD = 2.0


@dataclass(frozen=True)
class TreeConfig:
    """Growth settings.

    ``regressors`` restricts which factors may enter node models (by name);
    ``None`` allows every factor with a numeric coding, plus nominal
    factors as indicator blocks in multiple and stepwise models.
    """

    kind: str = "constant"
    family: str = "gaussian"
    min_node_size: int | None = None
    max_depth: int = 6
    n_bootstrap: int = 50
    interactions: bool = True
    regressors: tuple | None = None

    def __post_init__(self):
        if self.kind not in NODE_KINDS:
            raise ValueError(f"kind must be one of {NODE_KINDS}")
        Family.of(self.family)
        if self.max_depth < 0:
            raise ValueError("max_depth must be non-negative")
        if self.min_node_size is not None and self.min_node_size < 1:
            raise ValueError("min_node_size must be positive")
        if self.n_bootstrap < 20:
            raise ValueError("n_bootstrap must be at least 20")
        if self.regressors is not None:
            object.__setattr__(self, "regressors", tuple(self.regressors))


@dataclass(frozen=True, eq=False)
class NodeModel:
    """Fitted linear predictor of one node.

    ``columns`` describes each regressor as ``(factor, level)``: ``level``
    is ``None`` for a factor's numeric coding, otherwise the column is the
    indicator of that level.
    """

    columns: tuple
    coefficients: np.ndarray
    std_errors: np.ndarray
    deviance: float
    family: Family
    fit: FitResult | None = None

    @property
    def regressor_factors(self) -> frozenset:
        return frozenset(f for (f, _), c in zip(self.columns, self.coefficients[1:]) if c != 0.0)

    def design(self, codes: np.ndarray, factors: Sequence[Factor]) -> np.ndarray:
        X = np.ones((codes.shape[0], 1 + len(self.columns)))
        for j, (f, lev) in enumerate(self.columns, start=1):
            X[:, j] = factors[f].values()[codes[:, f]] if lev is None else (codes[:, f] == lev)
        return X

    def eta(self, codes: np.ndarray, factors: Sequence[Factor]) -> np.ndarray:
        return self.design(codes, factors) @ self.coefficients

    def labels(self, factors: Sequence[Factor]) -> list[str]:
        out = ["(Intercept)"]
        for f, lev in self.columns:
            out.append(factors[f].name if lev is None else f"{factors[f].name}={factors[f].levels[lev]}")
        return out


@dataclass(frozen=True)
class Split:
    """Routing rule: ``threshold`` sends level index ``<= threshold`` left,
    ``subset`` sends levels in ``subset`` left. Levels outside ``seen`` go
    to the default side."""

    variable: int
    kind: str
    threshold: int | None = None
    subset: frozenset | None = None
    seen: frozenset = frozenset()
    default_left: bool = True

    def goes_left(self, levels: np.ndarray) -> np.ndarray:
        if self.kind == "threshold":
            return levels <= self.threshold
        return np.isin(levels, list(self.subset))

    def unseen(self, levels: np.ndarray) -> np.ndarray:
        if self.kind == "threshold":
            return np.zeros(levels.shape, dtype=bool)
        return ~np.isin(levels, list(self.seen))

    def route(self, levels: np.ndarray) -> np.ndarray:
        left = self.goes_left(levels)
        unseen = self.unseen(levels)
        if unseen.any():
            left = np.where(unseen, self.default_left, left)
        return left

    def left_levels(self, factor: Factor) -> list[int]:
        if self.kind == "threshold":
            return [i for i in range(factor.n_levels) if i <= self.threshold]
        return sorted(self.subset)

    def describe(self, factor: Factor) -> str:
        if self.kind == "threshold" and not factor.is_two_level:
            return f"{factor.name} <= {factor.levels[self.threshold]}"
        levels = self.left_levels(factor)
        if len(levels) == 1:
            return f"{factor.name} = {factor.levels[levels[0]]}"
        return f"{factor.name} in {{{', '.join(factor.levels[i] for i in levels)}}}"


@dataclass(frozen=True, eq=False)
class TreeNode:
    """A tree node; leaves have ``split is None``."""

    model: NodeModel
    n: int
    mean: float
    deviance: float
    depth: int = 0
    node_id: int = 1
    split: Split | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    pvalues: dict = field(default_factory=dict, repr=False)

    @property
    def is_leaf(self) -> bool:
        return self.split is None

    def leaves(self) -> list["TreeNode"]:
        if self.is_leaf:
            return [self]
        return self.left.leaves() + self.right.leaves()

    def internal_nodes(self) -> list["TreeNode"]:
        if self.is_leaf:
            return []
        return [self] + self.left.internal_nodes() + self.right.internal_nodes()

    def walk(self):
        yield self
        if not self.is_leaf:
            yield from self.left.walk()
            yield from self.right.walk()


@dataclass(frozen=True)
class CVPath:
    alphas: tuple
    betas: tuple
    errors: tuple
    chosen: int
    folds: int
    std_errors: tuple = ()
    se_rule: float = 0.0


@dataclass(frozen=True, eq=False)
class Tree:
    root: TreeNode
    factors: tuple
    family: Family
    config: TreeConfig
    cv: CVPath | None = None

    @property
    def n_leaves(self) -> int:
        return len(self.root.leaves())

    def predict(self, X, return_flags: bool = False):
        return predict(self, X, return_flags=return_flags)


@dataclass(frozen=True, eq=False)
class PruneSequence:
    """Nested subtrees of ``tree``; subtree ``i`` collapses the nodes in ``cuts[i]``."""

    tree: Tree
    alphas: tuple
    cuts: tuple

    def __len__(self) -> int:
        return len(self.alphas)

    def index_for(self, alpha: float) -> int:
        """Index of the smallest subtree whose critical alpha does not exceed ``alpha``."""
        idx = 0
        for i, a in enumerate(self.alphas):
            if a <= alpha * (1 + 1e-12) + 1e-15:
                idx = i
        return idx

    def subtree(self, i: int) -> Tree:
        return replace(self.tree, root=_collapse(self.tree.root, self.cuts[i]), cv=None)

    def subtree_for(self, alpha: float) -> Tree:
        return self.subtree(self.index_for(alpha))

    @property
    def subtrees(self) -> tuple:
        return tuple(self.subtree(i) for i in range(len(self)))


# ----------------------------------------------------------------------
# Contingency-table tests
# ----------------------------------------------------------------------


def _pearson(pos: np.ndarray, sizes: np.ndarray, m, N) -> np.ndarray:
    """Pearson statistic of 2 x g tables given the positive count per group."""
    expected = np.multiply.outer(m / N, sizes) if np.ndim(m) else m * sizes / N
    dev = (pos - expected) ** 2 / sizes
    scale = N * N / (m * (N - m))
    return scale * dev.sum(axis=-1)


@lru_cache(maxsize=65536)
def _null_distribution(sizes: tuple, m: int):
    """Exact distribution of the Pearson statistic with all margins fixed.

    Returns ``(values, probs, upper)`` where ``upper[i] = P(X > values[i])``,
    or ``None`` when the table count exceeds ``EXACT_LIMIT``.
    """
    sizes_arr = np.array(sizes, dtype=np.int64)
    N = int(sizes_arr.sum())
    if math.prod(int(s) + 1 for s in sizes[:-1]) > EXACT_LIMIT:
        return None
    tables = np.zeros((1, 0), dtype=np.int64)
    partial = np.zeros(1, dtype=np.int64)
    remaining = N
    for s in sizes[:-1]:
        remaining -= s
        a = np.arange(s + 1)
        new_partial = (partial[:, None] + a[None, :]).ravel()
        keep = (new_partial <= m) & (new_partial + remaining >= m)
        tables = np.column_stack([np.repeat(tables, s + 1, axis=0), np.tile(a, len(partial))])[keep]
        partial = new_partial[keep]
    tables = np.column_stack([tables, m - partial])
    logp = (
        gammaln(sizes_arr + 1) - gammaln(tables + 1) - gammaln(sizes_arr - tables + 1)
    ).sum(axis=1)
    logp -= gammaln(N + 1) - gammaln(m + 1) - gammaln(N - m + 1)
    stat = _pearson(tables.astype(float), sizes_arr.astype(float), float(m), float(N))
    order = np.argsort(stat, kind="stable")
    stat, prob = stat[order], np.exp(logp[order])
    starts = np.concatenate([[0], np.nonzero(np.diff(stat) > EQ_TOL * (1.0 + stat[1:]))[0] + 1])
    values = stat[starts]
    probs = np.add.reduceat(prob, starts)
    probs /= probs.sum()
    upper = np.concatenate([np.cumsum(probs[::-1])[::-1][1:], [0.0]])
    return values.tolist(), probs.tolist(), upper.tolist()


def _exact_or_asymptotic(sizes: tuple, m: int, stat: float, df: int, u=None) -> float:
    """Randomized exact p-value when a uniform ``u`` is given and the table
    space is small enough; asymptotic chi-squared otherwise."""
    if u is not None:
        dist = _null_distribution(sizes, m)
        if dist is not None:
            values, probs, upper = dist
            tol = EQ_TOL * (1.0 + stat)
            i = min(bisect.bisect_left(values, stat - tol), len(values) - 1)
            if abs(values[i] - stat) <= tol:
                p = upper[i] + u * probs[i]
            else:
                p = upper[i] + probs[i] if values[i] > stat else upper[i]
            return min(max(p, 0.0), 1.0)
    return float(chdtrc(df, stat))


_KERNEL_CACHE = None


_KERNEL_CALLS = 0


def _exact_cache():
    global _KERNEL_CACHE, _KERNEL_CALLS
    _KERNEL_CALLS += 1
    if _KERNEL_CACHE is None or (_KERNEL_CALLS % 4096 == 0 and len(_KERNEL_CACHE) > 200_000):
        _KERNEL_CACHE = _kernels.new_cache()
    return _KERNEL_CACHE


def _table_stat(groups: np.ndarray, positive: np.ndarray):
    """Pearson statistic of the sign-by-group table: ``(stat, df, sizes key, m)``.

    ``stat`` is ``None`` for a degenerate table (one group or one sign).
    """
    sizes = np.bincount(groups)
    pos = np.bincount(groups, weights=positive)
    keep = sizes > 0
    sizes, pos = sizes[keep].astype(float), pos[keep]
    g = sizes.size
    N = positive.size
    m = int(round(pos.sum()))
    if g < 2 or m == 0 or m == N:
        return None, max(g - 1, 1), None, m
    stat = float(_pearson(pos, sizes, float(m), float(N)))
    return stat, g - 1, tuple(sorted(sizes.astype(int).tolist())), m


def _table_test(groups: np.ndarray, positive: np.ndarray, u=None):
    """Sign-by-group chi-squared test; returns ``(stat, df, p)``.

    ``groups`` are small nonnegative integer labels; empty groups are
    dropped. A table with a single sign or a single group gives ``p = 1``.
    """
    stat, df, key, m = _table_stat(groups, positive)
    if stat is None:
        return 0.0, df, 1.0
    return stat, df, _exact_or_asymptotic(key, m, stat, df, u)


def _quartile_groups(values: np.ndarray) -> np.ndarray:
    uniq = np.unique(values)
    if uniq.size <= 4:
        return np.searchsorted(uniq, values)
    cuts = np.unique(np.quantile(values, [0.25, 0.5, 0.75]))
    return np.searchsorted(cuts, values, side="left")


def _variable_groups(values: np.ndarray, ordinal: bool) -> np.ndarray:
    return _quartile_groups(values) if ordinal else np.asarray(values)


def curvature_pvalue(values, residuals, ordinal: bool = False, rng=None) -> float:
    """p-value of the residual-sign by variable-group contingency test.

    Parameters
    ----------
    values : array
        The variable's values in the node (level indices or scores).
    residuals : array
        Node-model residuals; signs are split as nonnegative / negative.
    ordinal : bool
        Group ordered values with many distinct values at sample quartiles.
    rng : numpy Generator, optional
        Enables the randomized exact test for small tables.
    """
    values = np.asarray(values)
    if np.unique(values).size < 2:
        raise ValueError("variable must take at least two distinct values in the node")
    positive = np.asarray(residuals) >= 0
    groups = _variable_groups(values, True) if ordinal else np.unique(values, return_inverse=True)[1]
    return _table_test(groups, positive, None if rng is None else _as_rng(rng).random())[2]


def _binarize(values: np.ndarray, kind: str) -> np.ndarray:
    if kind == "nominal":
        levels, counts = np.unique(values, return_counts=True)
        top = levels[np.argmax(counts)]
        return (values == top).astype(np.int64)
    med = np.median(values)
    b = (values > med).astype(np.int64)
    if b.min() == b.max():
        b = (values >= med).astype(np.int64)
    return b


def interaction_pvalue(values_u, values_v, residuals, kinds=("ordinal", "ordinal"), rng=None) -> float:
    """Sign test over the (up to) four cells formed by splitting two variables.

    Ordered variables are split at their node median; a nominal variable
    is split into its most frequent level versus the rest.
    """
    values_u, values_v = np.asarray(values_u), np.asarray(values_v)
    if np.unique(values_u).size < 2 or np.unique(values_v).size < 2:
        raise ValueError("both variables must be non-constant in the node")
    bu, bv = _binarize(values_u, kinds[0]), _binarize(values_v, kinds[1])
    positive = np.asarray(residuals) >= 0
    return _table_test(2 * bu + bv, positive, None if rng is None else _as_rng(rng).random())[2]


def calibrate_pvalue(raw_p: float, df: int, scale: float | None) -> float:
    """Rescale the chi-squared statistic behind ``raw_p`` by ``scale``.

    ``scale`` of ``None`` leaves the p-value unchanged (non-regressor
    variables have nothing to correct).
    """
    if scale is None or scale == 1.0:
        return float(raw_p)
    if raw_p >= 1.0:
        return 1.0
    stat = chdtri(df, raw_p)
    return float(chdtrc(df, scale * stat))


def bootstrap_scale(boot_stats, df: int) -> float | None:
    """Factor that moves the median of bootstrap statistics onto the chi2(df) median."""
    med = float(np.median(boot_stats))
    if not med > 1e-12:
        return None
    return _chi2_median(df) / med


@lru_cache(maxsize=None)
def _chi2_median(df: int) -> float:
    return float(chdtri(df, 0.5))


# ----------------------------------------------------------------------
# Growth
# ----------------------------------------------------------------------


class _Grower:
    """Holds the training arrays and implements node fitting and splitting."""

    def __init__(self, factors, codes, y, wt, family: Family, config: TreeConfig, rng):
        self.factors = tuple(factors)
        self.codes = np.asarray(codes)
        self.y = np.asarray(y, dtype=float)
        self.wt = None if wt is None else np.asarray(wt, dtype=float)
        self.family = family
        self.config = config
        self.rng = rng
        # per-node random streams are keyed by (tree_seed, node id)
        self.tree_seed = int(rng.integers(0, 2**63))
        self.gaussian = family.kind == "gaussian"
        # response on the mean scale
        self.resp = self.y / self.wt if family.kind == "binomial" else self.y
        allowed = None if config.regressors is None else set(config.regressors)
        unknown = (allowed or set()) - {f.name for f in self.factors}
        if unknown:
            raise ValueError(f"unknown regressor names {sorted(unknown)}")
        self.blocks: dict[int, list[int]] = {}
        columns, descriptors = [], []
        for j, fac in enumerate(self.factors):
            if allowed is not None and fac.name not in allowed:
                continue
            if fac.is_numeric:
                self.blocks[j] = [len(descriptors)]
                descriptors.append((j, None))
                columns.append(fac.values()[self.codes[:, j]])
            elif config.kind in ("multiple", "stepwise"):
                idx = []
                for lev in range(1, fac.n_levels):
                    idx.append(len(descriptors))
                    descriptors.append((j, lev))
                    columns.append((self.codes[:, j] == lev).astype(float))
                self.blocks[j] = idx
        self.descriptors = descriptors
        self.X = np.column_stack(columns) if columns else np.zeros((len(self.y), 0))
        self.simple_cols = [self.blocks[j][0] for j in self.blocks if descriptors[self.blocks[j][0]][1] is None]
        self.Xs = self.X[:, self.simple_cols]
        self.sxx_tol = 1e-12 * (1.0 + (np.abs(self.Xs).max() if self.Xs.size else 0.0) ** 2)
        # every factor two-level: tests reduce to 2 x 2 and 2 x 4 tables
        self.binary = all(f.is_two_level and f.kind != "ordinal" for f in self.factors)
        if config.min_node_size is not None:
            self.min_size = config.min_node_size
        else:
            p = {"constant": 0, "best_simple": 1}.get(config.kind, len(descriptors))
            self.min_size = max(5, 2 * (p + 1))

    # -- node models ---------------------------------------------------

    def _glm(self, rows, cols) -> FitResult:
        X = np.column_stack([np.ones(len(rows)), self.X[np.ix_(rows, cols)]]) if cols else np.ones((len(rows), 1))
        wt = None if self.wt is None else self.wt[rows]
        return irls_fit(X, self.y[rows], wt, self.family)

    def _constant(self, rows) -> NodeModel:
        fam = self.family
        if self.gaussian:
            yr = self.y[rows]
            n = len(rows)
            mu = float(yr.sum()) / n
            yc = yr - mu
            dev = float(yc @ yc)
            se = math.sqrt(dev / (n - 1) / n) if n > 1 else float("nan")
            return NodeModel((), np.array([mu]), np.array([se]), dev, fam)
        if fam.kind == "binomial":
            wt = self.wt[rows]
            mu = float(self.y[rows].sum() / wt.sum())
            info = float(np.sum(wt) * mu * (1 - mu))
        else:
            wt = None
            mu = float(self.y[rows].mean())
            info = float(len(rows) * (mu if fam.kind == "poisson" else 1.0))
        dev = fam.deviance(self.resp[rows], np.full(len(rows), mu), wt)
        coef = float(fam.linkfun(np.array(mu))) if fam.kind != "gaussian" else mu
        if fam.kind == "gaussian":
            dof = len(rows) - 1
            se = math.sqrt(dev / dof / len(rows)) if dof > 0 else float("nan")
        else:
            se = 1.0 / math.sqrt(info) if info > 0 else float("nan")
        return NodeModel((), np.array([coef]), np.array([se]), dev, fam)

    def _from_fit(self, cols, fit: FitResult) -> NodeModel:
        return NodeModel(
            tuple(self.descriptors[c] for c in cols),
            fit.coefficients,
            fit.std_errors,
            fit.rss_or_deviance,
            self.family,
            fit,
        )

    def _gauss_fit(self, rows, cols) -> NodeModel:
        X = np.empty((len(rows), 1 + len(cols)))
        X[:, 0] = 1.0
        X[:, 1:] = self.X[rows][:, cols]
        y = self.y[rows]
        n, p = X.shape
        if n > p:
            Q, R = np.linalg.qr(X)
            d = np.abs(np.diag(R))
            if d.min() > 1e-10 * math.sqrt(float((X * X).sum(axis=0).max())):
                # full rank, so no aliasing bookkeeping is needed
                beta = np.linalg.solve(R, Q.T @ y)
                r = y - X @ beta
                rss = float(r @ r)
                Rinv = np.linalg.solve(R, np.eye(p))
                se = np.sqrt((Rinv * Rinv).sum(axis=1) * rss / (n - p))
                return NodeModel(tuple(self.descriptors[c] for c in cols), beta, se, rss, self.family)
        return self._from_fit(cols, ols_fit(X, y))

    def _simple(self, rows):
        """Best Gaussian simple regression: ``(column or None, deviance)``.

        The column is the candidate with the smallest RSS; it is returned
        only when its slope has ``|t| > 2``, otherwise the constant model's
        deviance is reported.
        """
        y = self.y[rows]
        n = len(rows)
        yc = y - y.sum() / n
        syy = float(yc @ yc)
        if n <= 2 or not self.simple_cols:
            return None, syy
        x = self.Xs[rows]
        xc = x - x.sum(axis=0) / n
        sxx = np.einsum("ij,ij->j", xc, xc)
        sxy = yc @ xc
        ok = sxx > self.sxx_tol * n
        if not ok.any():
            return None, syy
        ssr = np.where(ok, sxy * sxy / np.where(ok, sxx, 1.0), -1.0)
        i = int(np.argmax(ssr))
        explained = min(float(ssr[i]), syy)
        rss = syy - explained
        # |t| > 2 on n - 2 df, written without dividing by the RSS
        if explained * (n - 2) > T_THRESHOLD**2 * rss:
            return self.simple_cols[i], rss
        return None, syy

    def _best_simple_glm(self, rows):
        best = None
        for c in self.simple_cols:
            if np.ptp(self.X[rows, c]) == 0:
                continue
            try:
                fit = self._glm(rows, [c])
            except ConvergenceError:
                continue
            if best is None or fit.rss_or_deviance < best[1].rss_or_deviance:
                best = (c, fit)
        if best is None or not abs(best[1].statistics[1]) > T_THRESHOLD:
            return None, None
        return best

    def _subset_aic(self, G, b, syy, n, subsets):
        """Gaussian AIC of each column subset, from centred cross-products.

        Unselected coordinates are padded with a scaled identity so all
        subsets are solved in one batch; a batched Cholesky handles the
        usual full-rank case and an SVD takes over otherwise.
        """
        D = G.shape[0]
        S = len(subsets)
        mask = np.zeros((S, D))
        rows_idx = [s for s, cols in enumerate(subsets) for _ in cols]
        mask[rows_idx, [c for cols in subsets for c in cols]] = 1.0
        pad = max(float(G.diagonal().max()), 1.0)
        M = G * (mask[:, :, None] * mask[:, None, :])
        M += pad * (np.eye(D) * (1.0 - mask)[:, None, :])
        bb = b * mask
        size = mask.sum(axis=1)
        try:
            L = np.linalg.cholesky(M)
            if L.diagonal(axis1=1, axis2=2).min() ** 2 <= 1e-10 * pad:
                raise np.linalg.LinAlgError
            z = np.linalg.solve(L, bb[:, :, None])[:, :, 0]
            rss = syy - np.einsum("si,si->s", z, z)
            rank = size
        except np.linalg.LinAlgError:
            u, sv, vt = np.linalg.svd(M)
            keep = sv > 1e-10 * pad
            inv = np.where(keep, 1.0 / np.where(keep, sv, 1.0), 0.0)
            utb = np.einsum("sij,si->sj", u, bb)
            beta = np.einsum("sji,sj->si", vt, inv * utb)
            rss = syy - np.einsum("si,si->s", beta, bb)
            rank = keep.sum(axis=1) - (D - size)
        floor = 1e-12 * (1.0 + syy)
        return [
            -math.inf if r <= floor else n * math.log(r / n) + 2.0 * (p + 1)
            for r, p in zip(rss.tolist(), rank.tolist())
        ]

    def _stepwise_cols(self, rows) -> list[int]:
        """Bidirectional AIC search over factor blocks, from the constant model."""
        n = len(rows)
        blocks = [j for j in self.blocks if np.ptp(self.codes[rows, j]) > 0]
        cache: dict = {}

        def cols_of(sel):
            return [c for j in sorted(sel) for c in self.blocks[j]]

        if self.gaussian:
            X = self.X[rows]
            xc = X - X.sum(axis=0) / n
            yc = self.y[rows] - self.y[rows].sum() / n
            G = xc.T @ xc
            b = xc.T @ yc
            syy = float(yc @ yc)

            def evaluate(sels):
                todo = [s for s in sels if s not in cache]
                if todo:
                    for s, v in zip(todo, self._subset_aic(G, b, syy, n, [cols_of(s) for s in todo])):
                        cache[s] = v
                return [cache[s] for s in sels]
        else:

            def crit(sel):
                try:
                    fit = self._glm(rows, cols_of(sel))
                except ConvergenceError:
                    return math.inf
                return fit.rss_or_deviance + 2.0 * fit.p

            def evaluate(sels):
                for s in sels:
                    if s not in cache:
                        cache[s] = crit(s)
                return [cache[s] for s in sels]

        if self.gaussian and USE_KERNELS and all(len(self.blocks[j]) == 1 for j in blocks):
            mask = np.zeros(G.shape[0], dtype=bool)
            mask[[self.blocks[j][0] for j in blocks]] = True
            chosen = _kernels.stepwise_search(G, b, syy, float(n), mask)
            if chosen.size:
                return np.flatnonzero(chosen).tolist()
        if self.gaussian and len(blocks) <= 6:
            evaluate([frozenset(c) for r in range(len(blocks) + 1) for c in itertools.combinations(blocks, r)])
        current = frozenset()
        best = evaluate([current])[0]
        while blocks and best > -math.inf:
            sels = [current - {j} if j in current else current | {j} for j in blocks]
            vals = evaluate(sels)
            i = min(range(len(blocks)), key=lambda i: (vals[i], blocks[i]))
            if not vals[i] < best:
                break
            current, best = sels[i], vals[i]
        return cols_of(current)

    def fit(self, rows) -> NodeModel:
        kind = self.config.kind
        if kind == "constant" or not self.blocks:
            return self._constant(rows)
        if kind == "best_simple":
            if self.gaussian:
                c, _ = self._simple(rows)
                return self._constant(rows) if c is None else self._gauss_fit(rows, [c])
            c, fit = self._best_simple_glm(rows)
            return self._constant(rows) if c is None else self._from_fit([c], fit)
        if kind == "multiple":
            cols = [c for j in self.blocks for c in self.blocks[j]]
        else:
            cols = self._stepwise_cols(rows)
        if not cols:
            return self._constant(rows)
        if self.gaussian:
            return self._gauss_fit(rows, cols)
        try:
            return self._from_fit(cols, self._glm(rows, cols))
        except ConvergenceError:
            return self._constant(rows)

    def deviance(self, rows) -> float:
        """Node-model deviance, skipping coefficient inference where possible."""
        kind = self.config.kind
        if self.gaussian and (kind == "constant" or not self.blocks):
            yr = self.y[rows]
            yc = yr - yr.sum() / len(rows)
            return float(yc @ yc)
        if self.gaussian and kind == "best_simple":
            return self._simple(rows)[1]
        return self.fit(rows).deviance

    def fitted(self, rows, model: NodeModel) -> np.ndarray:
        if not model.columns:
            return np.full(len(rows), float(self.family.linkinv(np.array(model.coefficients[0]))))
        eta = model.eta(self.codes[rows], self.factors)
        return self.family.linkinv(eta)

    # -- split selection -----------------------------------------------

    def _var_kind(self, j) -> str:
        fac = self.factors[j]
        if fac.is_two_level:
            return "two-level"
        return fac.kind

    def _values(self, rows, j) -> np.ndarray:
        fac = self.factors[j]
        lv = self.codes[rows, j]
        return fac.values()[lv] if fac.kind == "ordinal" else lv

    def _boot_signs(self, rows, model: NodeModel, perm_seed: int) -> np.ndarray:
        """Residual signs (n x B) of the node model refitted to permuted responses."""
        B = self.config.n_bootstrap
        n = len(rows)
        perms = _kernels.permutations(perm_seed, n, B)
        if self.gaussian:
            X = model.design(self.codes[rows], self.factors)
            if model.fit is not None and model.fit.aliased:
                X = X[:, [i for i in range(X.shape[1]) if i not in model.fit.aliased]]
            Y = self.y[rows][perms]
            R = Y - X @ np.linalg.solve(X.T @ X, X.T @ Y)
            return R >= -1e-9 * (1.0 + np.abs(Y).max())
        cols = [self.descriptors.index(d) for d in model.columns]
        X = np.column_stack([np.ones(n), self.X[np.ix_(rows, cols)]])
        signs = np.zeros((n, B), dtype=bool)
        for b in range(B):
            sub = rows[perms[:, b]]
            yb = self.y[sub]
            wb = None if self.wt is None else self.wt[sub]
            try:
                mu = irls_fit(X, yb, wb, self.family).fitted
            except ConvergenceError:
                mu = np.full(n, (yb.sum() / wb.sum()) if wb is not None else yb.mean())
            resp = yb / wb if wb is not None else yb
            signs[:, b] = resp - mu >= 0
        return signs

    def _boot_stats(self, rows, signs: np.ndarray, variables) -> dict:
        n, B = signs.shape
        S = signs.astype(float)
        m = S.sum(axis=0)
        ok = (m > 0) & (m < n)
        out = {}
        for j in variables:
            groups = _variable_groups(self._values(rows, j), self.factors[j].kind == "ordinal")
            sizes = np.bincount(groups)
            onehot = np.zeros((n, sizes.size))
            onehot[np.arange(n), groups] = 1.0
            keep = sizes > 0
            pos = (onehot.T @ S)[keep]
            st = np.zeros(B)
            if ok.any():
                st[ok] = _pearson(pos[:, ok].T, sizes[keep].astype(float), m[ok], float(n))
            out[j] = st
        return out

    def _choose(self, admissible, curv, inter, info):
        info["curvature"] = curv
        info["interaction"] = inter
        best_var = min(admissible, key=lambda j: (curv[j], j))
        if inter:
            (u, v), p_int = min(inter.items(), key=lambda kv: (kv[1], kv[0]))
            if p_int < curv[best_var]:
                best_var = min((u, v), key=lambda j: (curv[j], j))
                info["via_interaction"] = (u, v)
        return best_var, info

    def _boot_binary(self, rows, model, regressors, perm_seed) -> dict:
        """Bootstrap statistics of two-level regressors, vectorised over resamples."""
        Z = self.codes[rows].astype(float)
        n = float(len(rows))
        signs = self._boot_signs(rows, model, perm_seed).astype(float)
        mb = signs.sum(axis=0)
        okb = (mb > 0) & (mb < n)
        A1 = Z.T @ signs
        n1 = Z.sum(axis=0)
        out = {}
        for j in regressors:
            st = np.zeros(signs.shape[1])
            if okb.any():
                sz = np.array([n - n1[j], n1[j]])
                pos = np.stack([mb[okb] - A1[j, okb], A1[j, okb]], axis=1)
                st[okb] = _pearson(pos, sz, mb[okb], n)
            out[j] = st
        return out

    def select(self, rows, model: NodeModel, fitted: np.ndarray, node_id: int = 1):
        """Choose the split variable; returns ``(variable or None, info)``.

        The node's random stream gives a permutation seed for the bootstrap
        and one uniform per curvature test and per variable pair, in
        ``itertools.combinations`` order after the ``k`` curvature slots.
        """
        positive = (self.resp[rows] - fitted) >= 0
        codes = self.codes[rows]
        k = len(self.factors)
        admissible = np.flatnonzero(codes.min(axis=0) != codes.max(axis=0)).tolist()
        info = {"curvature": {}, "interaction": {}}
        if not admissible:
            return None, info
        regressors = sorted(model.regressor_factors & set(admissible))
        perm_seed, U = _kernels.node_random(self.tree_seed, node_id, k + k * (k - 1) // 2)
        if self.binary:
            boot = self._boot_binary(rows, model, regressors, perm_seed) if regressors else {}
        else:
            boot = self._boot_stats(rows, self._boot_signs(rows, model, perm_seed), regressors) if regressors else {}
        pair_index = {pr: k + t for t, pr in enumerate(itertools.combinations(range(k), 2))}
        do_pairs = self.config.interactions and len(admissible) >= 2
        if self.binary and USE_KERNELS:
            scales = np.full(k, np.nan)
            for j in regressors:
                sc = bootstrap_scale(boot[j], 1)
                scales[j] = 0.0 if sc is None else sc
            cv, iv = _kernels.binary_pvalues(_exact_cache(), codes.astype(float), positive, U, scales, do_pairs, EXACT_LIMIT)
            curv = {j: float(cv[j]) for j in admissible}
            inter = {}
            if do_pairs:
                inter = {(u, v): float(iv[u, v]) for u, v in itertools.combinations(admissible, 2)}
            return self._choose(admissible, curv, inter, info)
        curv = {}
        for j in admissible:
            groups = _variable_groups(self._values(rows, j), self.factors[j].kind == "ordinal")
            if j in boot:
                stat, df, _, _ = _table_stat(groups, positive)
                sc = bootstrap_scale(boot[j], df)
                curv[j] = 1.0 if stat is None else float(chdtrc(df, (1.0 if sc is None else sc) * stat))
            else:
                curv[j] = _table_test(groups, positive, U[j])[2]
        inter = {}
        if do_pairs:
            pairs = list(itertools.combinations(admissible, 2))
            for u, v in pairs:
                ku = "nominal" if self._var_kind(u) == "nominal" else "ordinal"
                kv = "nominal" if self._var_kind(v) == "nominal" else "ordinal"
                bu = _binarize(self._values(rows, u), ku)
                bv = _binarize(self._values(rows, v), kv)
                if bu.min() == bu.max() or bv.min() == bv.max():
                    continue
                p = _table_test(2 * bu + bv, positive, U[pair_index[(u, v)]])[2]
                inter[(u, v)] = min(1.0, p * len(pairs))
        return self._choose(admissible, curv, inter, info)

    def candidate_splits(self, rows, j) -> list[Split]:
        fac = self.factors[j]
        lv = self.codes[rows, j]
        if self.binary:
            if lv.min() == lv.max():
                return []
            return [Split(j, "threshold", threshold=0, seen=frozenset((0, 1)))]
        present = np.unique(lv)
        if present.size < 2:
            return []
        seen = frozenset(int(v) for v in present)
        if fac.kind == "ordinal" or (fac.is_two_level and fac.kind != "nominal"):
            return [Split(j, "threshold", threshold=int(c), seen=seen) for c in present[:-1]]
        if present.size > MAX_SUBSET_LEVELS:
            # order levels by node mean response and split along that order
            means = [self.resp[rows][lv == v].mean() for v in present]
            ordered = present[np.argsort(means, kind="stable")]
            return [Split(j, "subset", subset=frozenset(int(v) for v in ordered[: i + 1]), seen=seen) for i in range(present.size - 1)]
        first, rest = int(present[0]), [int(v) for v in present[1:]]
        out = []
        for r in range(0, len(rest)):
            for combo in itertools.combinations(rest, r):
                out.append(Split(j, "subset", subset=frozenset((first,) + combo), seen=seen))
        return out

    def best_split(self, rows, j) -> Split | None:
        best, best_dev = None, math.inf
        candidates = []
        for split in self.candidate_splits(rows, j):
            left = split.goes_left(self.codes[rows, j])
            nl = int(left.sum())
            if nl >= self.min_size and len(rows) - nl >= self.min_size:
                candidates.append((split, left))
        if len(candidates) == 1:
            # a single admissible split needs no deviance comparison
            candidates, best = [], candidates[0][0]
        for split, left in candidates:
            dev = self.deviance(rows[left]) + self.deviance(rows[~left])
            if dev < best_dev - 1e-12 * (1.0 + abs(dev)):
                best, best_dev = split, dev
        if best is None:
            return None
        nl = int(best.goes_left(self.codes[rows, j]).sum())
        return replace(best, default_left=nl >= len(rows) - nl)

    def node_mean(self, rows) -> float:
        if self.wt is not None:
            return float(self.y[rows].sum() / self.wt[rows].sum())
        return float(self.y[rows].sum()) / len(rows)

    def grow_all(self, keep_tests: bool = True) -> TreeNode:
        """Grow the tree on every training row.

        ``keep_tests=False`` drops the per-node p-value records from the
        compiled path (cross-validation trees never read them).
        """
        kinds = {"constant": _kernels.KIND_CONSTANT, "best_simple": _kernels.KIND_SIMPLE, "stepwise": _kernels.KIND_STEPWISE}
        rows = np.arange(len(self.y))
        if USE_KERNELS and self.binary and self.gaussian and self.config.kind in kinds and len(rows) > 0:
            allowed = np.array([j in self.blocks for j in range(len(self.factors))], dtype=bool)
            out = _kernels.grow_binary(
                _exact_cache(), self.codes.astype(float), self.y, allowed, kinds[self.config.kind],
                self.min_size, self.config.max_depth, self.config.n_bootstrap, self.config.interactions,
                EXACT_LIMIT, self.tree_seed, _chi2_median(1), T_THRESHOLD,
            )
            if out[0] == 0:
                return self._from_arrays(out[1:], keep_tests)
        return self.grow(rows)

    def _from_arrays(self, arrays, keep_tests: bool = True) -> TreeNode:
        (node_id, depth, count, mean, dev, var, default_left, left, right,
         ncols, cols, coef, se, tested, do_pairs, curv, inter, via, _) = arrays
        k = len(self.factors)
        fam = self.family

        def build(s: int) -> TreeNode:
            nc = int(ncols[s])
            model = NodeModel(
                tuple((int(j), None) for j in cols[s, :nc]), coef[s, : nc + 1].copy(), se[s, : nc + 1].copy(),
                float(dev[s]), fam,
            )
            info = {}
            if keep_tests and tested[s]:
                info = {
                    "curvature": {j: float(curv[s, j]) for j in range(k) if not math.isnan(curv[s, j])},
                    "interaction": {},
                }
                if do_pairs[s]:
                    info["interaction"] = {
                        (u, v): float(inter[s, u, v])
                        for u, v in itertools.combinations(range(k), 2)
                        if not math.isnan(inter[s, u, v])
                    }
                if via[s, 0] >= 0:
                    info["via_interaction"] = (int(via[s, 0]), int(via[s, 1]))
            args = (model, int(count[s]), float(mean[s]), float(dev[s]), int(depth[s]), int(node_id[s]))
            if var[s] < 0:
                return TreeNode(*args, pvalues=info)
            split = Split(int(var[s]), "threshold", threshold=0, seen=frozenset((0, 1)), default_left=bool(default_left[s]))
            return TreeNode(*args, split=split, left=build(int(left[s])), right=build(int(right[s])), pvalues=info)

        return build(0)

    def grow(self, rows, depth=0, node_id=1) -> TreeNode:
        model = self.fit(rows)
        args = (model, len(rows), self.node_mean(rows), model.deviance, depth, node_id)
        if depth >= self.config.max_depth or len(rows) < 2 * self.min_size:
            return TreeNode(*args)
        if self.gaussian:
            r = self.resp[rows]
            r = r - r.sum() / len(rows)
            scale = float(r @ r)
        else:
            scale = 1.0
        if model.deviance <= 1e-12 * (1.0 + scale):
            return TreeNode(*args)
        var, info = self.select(rows, model, self.fitted(rows, model), node_id)
        split = None if var is None else self.best_split(rows, var)
        if split is None:
            return TreeNode(*args, pvalues=info)
        left = split.goes_left(self.codes[rows, var])
        return TreeNode(
            *args,
            split=split,
            left=self.grow(rows[left], depth + 1, 2 * node_id),
            right=self.grow(rows[~left], depth + 1, 2 * node_id + 1),
            pvalues=info,
        )


def _as_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _grower(dataset: Dataset, config: TreeConfig, rng=None) -> _Grower:
    family = Family.of(config.family)
    if family.kind == "binomial" and dataset.n_trials is None:
        raise DataError("binomial trees need binomial denominators")
    wt = dataset.n_trials if family.kind == "binomial" else None
    return _Grower(dataset.factors, dataset.codes, dataset.y, wt, family, config, _as_rng(rng))


def _rows(dataset: Dataset, rows) -> np.ndarray:
    return np.arange(dataset.n) if rows is None else np.asarray(rows, dtype=np.int64)


def fit_node(dataset: Dataset, kind: str = "constant", family="gaussian", rows=None, regressors=None) -> NodeModel:
    """Fit one node model to ``rows`` of ``dataset`` (all rows by default)."""
    config = TreeConfig(kind=kind, family=Family.of(family).kind, regressors=regressors)
    g = _grower(dataset, config)
    r = _rows(dataset, rows)
    if r.size == 0:
        raise ValueError("node has no rows")
    return g.fit(r)


def choose_split_variable(dataset: Dataset, config: TreeConfig | None = None, rows=None, rng=None):
    """Split variable chosen for a node, with the p-values behind the choice.

    Returns ``(variable index or None, info)``.
    """
    config = config or TreeConfig()
    g = _grower(dataset, config, rng)
    r = _rows(dataset, rows)
    model = g.fit(r)
    return g.select(r, model, g.fitted(r, model))


def best_split_value(dataset: Dataset, variable: int, config: TreeConfig | None = None, rows=None) -> Split | None:
    """Best split set or threshold for ``variable`` by summed child deviance."""
    config = config or TreeConfig()
    g = _grower(dataset, config)
    return g.best_split(_rows(dataset, rows), variable)


def grow_tree(dataset: Dataset, config: TreeConfig | None = None, rng=None) -> Tree:
    """Grow a tree to its stopping rules, without pruning."""
    config = config or TreeConfig()
    g = _grower(dataset, config, rng)
    root = g.grow_all()
    return Tree(root, dataset.factors, g.family, config)


# ----------------------------------------------------------------------
# Pruning and cross-validation
# ----------------------------------------------------------------------


def _collapse(node: TreeNode, ids) -> TreeNode:
    if node.is_leaf:
        return node
    if node.node_id in ids:
        return replace(node, split=None, left=None, right=None)
    return replace(node, left=_collapse(node.left, ids), right=_collapse(node.right, ids))


def _branch_stats(node: TreeNode, cut, out: dict) -> tuple[float, int]:
    if node.is_leaf or node.node_id in cut:
        return node.deviance, 1
    dl, nl = _branch_stats(node.left, cut, out)
    dr, nr = _branch_stats(node.right, cut, out)
    dev, leaves = dl + dr, nl + nr
    out[node.node_id] = (node.deviance - dev) / (leaves - 1)
    return dev, leaves


def prune_sequence(tree: Tree) -> PruneSequence:
    """Weakest-link cost-complexity pruning on training deviance."""
    alphas, cuts = [0.0], [frozenset()]
    cut = frozenset()
    while not (tree.root.is_leaf or tree.root.node_id in cut):
        g: dict = {}
        _branch_stats(tree.root, cut, g)
        gmin = min(g.values())
        tol = 1e-10 * (1.0 + abs(gmin))
        cut = cut | {i for i, v in g.items() if v <= gmin + tol}
        alphas.append(max(alphas[-1], gmin))
        cuts.append(cut)
    return PruneSequence(tree, tuple(alphas), tuple(cuts))


def _heldout_losses(family: Family, mu, y, wt) -> np.ndarray:
    if family.kind == "gaussian":
        return (y - mu) ** 2
    if family.kind == "poisson":
        return family.unit_deviance(y, np.maximum(mu, 1e-10))
    return family.unit_deviance(y / wt, np.clip(mu, 1e-10, 1 - 1e-10), wt)


def _path_matrix(tree: Tree, codes: np.ndarray):
    """Node ids and node-model predictions along each row's root-to-leaf path.

    Paths shorter than the deepest are padded by repeating the leaf, so the
    last column always holds the leaf.
    """
    depth = max(node.depth for node in tree.root.walk()) - tree.root.depth
    n = codes.shape[0]
    ids = np.zeros((n, depth + 1), dtype=np.int64)
    preds = np.zeros((n, depth + 1))

    def visit(node: TreeNode, idx: np.ndarray, level: int):
        if idx.size == 0:
            return
        model = node.model
        if model.columns:
            value = tree.family.linkinv(model.eta(codes[idx], tree.factors))
        else:
            value = float(tree.family.linkinv(np.array(model.coefficients[0])))
        if node.is_leaf:
            ids[idx, level:] = node.node_id
            preds[idx, level:] = value[:, None] if np.ndim(value) else value
            return
        ids[idx, level] = node.node_id
        preds[idx, level] = value
        left = node.split.route(codes[idx, node.split.variable])
        visit(node.left, idx[left], level + 1)
        visit(node.right, idx[~left], level + 1)

    visit(tree.root, np.arange(n), 0)
    return ids, preds


def cv_select(dataset: Dataset, config: TreeConfig | None = None, folds: int = 10, seed=0, se_rule: float = 0.0) -> Tree:
    """Grow, prune and choose a subtree by V-fold cross-validated deviance.

    Parameters
    ----------
    se_rule : float
        Pick the smallest subtree whose CV deviance is within ``se_rule``
        standard errors of the minimum. The default 0 takes the minimum
        itself; ties go to the smaller subtree.

    The returned tree carries its :class:`CVPath`.
    """
    config = config or TreeConfig()
    if folds < 2:
        raise ValueError("folds must be at least 2")
    if dataset.n < folds:
        raise ValueError("fewer rows than folds")
    if not se_rule >= 0:
        raise ValueError("se_rule must be non-negative")
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    streams = ss.spawn(folds + 2)
    full = grow_tree(dataset, config, np.random.default_rng(streams[1]))
    seq = prune_sequence(full)
    alphas = np.array(seq.alphas)
    if len(alphas) == 1:
        return replace(full, cv=CVPath(tuple(alphas), (0.0,), (0.0,), 0, folds, (0.0,), se_rule))
    # the root-only subtree is scored with every fold tree collapsed
    betas = np.append(np.sqrt(alphas[:-1] * alphas[1:]), np.inf)
    perm = np.random.default_rng(streams[0]).permutation(dataset.n)
    fold_of = np.empty(dataset.n, dtype=np.int64)
    fold_of[perm] = np.arange(dataset.n) % folds
    # per-row held-out deviance for every grid point
    losses = np.zeros((dataset.n, len(betas)))
    wt = dataset.n_trials if full.family.kind == "binomial" else None
    for v in range(folds):
        test = np.nonzero(fold_of == v)[0]
        train = np.nonzero(fold_of != v)[0]
        g = _Grower(
            dataset.factors, dataset.codes[train], dataset.y[train], None if wt is None else wt[train],
            full.family, config, np.random.default_rng(streams[v + 2]),
        )
        fold_seq = prune_sequence(Tree(g.grow_all(keep_tests=False), dataset.factors, full.family, config))
        ids, preds = _path_matrix(fold_seq.tree, dataset.codes[test])
        yt = dataset.y[test]
        wtt = None if wt is None else wt[test]
        cache: dict = {}
        for i, b in enumerate(betas):
            j = fold_seq.index_for(b)
            if j not in cache:
                cut = fold_seq.cuts[j]
                if cut:
                    hit = np.isin(ids, list(cut))
                    hit[:, -1] |= ~hit.any(axis=1)
                    col = hit.argmax(axis=1)
                else:
                    col = np.full(len(test), ids.shape[1] - 1)
                mu = preds[np.arange(len(test)), col]
                cache[j] = _heldout_losses(full.family, mu, yt, wtt)
            losses[test, i] = cache[j]
    errors = losses.sum(axis=0)
    ses = np.sqrt(dataset.n * losses.var(axis=0))
    imin = int(np.argmin(errors))
    bound = errors[imin] * (1 + 1e-12) + 1e-15 + se_rule * ses[imin]
    best = max(i for i in range(len(betas)) if errors[i] <= bound)
    chosen = seq.subtree(best)
    return replace(chosen, cv=CVPath(tuple(alphas), tuple(betas), tuple(errors), best, folds, tuple(ses), se_rule))


# ----------------------------------------------------------------------
# Prediction and algebraic expansion
# ----------------------------------------------------------------------


def _codes_of(tree: Tree, X) -> np.ndarray:
    if isinstance(X, Dataset):
        return X.codes
    arr = np.asarray(X)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.shape[1] != len(tree.factors):
        raise ValueError("points must have one entry per factor")
    return arr.astype(np.int64)


def _predict_codes(tree: Tree, codes: np.ndarray, cut=frozenset()):
    out = np.empty(codes.shape[0])
    flags = np.zeros(codes.shape[0], dtype=bool)

    def visit(node: TreeNode, idx: np.ndarray):
        if idx.size == 0:
            return
        if node.is_leaf or node.node_id in cut:
            model = node.model
            if model.columns:
                eta = model.eta(codes[idx], tree.factors)
            else:
                eta = np.full(idx.size, model.coefficients[0])
            out[idx] = tree.family.linkinv(eta)
            return
        lv = codes[idx, node.split.variable]
        flags[idx] |= node.split.unseen(lv)
        left = node.split.route(lv)
        visit(node.left, idx[left])
        visit(node.right, idx[~left])

    visit(tree.root, np.arange(codes.shape[0]))
    return out, flags


def predict(tree: Tree, X, return_flags: bool = False):
    """Response-scale predictions for level-coded points (or a Dataset).

    With ``return_flags`` also returns a boolean array marking rows routed
    through a split by its default branch because of an unseen level.
    """
    out, flags = _predict_codes(tree, _codes_of(tree, X))
    return (out, flags) if return_flags else out


def _leaf_paths(node: TreeNode, path=()):
    if node.is_leaf:
        yield node, path
        return
    yield from _leaf_paths(node.left, path + ((node.split, True),))
    yield from _leaf_paths(node.right, path + ((node.split, False),))


def to_polynomial(tree: Tree) -> Polynomial:
    """Expand a two-level Gaussian tree into the +/-1 monomial basis.

    Each leaf contributes its linear function times, for every split on its
    path, ``(1 - x)/2`` when the path takes the ``-`` level and
    ``(1 + x)/2`` otherwise.
    """
    if tree.family.kind != "gaussian":
        raise ValueError("polynomial expansion needs a Gaussian tree")
    bad = [f.name for f in tree.factors if not f.is_two_level]
    if bad:
        raise DataError(f"polynomial expansion needs two-level factors; got {bad}")
    total = Polynomial({})
    for leaf, path in _leaf_paths(tree.root):
        coefs = {INTERCEPT: float(leaf.model.coefficients[0])}
        for (f, lev), c in zip(leaf.model.columns, leaf.model.coefficients[1:]):
            t = frozenset({f})
            value = c if lev is None else c / 2.0
            coefs[t] = coefs.get(t, 0.0) + value
            if lev is not None:
                # indicator of the + level is (1 + x)/2
                coefs[INTERCEPT] += c / 2.0
        poly = Polynomial(coefs)
        for split, went_left in path:
            minus_left = bool(split.goes_left(np.array([0]))[0])
            sign = -1.0 if went_left == minus_left else 1.0
            poly = poly * Polynomial({INTERCEPT: 0.5, frozenset({split.variable}): 0.5 * sign})
        total = total + poly
    return total


def make_leaf(intercept: float, slopes: dict | None = None, n: int = 0, family="gaussian") -> TreeNode:
    """Leaf whose linear predictor is ``intercept + sum(slope * x_f)``.

    ``slopes`` maps factor indices to coefficients on the factor's numeric
    coding.
    """
    slopes = slopes or {}
    cols = tuple((f, None) for f in sorted(slopes))
    coefs = np.array([intercept] + [slopes[f] for f, _ in cols], dtype=float)
    model = NodeModel(cols, coefs, np.full(coefs.shape, np.nan), 0.0, Family.of(family))
    return TreeNode(model, n, float(intercept), 0.0)


def make_split(variable: int, left: TreeNode, right: TreeNode, n_levels: int = 2) -> TreeNode:
    """Internal node sending level 0 of a factor left, other levels right."""
    split = Split(variable, "threshold", threshold=0, seen=frozenset(range(n_levels)))

    def renumber(node: TreeNode, nid: int, depth: int) -> TreeNode:
        if node.is_leaf:
            return replace(node, node_id=nid, depth=depth)
        return replace(node, node_id=nid, depth=depth, left=renumber(node.left, 2 * nid, depth + 1), right=renumber(node.right, 2 * nid + 1, depth + 1))

    node = TreeNode(left.model, left.n + right.n, 0.0, left.deviance + right.deviance, 0, 1, split, left, right)
    return renumber(node, 1, 0)
