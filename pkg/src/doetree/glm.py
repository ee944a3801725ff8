"""Dense least squares and IRLS for Gaussian, Poisson and binomial models.

All fits go through a Householder QR with limited column pivoting: columns
are processed in their given order and a column whose remaining norm falls
below the aliasing tolerance is set aside as aliased. Aliased coefficients
are reported as 0 with undefined (NaN) standard errors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .design import Dataset, all_terms, dummy_matrix, term_label

__all__ = [
    "Family",
    "FitResult",
    "ConvergenceError",
    "SeparationError",
    "PivotedQR",
    "ols_fit",
    "irls_fit",
    "aic",
    "anova_poisson",
    "AnovaRow",
]

ALIAS_TOL = 1e-10
IRLS_TOL = 1e-9
IRLS_MAXIT = 50
DIVERGENCE_BOUND = 30.0


class ConvergenceError(ArithmeticError):
    """IRLS failed to converge within the iteration limit."""


class SeparationError(ConvergenceError):
    """A coefficient diverged, which signals (quasi-)complete separation."""


_LINKS = {"gaussian": "identity", "poisson": "log", "binomial": "logit"}


@dataclass(frozen=True)
class Family:
    """Error distribution with its canonical link."""

    kind: str = "gaussian"
    link: str = field(default="", compare=False)

    def __post_init__(self):
        if self.kind not in _LINKS:
            raise ValueError(f"unknown family {self.kind!r}")
        canonical = _LINKS[self.kind]
        if self.link and self.link != canonical:
            raise ValueError(f"only the canonical {canonical!r} link is supported for {self.kind}")
        object.__setattr__(self, "link", canonical)

    @classmethod
    def of(cls, family) -> "Family":
        return family if isinstance(family, Family) else cls(str(family))

    def linkinv(self, eta):
        eta = np.asarray(eta, dtype=float)
        if self.kind == "gaussian":
            return eta
        if self.kind == "poisson":
            return np.exp(eta)
        return 0.5 * (1.0 + np.tanh(0.5 * eta))

    def linkfun(self, mu):
        mu = np.asarray(mu, dtype=float)
        if self.kind == "gaussian":
            return mu
        with np.errstate(divide="ignore"):
            if self.kind == "poisson":
                return np.log(mu)
            return np.log(mu) - np.log1p(-mu)

    def variance(self, mu):
        if self.kind == "gaussian":
            return np.ones_like(mu)
        if self.kind == "poisson":
            return mu
        return mu * (1.0 - mu)

    def unit_deviance(self, y, mu, wt=None):
        """Per-observation deviance contributions.

        For binomial data ``y`` is the observed proportion and ``wt`` the
        denominator.
        """
        y = np.asarray(y, dtype=float)
        mu = np.asarray(mu, dtype=float)
        wt = np.ones_like(y) if wt is None else np.asarray(wt, dtype=float)
        if self.kind == "gaussian":
            return wt * (y - mu) ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.kind == "poisson":
                term = np.where(y > 0, y * np.log(y / mu), 0.0)
                return 2.0 * wt * (term - (y - mu))
            a = np.where(y > 0, y * np.log(y / mu), 0.0)
            b = np.where(y < 1, (1.0 - y) * np.log((1.0 - y) / (1.0 - mu)), 0.0)
            return 2.0 * wt * (a + b)

    def deviance(self, y, mu, wt=None) -> float:
        return float(np.sum(self.unit_deviance(y, mu, wt)))


@dataclass(frozen=True, eq=False)
class FitResult:
    """Coefficients and inference for one linear or generalized linear fit."""

    coefficients: np.ndarray
    std_errors: np.ndarray
    statistics: np.ndarray
    rss_or_deviance: float
    dispersion: float
    dof_residual: int
    n: int
    p: int
    aliased: frozenset
    family: Family = Family("gaussian")
    fitted: np.ndarray | None = None
    linear_predictor: np.ndarray | None = None
    cov_unscaled: np.ndarray | None = None
    iterations: int = 1
    deviance_trace: tuple = ()
    labels: tuple | None = None

    @property
    def pvalues(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            if self.family.kind == "gaussian" and self.dof_residual > 0:
                return 2.0 * stats.t.sf(np.abs(self.statistics), self.dof_residual)
            return 2.0 * stats.norm.sf(np.abs(self.statistics))

    def summary(self) -> list[tuple]:
        labels = self.labels or tuple(f"b{i}" for i in range(len(self.coefficients)))
        return [
            (lab, float(c), float(s), float(t), float(p))
            for lab, c, s, t, p in zip(labels, self.coefficients, self.std_errors, self.statistics, self.pvalues)
        ]


class PivotedQR:
    """Householder QR of ``X`` with limited pivoting.

    Columns are visited in order; a column whose norm after the previous
    reflections is at most ``tol`` times the largest original column norm
    is marked aliased and skipped.
    """

    def __init__(self, X, tol: float = ALIAS_TOL):
        A = np.array(X, dtype=float, copy=True)
        if A.ndim != 2:
            raise ValueError("X must be a matrix")
        n, p = A.shape
        norms = np.sqrt(np.einsum("ij,ij->j", A, A)) if n else np.zeros(p)
        scale = norms.max() if p else 0.0
        self.n, self.p = n, p
        self._vs: list[np.ndarray] = []
        self._Q = None
        if 0 < p <= n and scale > 0:
            # LAPACK QR agrees with the sequential scan whenever nothing is aliased
            Q, R = np.linalg.qr(A)
            if np.all(np.abs(np.diag(R)) > tol * scale):
                self._Q, self.R = Q, R
                self.kept, self.aliased, self.rank = list(range(p)), [], p
                return
        kept: list[int] = []
        aliased: list[int] = []
        r_cols: list[np.ndarray] = []
        for j in range(p):
            col = A[:, j]
            k = len(kept)
            rest = np.linalg.norm(col[k:]) if k < n else 0.0
            if scale == 0.0 or rest <= tol * scale or k >= n:
                aliased.append(j)
                continue
            v = col[k:].copy()
            alpha = -math.copysign(rest, v[0]) if v[0] != 0 else -rest
            v[0] -= alpha
            vnorm = np.linalg.norm(v)
            if vnorm > 0:
                v /= vnorm
                tail = A[k:, j + 1:]
                if tail.size:
                    tail -= 2.0 * np.outer(v, v @ tail)
            self._vs.append(v)
            col[k] = alpha
            col[k + 1:] = 0.0
            kept.append(j)
            r_cols.append(col[: k + 1].copy())
        self.kept = kept
        self.aliased = aliased
        rank = len(kept)
        R = np.zeros((rank, rank))
        for i, c in enumerate(r_cols):
            R[: i + 1, i] = c
        self.R = R
        self.rank = rank

    def qty(self, y) -> np.ndarray:
        """Leading ``rank`` components of ``Q^T y``."""
        if self._Q is not None:
            return self._Q.T @ np.asarray(y, dtype=float)
        out = np.array(y, dtype=float, copy=True)
        for k, v in enumerate(self._vs):
            seg = out[k:]
            seg -= 2.0 * np.outer(v, v @ seg) if seg.ndim == 2 else 2.0 * v * (v @ seg)
        return out[: self.rank]

    def solve(self, y) -> np.ndarray:
        """Least-squares coefficients in original column order (aliased = 0)."""
        qty = self.qty(y)
        beta = np.zeros((self.p,) + qty.shape[1:])
        if self.rank:
            beta[self.kept] = _back_substitute(self.R, qty)
        return beta

    def cov_unscaled(self) -> np.ndarray:
        """``(X^T X)^{-1}`` over kept columns, embedded with NaN for aliased ones."""
        out = np.full((self.p, self.p), np.nan)
        if self.rank:
            Rinv = _back_substitute(self.R, np.eye(self.rank))
            cov = Rinv @ Rinv.T
            idx = np.ix_(self.kept, self.kept)
            out[idx] = cov
        return out


def _back_substitute(R, b):
    return np.linalg.solve(R, b) if R.shape[0] else b[:0]


def ols_fit(X, y, weights=None, tol: float = ALIAS_TOL, labels=None) -> FitResult:
    """Ordinary (or weighted) least squares with aliasing detection.

    Parameters
    ----------
    X : array of shape (n, p)
    y : array of shape (n,)
    weights : array of shape (n,), optional
        Case weights; the residual sum of squares is weighted accordingly.

    Returns
    -------
    FitResult
        ``dispersion`` is ``RSS / (n - p)`` (NaN when no residual degrees of
        freedom remain).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if n == 0:
        raise ValueError("cannot fit a model to zero rows")
    if X.shape[0] != y.shape[0]:
        raise ValueError("X and y have different numbers of rows")
    if weights is None:
        sw = None
        Xw, yw = X, y
    else:
        sw = np.sqrt(np.asarray(weights, dtype=float))
        Xw, yw = X * sw[:, None], y * sw
    qr = PivotedQR(Xw, tol)
    if qr.rank == 0:
        raise ValueError("all columns of X are aliased")
    beta = qr.solve(yw)
    fitted = X @ beta
    resid = yw - Xw @ beta
    rss = float(resid @ resid)
    dof = n - qr.rank
    s2 = rss / dof if dof > 0 else float("nan")
    cov = qr.cov_unscaled()
    with np.errstate(invalid="ignore"):
        se = np.sqrt(np.diag(cov) * s2)
        tstat = np.where(np.isnan(se), np.nan, beta / np.where(se > 0, se, np.nan))
    return FitResult(
        coefficients=beta,
        std_errors=se,
        statistics=tstat,
        rss_or_deviance=rss,
        dispersion=s2,
        dof_residual=dof,
        n=n,
        p=qr.rank,
        aliased=frozenset(qr.aliased),
        family=Family("gaussian"),
        fitted=fitted,
        linear_predictor=fitted,
        cov_unscaled=cov,
        labels=None if labels is None else tuple(labels),
    )


def irls_fit(X, y, weights_n=None, family="binomial", maxit: int = IRLS_MAXIT, tol: float = IRLS_TOL, labels=None) -> FitResult:
    """Maximum-likelihood GLM fit by iteratively reweighted least squares.

    Parameters
    ----------
    X : array of shape (n, p)
    y : array of shape (n,)
        Counts for Poisson; successes for binomial.
    weights_n : array of shape (n,), optional
        Binomial denominators (required for the binomial family).
    family : Family or str

    Raises
    ------
    SeparationError
        A coefficient exceeded the divergence bound.
    ConvergenceError
        The relative deviance change stayed above ``tol`` after ``maxit``
        iterations.
    """
    fam = Family.of(family)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float).ravel()
    if fam.kind == "gaussian":
        fit = ols_fit(X, y, labels=labels)
        return fit
    n = X.shape[0]
    if n == 0:
        raise ValueError("cannot fit a model to zero rows")
    if fam.kind == "poisson":
        if np.any(y < 0):
            raise ValueError("Poisson responses must be non-negative")
        prior = np.ones(n)
        yy = y
        mu = np.full(n, max(y.mean(), 1e-8))
    else:
        if weights_n is None:
            raise ValueError("binomial fits need the denominators weights_n")
        prior = np.asarray(weights_n, dtype=float).ravel()
        if np.any(prior <= 0) or np.any(y < 0) or np.any(y > prior):
            raise ValueError("binomial data need 0 <= y <= n with n > 0")
        yy = y / prior
        pbar = float(np.sum(y) / np.sum(prior))
        mu = np.full(n, min(max(pbar, 1e-8), 1 - 1e-8))
    eta = fam.linkfun(mu)
    dev = fam.deviance(yy, mu, prior)
    trace = [dev]
    beta = np.zeros(X.shape[1])
    qr = None
    converged = False
    it = 0
    for it in range(1, maxit + 1):
        var = fam.variance(mu)
        # canonical link: d mu / d eta equals the variance function
        w = prior * var
        z = eta + (yy - mu) / var
        sw = np.sqrt(w)
        qr = PivotedQR(X * sw[:, None])
        if qr.rank == 0:
            raise ValueError("all columns of X are aliased")
        new_beta = qr.solve(z * sw)
        new_eta = X @ new_beta
        new_mu = fam.linkinv(new_eta)
        new_dev = fam.deviance(yy, new_mu, prior)
        halvings = 0
        while it > 1 and (not np.isfinite(new_dev) or new_dev > dev * (1 + 1e-12) + 1e-12) and halvings < 30:
            new_beta = 0.5 * (new_beta + beta)
            new_eta = X @ new_beta
            new_mu = fam.linkinv(new_eta)
            new_dev = fam.deviance(yy, new_mu, prior)
            halvings += 1
        if np.max(np.abs(new_beta)) > DIVERGENCE_BOUND:
            raise SeparationError(
                f"coefficient magnitude exceeded {DIVERGENCE_BOUND}; the data look separated"
            )
        change = abs(new_dev - dev) / (abs(new_dev) + 0.1)
        beta, eta, mu, dev = new_beta, new_eta, new_mu, new_dev
        trace.append(dev)
        if change < tol:
            converged = True
            break
    if not converged:
        raise ConvergenceError(f"IRLS did not converge in {maxit} iterations")
    # information matrix at the converged estimate
    w = prior * fam.variance(mu)
    qr = PivotedQR(X * np.sqrt(w)[:, None])
    cov = qr.cov_unscaled()
    aliased = frozenset(qr.aliased)
    if aliased:
        beta = beta.copy()
        beta[list(aliased)] = 0.0
    se = np.sqrt(np.diag(cov))
    with np.errstate(invalid="ignore"):
        zstat = beta / se
    return FitResult(
        coefficients=beta,
        std_errors=se,
        statistics=zstat,
        rss_or_deviance=float(dev),
        dispersion=1.0,
        dof_residual=n - qr.rank,
        n=n,
        p=qr.rank,
        aliased=aliased,
        family=fam,
        fitted=mu,
        linear_predictor=eta,
        cov_unscaled=cov,
        iterations=it,
        deviance_trace=tuple(trace),
        labels=None if labels is None else tuple(labels),
    )


def aic(fit: FitResult) -> float:
    """Gaussian AIC, ``n log(RSS/n) + 2(p + 1)``.

    The extra parameter counts the error variance. A perfect fit returns
    ``-inf`` so it always ranks best.
    """
    if fit.family.kind != "gaussian":
        raise ValueError("aic is defined here for Gaussian fits only")
    return aic_from_rss(fit.rss_or_deviance, fit.n, fit.p)


def aic_from_rss(rss: float, n: int, p: int) -> float:
    if rss <= 0.0:
        return float("-inf")
    return n * math.log(rss / n) + 2.0 * (p + 1)


@dataclass(frozen=True)
class AnovaRow:
    term: str
    df: int
    deviance: float
    mean_deviance: float
    f: float | None
    p: float | None


def anova_poisson(dataset: Dataset, max_order: int = 2) -> list[AnovaRow]:
    """Sequential analysis of deviance for a Poisson loglinear model.

    Terms enter in order (main effects, then interactions in lexicographic
    order) with set-to-zero coding. Each row's F-ratio compares its mean
    deviance with the residual mean deviance. The last row is the residual;
    F and p are ``None`` when the model is saturated.
    """
    if dataset.response_kind not in ("count", "gaussian"):
        raise ValueError("anova_poisson needs a count response")
    y = dataset.y
    if np.any(y < 0) or np.any(y != np.round(y)):
        raise ValueError("counts must be non-negative integers")
    terms = all_terms(dataset.k, max_order)
    X_parts = []
    fam = Family("poisson")
    rows = []
    prev_dev = fam.deviance(y, np.full(dataset.n, y.mean()))
    prev_rank = 1
    X_parts.append(np.ones((dataset.n, 1)))
    for t in terms[1:]:
        block, _ = dummy_matrix(dataset, [t])
        X_parts.append(block)
        X = np.column_stack(X_parts)
        if np.all(y == y[0]):
            # a constant count is fitted exactly by the intercept
            dev, rank = 0.0, PivotedQR(X).rank
        else:
            fit = irls_fit(X, y, family=fam)
            dev, rank = fit.rss_or_deviance, fit.p
        df = rank - prev_rank
        rows.append([term_label(t, dataset.factor_names), df, max(prev_dev - dev, 0.0)])
        prev_dev, prev_rank = dev, rank
    resid_df = dataset.n - prev_rank
    resid_dev = prev_dev
    resid_mean = resid_dev / resid_df if resid_df > 0 else float("nan")
    out = []
    for label, df, d in rows:
        mean = d / df if df > 0 else float("nan")
        if resid_df > 0 and df > 0 and resid_mean > 0:
            f = mean / resid_mean
            p = float(stats.f.sf(f, df, resid_df))
        else:
            f = p = None
        out.append(AnovaRow(label, df, d, mean, f, p))
    out.append(AnovaRow("Residuals", resid_df, resid_dev, resid_mean, None, None))
    return out
