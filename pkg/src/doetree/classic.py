"""Classical model selection for two-level factorials.

Effects are estimated on the regression-coefficient (half-effect) scale.
Selection by individual (IER) or experimentwise (EER) error rate uses
t-type critical values; unreplicated designs use Lenth's pseudo standard
error with Monte Carlo critical values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import integrate, optimize, stats

from .design import (
    INTERCEPT,
    DataError,
    Dataset,
    Polynomial,
    all_terms,
    effect_matrix,
    term_key,
    term_label,
)
from .glm import aic_from_rss, ols_fit

__all__ = [
    "EffectTable",
    "SelectedModel",
    "estimate_effects",
    "select_ier",
    "select_eer",
    "stepwise_aic",
    "lenth_pse",
    "select_lenth",
    "half_normal",
    "smm_critical_value",
    "lenth_critical_values",
    "hierarchical_models",
]

MC_DRAWS = 200_000
MC_CHUNK = 10_000
DEFAULT_MC_SEED = 20060701


@dataclass(frozen=True, eq=False)
class EffectTable:
    """Saturated effect estimates of a complete two-level factorial.

    ``terms[0]`` is the intercept. ``common_se`` is ``None`` and ``dof`` is 0
    for an unreplicated design.
    """

    terms: tuple
    estimates: np.ndarray
    common_se: float | None
    dof: int
    n: int
    names: tuple = ()
    rss: float | None = None

    @property
    def k(self) -> int:
        return len(self.names) if self.names else max((max(t) + 1 for t in self.terms if t), default=0)

    @property
    def effects(self) -> np.ndarray:
        """Estimates without the intercept."""
        return self.estimates[1:]

    @property
    def t_values(self) -> np.ndarray:
        if self.common_se is None:
            raise ValueError("unreplicated table has no standard error")
        return self.estimates / self.common_se

    def p_values(self) -> np.ndarray:
        return 2.0 * stats.t.sf(np.abs(self.t_values), self.dof)

    def label(self, term) -> str:
        return term_label(term, [f"x{i + 1}" for i in range(self.k)])

    def letter(self, term) -> str:
        return "".join(self.names[i] for i in sorted(term)) if term else "(Intercept)"

    def estimate(self, term) -> float:
        return float(self.estimates[self.terms.index(frozenset(term))])


@dataclass(frozen=True, eq=False)
class SelectedModel:
    """Terms kept by a selection rule and the implied fitted polynomial."""

    terms: frozenset
    fitted: Polynomial
    method_tag: str
    critical_value: float | None = None
    aic: float | None = None

    def predict(self, points) -> np.ndarray:
        return self.fitted.evaluate(points)


def estimate_effects(dataset: Dataset) -> EffectTable:
    """Fit the saturated model of a complete two-level factorial.

    Raises
    ------
    DataError
        When a factor is not two-level or the design is incomplete or
        unequally replicated.
    """
    if not dataset.all_two_level:
        raise DataError("effect estimation needs two-level factors only")
    r = dataset.replicates()
    if r == 0:
        raise DataError("design is not a complete, equally replicated factorial")
    terms = all_terms(dataset.k)
    X = effect_matrix(dataset, terms)
    fit = ols_fit(X, dataset.y)
    if r >= 2:
        se = float(math.sqrt(fit.dispersion / dataset.n))
        dof = fit.dof_residual
    else:
        se, dof = None, 0
    return EffectTable(
        terms=tuple(terms),
        estimates=fit.coefficients,
        common_se=se,
        dof=dof,
        n=dataset.n,
        names=tuple(dataset.factor_names),
        rss=fit.rss_or_deviance,
    )


def _model(table: EffectTable, kept, tag: str, crit=None, aic=None) -> SelectedModel:
    kept = frozenset(frozenset(t) for t in kept) - {INTERCEPT}
    coefs = {INTERCEPT: float(table.estimates[0])}
    for t in kept:
        coefs[t] = table.estimate(t)
    return SelectedModel(kept, Polynomial(coefs), tag, crit, aic)


def _require_se(table: EffectTable):
    if table.common_se is None or table.dof < 1:
        raise ValueError("selection by t-intervals needs a replicated design")


def select_ier(table: EffectTable, alpha: float = 0.05) -> SelectedModel:
    """Keep effects whose individual two-sided t-test rejects at level ``alpha``."""
    _require_se(table)
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    crit = 0.0 if alpha >= 1 else float(stats.t.isf(alpha / 2, table.dof))
    t = np.abs(table.t_values)
    kept = [term for term, tv in zip(table.terms[1:], t[1:]) if tv > crit]
    return _model(table, kept, "IER", crit)


def _smm_cdf(c: float, K: int, dof: float) -> float:
    """P(max of K |t_dof| sharing one chi-square denominator <= c)."""
    if math.isinf(dof):
        return (2.0 * stats.norm.cdf(c) - 1.0) ** K
    chi = stats.chi(dof, scale=1.0 / math.sqrt(dof))

    def integrand(s):
        return (2.0 * stats.norm.cdf(c * s) - 1.0) ** K * chi.pdf(s)

    lo, hi = chi.ppf(1e-15), chi.ppf(1 - 1e-15)
    val, _ = integrate.quad(integrand, lo, hi, epsabs=1e-13, epsrel=1e-12, limit=200)
    return val


@lru_cache(maxsize=256)
def _smm_quad(K: int, dof: float, alpha: float) -> float:
    if K == 1:
        return float(stats.t.isf(alpha / 2, dof))
    upper = float(stats.t.isf(alpha / (2 * K), dof)) + 1.0
    return float(optimize.brentq(lambda c: _smm_cdf(c, K, dof) - (1 - alpha), 1e-6, upper, xtol=1e-12))


def _chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(chunk)])))


@lru_cache(maxsize=256)
def _smm_mc(K: int, dof: float, alpha: float, draws: int, seed: int) -> float:
    maxima = []
    for c, start in enumerate(range(0, draws, MC_CHUNK)):
        m = min(MC_CHUNK, draws - start)
        rng = _chunk_rng(seed, c)
        z = np.abs(rng.standard_normal((m, K))).max(axis=1)
        s = np.sqrt(rng.chisquare(dof, m) / dof) if math.isfinite(dof) else 1.0
        maxima.append(z / s)
    return float(np.quantile(np.concatenate(maxima), 1 - alpha))


def smm_critical_value(K: int, dof: float, alpha: float, method: str = "quad", draws: int = MC_DRAWS, seed: int = DEFAULT_MC_SEED) -> float:
    """Upper ``alpha`` point of the studentized maximum modulus distribution.

    ``method="quad"`` integrates the exact distribution over the chi
    denominator; ``method="mc"`` uses ``draws`` seeded simulations.
    """
    if K < 1 or dof <= 0 or not 0 < alpha < 1:
        raise ValueError("need K >= 1, dof > 0 and 0 < alpha < 1")
    if method == "quad":
        return _smm_quad(int(K), float(dof), float(alpha))
    if method == "mc":
        return _smm_mc(int(K), float(dof), float(alpha), int(draws), int(seed))
    raise ValueError(f"unknown method {method!r}")


def select_eer(table: EffectTable, alpha: float = 0.1, method: str = "quad") -> SelectedModel:
    """Keep effects exceeding the studentized-maximum-modulus critical value."""
    _require_se(table)
    K = len(table.terms) - 1
    crit = smm_critical_value(K, table.dof, alpha, method=method)
    t = np.abs(table.t_values)
    kept = [term for term, tv in zip(table.terms[1:], t[1:]) if tv > crit]
    return _model(table, kept, "EER", crit)


def _is_hierarchical(terms) -> bool:
    terms = set(terms)
    return all(t - {f} in terms or len(t) == 1 for t in terms for f in t)


def hierarchical_models(k: int):
    """Yield every hierarchical term set over ``k`` factors (intercept implied)."""
    effects = all_terms(k, intercept=False)

    def extend(i, current):
        if i == len(effects):
            yield frozenset(current)
            return
        yield from extend(i + 1, current)
        t = effects[i]
        if len(t) == 1 or all(t - {f} in current for f in t):
            current.add(t)
            yield from extend(i + 1, current)
            current.discard(t)

    yield from extend(0, set())


def _rss_function(dataset: Dataset, table: EffectTable):
    """Return RSS as a function of a term set.

    A complete, equally replicated two-level design has orthogonal contrast
    columns with squared norm ``n``, so dropping a term adds ``n * b**2``.
    """
    n = dataset.n
    total = float(dataset.y @ dataset.y)
    sq = {t: n * float(b) ** 2 for t, b in zip(table.terms, table.estimates)}

    def rss(terms) -> float:
        return max(total - sq[INTERCEPT] - sum(sq[t] for t in terms), 0.0)

    return rss


def _refit_rss(dataset: Dataset, terms) -> float:
    X = effect_matrix(dataset, [INTERCEPT, *sorted(terms, key=term_key)])
    return ols_fit(X, dataset.y).rss_or_deviance


def stepwise_aic(dataset: Dataset, refit: bool = False) -> SelectedModel:
    """Bidirectional stepwise AIC over hierarchical models.

    Starts from the main-effects model. A term may be added only when all
    of its lower-order sub-terms are present and removed only when no
    included term contains it. Each step takes the move with the lowest AIC;
    ties favour the lower-order term, then lexicographic factor indices.

    Parameters
    ----------
    refit : bool
        Recompute each candidate's RSS by least squares instead of the
        orthogonal-design shortcut (same result, slower).
    """
    table = estimate_effects(dataset)
    if table.common_se is None:
        raise ValueError("stepwise AIC on an unreplicated factorial always selects the saturated model")
    rss = (lambda ts: _refit_rss(dataset, ts)) if refit else _rss_function(dataset, table)
    n = dataset.n
    effects = all_terms(dataset.k, intercept=False)
    current = {t for t in effects if len(t) == 1}

    def score(ts):
        return aic_from_rss(rss(ts), n, len(ts) + 1)

    best = score(current)
    while True:
        moves = []
        for t in effects:
            if t in current:
                if not any(t < u for u in current):
                    moves.append((score(current - {t}), term_key(t), t))
            elif len(t) == 1 or all(t - {f} in current for f in t):
                moves.append((score(current | {t}), term_key(t), t))
        if not moves:
            break
        val, _, t = min(moves, key=lambda m: (m[0], m[1]))
        if not val < best:
            break
        current ^= {t}
        best = val
    return _model(table, current, "AIC", aic=best)


def lenth_pse(estimates) -> float:
    """Lenth's pseudo standard error of a vector of effect estimates.

    ``s0 = 1.5 * median|b|``; the PSE is 1.5 times the median of the
    ``|b|`` below ``2.5 * s0``. Returns 0.0 when every estimate is zero.
    """
    a = np.abs(np.asarray(estimates, dtype=float).ravel())
    if a.size < 3:
        raise ValueError("Lenth's PSE needs at least three effects")
    s0 = 1.5 * np.median(a)
    if s0 == 0.0:
        return 0.0
    trimmed = a[a < 2.5 * s0]
    return float(1.5 * np.median(trimmed))


def _lenth_pse_rows(a: np.ndarray) -> np.ndarray:
    s0 = 1.5 * np.median(a, axis=1, keepdims=True)
    masked = np.where(a < 2.5 * s0, a, np.nan)
    return 1.5 * np.nanmedian(masked, axis=1)


@lru_cache(maxsize=64)
def _lenth_mc(K: int, alpha: float, draws: int, seed: int) -> tuple[float, float]:
    ratios, maxima = [], []
    for c, start in enumerate(range(0, draws, MC_CHUNK)):
        m = min(MC_CHUNK, draws - start)
        a = np.abs(_chunk_rng(seed, c).standard_normal((m, K)))
        r = a / _lenth_pse_rows(a)[:, None]
        ratios.append(r.ravel())
        maxima.append(r.max(axis=1))
    ier = float(np.quantile(np.concatenate(ratios), 1 - alpha))
    eer = float(np.quantile(np.concatenate(maxima), 1 - alpha))
    return ier, eer


def lenth_critical_values(K: int, alpha: float, draws: int = MC_DRAWS, seed: int = DEFAULT_MC_SEED) -> tuple[float, float]:
    """Monte Carlo (IER, EER) critical values of ``|b| / PSE`` for ``K`` null effects."""
    if K < 3 or not 0 < alpha < 1:
        raise ValueError("need K >= 3 and 0 < alpha < 1")
    return _lenth_mc(int(K), float(alpha), int(draws), int(seed))


def select_lenth(table: EffectTable, mode: str = "IER", alpha: float = 0.05, draws: int = MC_DRAWS, seed: int = DEFAULT_MC_SEED) -> SelectedModel:
    """Select effects of an unreplicated factorial with Lenth's method."""
    mode = mode.upper()
    if mode not in ("IER", "EER"):
        raise ValueError("mode must be IER or EER")
    effects = table.effects
    pse = lenth_pse(effects)
    if pse == 0.0:
        raise ValueError("Lenth's PSE is zero; effects are degenerate")
    ier, eer = lenth_critical_values(len(effects), alpha, draws, seed)
    crit = ier if mode == "IER" else eer
    ratio = np.abs(effects) / pse
    kept = [t for t, r in zip(table.terms[1:], ratio) if r > crit]
    return _model(table, kept, f"LENTH_{mode}", crit)


def half_normal(table) -> list[tuple[float, float, frozenset | None]]:
    """Half-normal plot coordinates, ascending in absolute effect.

    Accepts an :class:`EffectTable` (intercept excluded) or a plain
    sequence of estimates, in which case the term slot is ``None``.
    """
    if isinstance(table, EffectTable):
        est, terms = table.effects, list(table.terms[1:])
    else:
        est = np.asarray(table, dtype=float).ravel()
        terms = [None] * est.size
    K = est.size
    order = np.argsort(np.abs(est), kind="stable")
    q = stats.norm.ppf(0.5 + 0.5 * (np.arange(1, K + 1) - 0.5) / K)
    return [(float(q[i]), float(abs(est[j])), terms[j]) for i, j in enumerate(order)]


def model_terms_letters(model: SelectedModel, names: Sequence[str]) -> set[str]:
    return {"".join(names[i] for i in sorted(t)) for t in model.terms}
