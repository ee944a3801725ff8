"""Monte Carlo comparison of model-selection methods on two-level designs.

Each trial draws a random true mean function over the ``2**k`` design
points, simulates responses, applies every method to the same data and
records ``sum((mu_hat - mu)**2)`` over the design points. Per-trial random
streams come from ``Philox(SeedSequence([seed, kind index, trial]))``, so
results do not depend on how trials are split across workers.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .classic import estimate_effects, select_eer, select_ier, select_lenth, stepwise_aic
from .design import Dataset, all_terms, enumerate_design, _signed_columns
from .tree import TreeConfig, cv_select

__all__ = [
    "SIGMA",
    "MODEL_KINDS",
    "DESIGNS",
    "REPLICATED_METHODS",
    "UNREPLICATED_METHODS",
    "ORACLES",
    "SimModel",
    "TrueModel",
    "PmseRow",
    "PmseReport",
    "draw_true_model",
    "simulate_trial",
    "run_pmse",
    "run_study",
    "relative_pmse",
    "worker_count",
]

SIGMA = 0.5
MODEL_KINDS = ("Null", "Unif", "Exp", "Hier")
REPLICATED_METHODS = ("IER", "EER", "AIC", "GUIDE-constant", "GUIDE-simple", "GUIDE-stepwise")
UNREPLICATED_METHODS = ("Lenth-IER", "Lenth-EER", "GUIDE-constant", "GUIDE-simple", "GUIDE-stepwise")
ORACLES = ("saturated", "intercept")
DESIGNS = {"replicated": 6, "unreplicated": 1}

_GUIDE_KINDS = {"GUIDE-constant": "constant", "GUIDE-simple": "best_simple", "GUIDE-stepwise": "stepwise"}
_BETA_LAW = {"Null": None, "Unif": (-0.25, 0.25), "Exp": (-1.0, 1.0), "Hier": (-1.0, 1.0)}
CV_FOLDS = 10


@dataclass(frozen=True)
class SimModel:
    """A family of random true models over a ``2**k`` design."""

    kind: str
    k: int = 4
    sigma: float = SIGMA

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"kind must be one of {MODEL_KINDS}")
        if self.k < 1 or self.sigma <= 0:
            raise ValueError("need k >= 1 and sigma > 0")

    @property
    def beta_law(self) -> tuple[float, float] | None:
        return _BETA_LAW[self.kind]

    def coefficients(self, beta) -> dict:
        """Polynomial coefficients (term -> value) of the linear predictor."""
        beta = np.asarray(beta, dtype=float)
        terms = all_terms(self.k, intercept=False)
        if self.kind == "Null":
            return {}
        if self.kind == "Unif":
            return dict(zip(terms, beta))
        if self.kind == "Exp":
            return {frozenset({j}): float(beta[j]) for j in range(self.k)}
        return {t: float(np.prod(beta[sorted(t)])) for t in terms}

    def n_beta(self) -> int:
        if self.kind == "Null":
            return 0
        return 2**self.k - 1 if self.kind == "Unif" else self.k

    def draw(self, rng: np.random.Generator) -> "TrueModel":
        law = self.beta_law
        beta = rng.uniform(law[0], law[1], self.n_beta()) if law else np.zeros(0)
        return self.from_beta(beta)

    def from_beta(self, beta) -> "TrueModel":
        beta = np.asarray(beta, dtype=float)
        if beta.size != self.n_beta():
            raise ValueError(f"{self.kind} needs {self.n_beta()} coefficients")
        points = enumerate_design(self.k)
        coefs = self.coefficients(beta)
        if coefs:
            terms = list(coefs)
            eta = _signed_columns(points, terms) @ np.array([coefs[t] for t in terms])
        else:
            eta = np.zeros(len(points))
        mu = np.exp(eta + 0.5 * self.sigma**2) if self.kind == "Exp" else eta
        return TrueModel(self, beta, points, eta, mu)


@dataclass(frozen=True, eq=False)
class TrueModel:
    """One draw of a :class:`SimModel`: true means at every design point."""

    model: SimModel
    beta: np.ndarray
    points: np.ndarray
    eta: np.ndarray
    mu: np.ndarray

    def sample(self, rng: np.random.Generator, replicates: int = 1) -> Dataset:
        """Simulated data, design points in order, each repeated ``replicates`` times."""
        x = np.repeat(self.points, replicates, axis=0)
        eta = np.repeat(self.eta, replicates)
        eps = rng.normal(0.0, self.model.sigma, eta.size)
        y = np.exp(eta + eps) if self.model.kind == "Exp" else eta + eps
        return Dataset.from_signed(x, y)


def draw_true_model(kind: str, rng: np.random.Generator, k: int = 4, sigma: float = SIGMA) -> TrueModel:
    """Draw a true model of the given kind; see :class:`SimModel`."""
    return SimModel(kind, k, sigma).draw(rng)


def methods_for(design: str) -> tuple:
    if design not in DESIGNS:
        raise ValueError(f"design must be one of {tuple(DESIGNS)}")
    return REPLICATED_METHODS if design == "replicated" else UNREPLICATED_METHODS


def _check_methods(design: str, methods) -> tuple:
    allowed = methods_for(design) + ORACLES
    methods = tuple(methods)
    bad = [m for m in methods if m not in allowed]
    if bad:
        raise ValueError(f"methods {bad} do not apply to the {design} design")
    return methods


def _trial_rng(seed: int, kind_index: int, trial: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), kind_index, trial])))


def simulate_trial(kind: str, design: str, methods: Sequence[str], seed: int, trial: int, k: int = 4) -> np.ndarray:
    """Squared-error sums of each method on one simulated data set.

    The true model, the data and the cross-validation seeds depend only on
    ``(seed, kind, trial)``, so any subset of methods sees the same data.
    """
    rng = _trial_rng(seed, MODEL_KINDS.index(kind), trial)
    truth = draw_true_model(kind, rng, k)
    data = truth.sample(rng, DESIGNS[design])
    cv_seeds = {m: int(s) for m, s in zip(_GUIDE_KINDS, rng.integers(0, 2**63, len(_GUIDE_KINDS)))}
    points = truth.points
    table = None
    out = np.empty(len(methods))
    for i, method in enumerate(methods):
        if method in _GUIDE_KINDS:
            tree = cv_select(data, TreeConfig(kind=_GUIDE_KINDS[method]), folds=CV_FOLDS, seed=cv_seeds[method])
            mu_hat = tree.predict((points + 1) // 2)
        elif method == "intercept":
            mu_hat = np.full(len(points), data.y.mean())
        else:
            if table is None:
                table = estimate_effects(data)
            if method == "saturated":
                mu_hat = _signed_columns(points, table.terms) @ table.estimates
            elif method == "IER":
                mu_hat = select_ier(table, 0.05).predict(points)
            elif method == "EER":
                mu_hat = select_eer(table, 0.10).predict(points)
            elif method == "AIC":
                mu_hat = stepwise_aic(data).predict(points)
            elif method == "Lenth-IER":
                mu_hat = select_lenth(table, "IER", 0.05).predict(points)
            elif method == "Lenth-EER":
                mu_hat = select_lenth(table, "EER", 0.10).predict(points)
            else:
                raise ValueError(f"unknown method {method!r}")
        out[i] = float(np.sum((mu_hat - truth.mu) ** 2))
    return out


def _trial_block(args) -> np.ndarray:
    kind, design, methods, seed, start, stop, k = args
    return np.array([simulate_trial(kind, design, methods, seed, t, k) for t in range(start, stop)]).reshape(
        stop - start, len(methods)
    )


def worker_count() -> int:
    """Worker processes for simulations: ``DOETREE_THREADS`` if set, else 1."""
    raw = os.environ.get("DOETREE_THREADS", "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ValueError("DOETREE_THREADS must be a positive integer") from None
    if n < 1:
        raise ValueError("DOETREE_THREADS must be a positive integer")
    return n


def _sse_matrix(kind, design, methods, trials, seed, k, workers) -> np.ndarray:
    if workers <= 1 or trials < 2:
        return _trial_block((kind, design, methods, seed, 0, trials, k))
    n_blocks = min(trials, 4 * workers)
    edges = np.linspace(0, trials, n_blocks + 1).astype(int)
    jobs = [(kind, design, methods, seed, int(a), int(b), k) for a, b in zip(edges[:-1], edges[1:]) if b > a]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        blocks = list(pool.map(_trial_block, jobs))
    return np.concatenate(blocks, axis=0)


@dataclass(frozen=True)
class PmseRow:
    method: str
    kind: str
    pmse: float
    mc_se: float
    trials: int
    relative: float = math.nan


@dataclass(frozen=True)
class PmseReport:
    """PMSE per method and model kind, with relative PMSE per kind.

    Oracle rows (``saturated``, ``intercept``) are reported but excluded
    from the relative-PMSE average and carry ``relative = nan``.
    """

    design: str
    trials: int
    seed: int
    rows: tuple
    k: int = 4

    def get(self, method: str, kind: str) -> PmseRow:
        for r in self.rows:
            if r.method == method and r.kind == kind:
                return r
        raise KeyError((method, kind))

    def methods(self) -> list[str]:
        return list(dict.fromkeys(r.method for r in self.rows))

    def kinds(self) -> list[str]:
        return list(dict.fromkeys(r.kind for r in self.rows))

    def to_dict(self) -> dict:
        return {
            "design": self.design,
            "k": self.k,
            "trials": self.trials,
            "seed": self.seed,
            "rows": [
                {
                    "method": r.method,
                    "kind": r.kind,
                    "pmse": r.pmse,
                    "mc_se": r.mc_se,
                    "relative": None if math.isnan(r.relative) else r.relative,
                    "trials": r.trials,
                }
                for r in self.rows
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self, digits: int | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["design", "kind", "method", "pmse", "mc_se", "relative", "trials"])

        def fmt(v):
            if math.isnan(v):
                return ""
            return repr(float(v)) if digits is None else f"{v:.{digits}g}"

        for r in self.rows:
            w.writerow([self.design, r.kind, r.method, fmt(r.pmse), fmt(r.mc_se), fmt(r.relative), r.trials])
        return buf.getvalue()


def relative_pmse(rows: Sequence[PmseRow]) -> list[PmseRow]:
    """Divide each PMSE by the mean PMSE of the given rows (one model kind).

    Raises
    ------
    ValueError
        With fewer than two rows or a nonpositive mean PMSE.
    """
    rows = list(rows)
    if len(rows) < 2:
        raise ValueError("relative PMSE needs at least two methods")
    vals = np.array([r.pmse for r in rows], dtype=float)
    mean = float(np.mean(vals))
    if not mean > 0:
        raise ValueError("mean PMSE is zero; relative values are undefined")
    return [PmseRow(r.method, r.kind, r.pmse, r.mc_se, r.trials, float(v / mean)) for r, v in zip(rows, vals)]


def _rows_from_sse(methods, kind, sse: np.ndarray) -> list[PmseRow]:
    trials = sse.shape[0]
    rows = []
    for j, m in enumerate(methods):
        col = sse[:, j]
        se = float(np.std(col, ddof=1) / math.sqrt(trials)) if trials > 1 else math.nan
        rows.append(PmseRow(m, kind, float(np.mean(col)), se, trials))
    return rows


def run_pmse(method: str, kind: str, design: str = "replicated", trials: int = 1000, seed: int = 0, k: int = 4, workers: int | None = None) -> PmseRow:
    """PMSE of a single method under one model kind.

    Uses the same per-trial data as :func:`run_study` with the same seed.
    """
    _check_methods(design, [method])
    if kind not in MODEL_KINDS:
        raise ValueError(f"kind must be one of {MODEL_KINDS}")
    _check_trials(trials)
    sse = _sse_matrix(kind, design, (method,), trials, seed, k, workers or worker_count())
    return _rows_from_sse((method,), kind, sse)[0]


def _check_trials(trials):
    if not isinstance(trials, (int, np.integer)) or trials < 1:
        raise ValueError("trials must be a positive integer")


def run_study(
    design: str = "replicated",
    trials: int = 1000,
    seed: int = 0,
    kinds: Sequence[str] = MODEL_KINDS,
    methods: Sequence[str] | None = None,
    oracles: bool = False,
    k: int = 4,
    workers: int | None = None,
) -> PmseReport:
    """Run every method under every model kind and report (relative) PMSE.

    Parameters
    ----------
    design : {"replicated", "unreplicated"}
        Six replicates per point or one.
    methods : sequence of str, optional
        Defaults to the competing methods of the design.
    oracles : bool
        Also report the saturated and intercept-only fits.
    workers : int, optional
        Worker processes; defaults to :func:`worker_count`.
    """
    methods = _check_methods(design, methods if methods is not None else methods_for(design))
    _check_trials(trials)
    for kd in kinds:
        if kd not in MODEL_KINDS:
            raise ValueError(f"kind must be one of {MODEL_KINDS}")
    extra = ORACLES if oracles else ()
    everything = methods + tuple(o for o in extra if o not in methods)
    workers = workers or worker_count()
    rows = []
    for kd in kinds:
        sse = _sse_matrix(kd, design, everything, trials, seed, k, workers)
        kd_rows = _rows_from_sse(everything, kd, sse)
        competing = [r for r in kd_rows if r.method not in ORACLES]
        rows.extend(relative_pmse(competing) if len(competing) >= 2 else competing)
        rows.extend(r for r in kd_rows if r.method in ORACLES)
    return PmseReport(design, int(trials), int(seed), tuple(rows), k)
