"""Embedded example datasets and reconstructions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .design import Dataset, Factor, all_terms, effect_matrix, enumerate_design

__all__ = [
    "NamedDataset",
    "seed_germination",
    "wafer_reconstruction",
    "synthetic_solder",
    "reactor_reconstruction",
    "WAFER_COEFFICIENTS",
    "WAFER_SE",
    "REGISTRY",
    "load",
]


@dataclass(frozen=True)
class NamedDataset:
    id: str
    dataset: Dataset
    provenance: str

    def __post_init__(self):
        if not self.provenance:
            raise ValueError("provenance must be non-empty")


_SEEDS = {
    ("11", "low"): (98, 96, 62),
    ("11", "medium"): (94, 79, 3),
    ("11", "high"): (92, 41, 1),
    ("21", "low"): (94, 93, 65),
    ("21", "medium"): (94, 71, 2),
    ("21", "high"): (91, 30, 1),
}


def seed_germination() -> NamedDataset:
    """Seeds germinating out of 100 in a 2 x 3 x 3 design (18 rows).

    Factors are germination temperature, storage temperature (ordinal, with
    its temperature as score) and moisture level.
    """
    germ = Factor("germ", ("11", "21"))
    store = Factor("store", ("21", "42", "62"), "ordinal", (21.0, 42.0, 62.0))
    moist = Factor("moist", ("low", "medium", "high"))
    codes, y = [], []
    for (g, m), counts in _SEEDS.items():
        for s, count in enumerate(counts):
            codes.append((germ.levels.index(g), s, moist.levels.index(m)))
            y.append(count)
    ds = Dataset((germ, store, moist), codes, y, [100] * len(y), "proportion", "seed_germination")
    return NamedDataset(
        "seed_germination",
        ds,
        "Seed germination counts out of 100 (2 germination temps x 3 moisture levels x 3 storage temps), transcribed cell for cell.",
    )


# Saturated coefficients of the replicated 2^4 wafer experiment, in
# standard term order (intercept, x1..x4, two-way, three-way, four-way).
WAFER_COEFFICIENTS = np.array([
    14.161250,
    -0.038729, 0.086271, -0.038708, 0.245021,
    0.003708, -0.046229, -0.025000, 0.028771, -0.015042, -0.172521,
    0.048750, 0.012521, -0.015000, 0.054958,
    0.009979,
])
WAFER_SE = 0.049744
_WAFER_PATTERN = np.array([-5.0, -3.0, -1.0, 1.0, 3.0, 5.0]) / np.sqrt(70.0 / 6.0)


def wafer_reconstruction(seed: int | None = None) -> NamedDataset:
    """Replicated 2^4 wafer data rebuilt from its saturated fit.

    Each of the 16 cells holds its exact fitted mean plus the fixed
    zero-sum residual pattern ``c * (-5, -3, -1, 1, 3, 5) / sqrt(70/6)``,
    with ``c`` chosen so the pooled residual variance reproduces the
    published common standard error. ``seed`` is accepted for interface
    symmetry; the construction is deterministic.
    """
    del seed
    k, r = 4, 6
    points = enumerate_design(k)
    factors = tuple(Factor(nm, ("-", "+")) for nm in "ABCD")
    codes = np.repeat((points + 1) // 2, r, axis=0)
    base = Dataset(factors, codes, np.zeros(len(codes)), name="wafer")
    X = effect_matrix(base, all_terms(k))
    mu = X @ WAFER_COEFFICIENTS
    n = len(codes)
    rss = (WAFER_SE * np.sqrt(n)) ** 2 * (n - 2**k)
    # pattern has unit sum of squares per replicate, so 96 c^2 = rss
    c = np.sqrt(rss / n)
    y = mu + c * np.tile(_WAFER_PATTERN, 2**k)
    return NamedDataset(
        "wafer",
        Dataset(factors, codes, y, name="wafer"),
        "Replicated (r=6) 2^4 epitaxial-layer wafer experiment reconstructed from the 16 published saturated "
        "coefficients and common standard error; within-cell residuals are a fixed balanced pattern, so "
        "saturated-fit statistics are exact but raw residual signs are not the original data's.",
    )


# Active reactor effects (coefficient scale) taken from the fitted equation
# 65.5 + 9.75 x2 + 5.375 x4 - 3.125 x5 + 6.625 x2 x4 - 5.5 x4 x5.
_REACTOR_ACTIVE = {
    frozenset(): 65.5,
    frozenset({1}): 9.75,
    frozenset({3}): 5.375,
    frozenset({4}): -3.125,
    frozenset({1, 3}): 6.625,
    frozenset({3, 4}): -5.5,
}


def _reactor_inactive(n: int) -> np.ndarray:
    # evenly spread magnitudes in (0.1, 1.2] with alternating signs
    mags = 1.2 * np.linspace(0.1, 1.0, n)
    order = np.argsort((np.arange(n) * 7) % n, kind="stable")
    signs = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    return signs * mags[order]


def reactor_reconstruction() -> NamedDataset:
    """Unreplicated 2^5 reactor design consistent with its fitted model.

    The five active effects and the intercept are the published ones; the 26
    inactive effects are synthetic small values, since the raw responses are
    not reproduced here. The 32 responses are the exact image of this effect
    vector, so the saturated fit returns it unchanged.
    """
    k = 5
    terms = all_terms(k)
    inactive = iter(_reactor_inactive(sum(t not in _REACTOR_ACTIVE for t in terms)))
    beta = np.array([_REACTOR_ACTIVE[t] if t in _REACTOR_ACTIVE else next(inactive) for t in terms])
    points = enumerate_design(k)
    factors = tuple(Factor(nm, ("-", "+")) for nm in "ABCDE")
    base = Dataset(factors, (points + 1) // 2, np.zeros(len(points)))
    y = effect_matrix(base, terms) @ beta
    return NamedDataset(
        "reactor",
        Dataset(factors, base.codes, y, name="reactor"),
        "Unreplicated 2^5 reactor design: intercept and active effects B, D, E, BD, DE from the published fitted "
        "equation; remaining 26 effects synthetic (small, deterministic). Not the original raw data.",
    )


SOLDER_LEVELS = {
    "Opening": ("large", "medium", "small"),
    "Solder": ("thick", "thin"),
    "Mask": ("A1.5", "A3", "B3", "B6"),
    "Pad": ("D4", "D6", "D7", "L4", "L6", "L7", "L8", "L9", "W4", "W9"),
    "Panel": ("1", "2", "3"),
}

# log-mean generator with Opening/Solder/Mask interactions; level 0 is the reference
_SOLDER_MAIN = {
    "Opening": (0.0, 0.5, 1.9),
    "Solder": (0.0, 1.1),
    "Mask": (0.0, 0.4, 1.2, 1.9),
    "Pad": (0.0, -0.4, -0.1, 0.3, -0.6, -0.5, -0.3, -0.6, -0.1, -1.4),
    "Panel": (0.0, 0.3, 0.2),
}
_SOLDER_INTERCEPT = -1.0
_SOLDER_PAIRS = {
    ("Opening", "Solder"): np.array([[0.0, 0.0], [0.0, -0.2], [0.0, -0.5]]),
    ("Opening", "Mask"): np.array([[0.0, 0.0, 0.0, 0.0], [0.0, 0.1, -0.2, -0.3], [0.0, -0.3, -0.6, -0.9]]),
    ("Solder", "Mask"): np.array([[0.0, 0.0, 0.0, 0.0], [0.0, -0.1, -0.4, -0.7]]),
}


def synthetic_solder(seed: int = 0, scale: float = 1.0) -> NamedDataset:
    """Synthetic 3 x 2 x 4 x 10 x 3 count data shaped like a wave-solder study.

    Counts are Poisson with log mean ``scale * (intercept + main effects +
    Opening:Solder + Opening:Mask + Solder:Mask)``; ``scale=0`` gives
    Poisson(1) counts everywhere.
    """
    names = list(SOLDER_LEVELS)
    factors = tuple(Factor(nm, SOLDER_LEVELS[nm]) for nm in names)
    grids = np.meshgrid(*[np.arange(len(SOLDER_LEVELS[nm])) for nm in names], indexing="ij")
    codes = np.column_stack([g.ravel() for g in grids])
    eta = np.full(len(codes), _SOLDER_INTERCEPT)
    for j, nm in enumerate(names):
        eta += np.asarray(_SOLDER_MAIN[nm])[codes[:, j]]
    for (a, b), tab in _SOLDER_PAIRS.items():
        eta += tab[codes[:, names.index(a)], codes[:, names.index(b)]]
    mu = np.exp(scale * eta)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 5]))
    y = rng.poisson(mu)
    return NamedDataset(
        "solder_synthetic",
        Dataset(factors, codes, y, response_kind="count", name="solder_synthetic"),
        "Synthetic counts on the 720-point wave-soldering design (Opening, Solder, Mask, Pad, Panel); "
        "responses come from a documented loglinear generator and are not the study's data.",
    )


REGISTRY = {
    "seed_germination": seed_germination,
    "wafer": wafer_reconstruction,
    "reactor": reactor_reconstruction,
    "solder_synthetic": synthetic_solder,
}


def load(name: str) -> NamedDataset:
    try:
        return REGISTRY[name]()
    except KeyError:
        raise KeyError(f"unknown dataset {name!r}; choose from {sorted(REGISTRY)}") from None
