"""Factors, datasets and the codings consumed by every other module.

Two-level factors code their first listed level as -1 and the second as +1.
Terms are ``frozenset`` objects of factor indices; the empty set is the
intercept.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

__all__ = [
    "Factor",
    "Dataset",
    "Term",
    "Polynomial",
    "DataError",
    "INTERCEPT",
    "all_terms",
    "term_label",
    "enumerate_design",
    "effect_matrix",
    "dummy_matrix",
]

Term = frozenset
INTERCEPT: frozenset = frozenset()

FACTOR_KINDS = ("two-level", "nominal", "ordinal")
RESPONSE_KINDS = ("gaussian", "count", "proportion")


class DataError(ValueError):
    """Raised when a dataset or its rows violate an input invariant."""


@dataclass(frozen=True)
class Factor:
    """An experimental factor with ordered level labels.

    Parameters
    ----------
    name : str
        Identifier used in labels and output.
    levels : sequence of str
        Distinct level labels; the order fixes codes and the reference level.
    kind : {"two-level", "nominal", "ordinal"}, optional
        Inferred from the level count when omitted (two levels give
        ``"two-level"``, more give ``"nominal"``).
    scores : sequence of float, optional
        Numeric level scores used when an ordinal factor acts as a linear
        predictor. Defaults to ``1, 2, ..., L`` for ordinal factors.
    """

    name: str
    levels: tuple
    kind: str = ""
    scores: tuple | None = None

    def __post_init__(self):
        levels = tuple(str(v) for v in self.levels)
        object.__setattr__(self, "levels", levels)
        if len(levels) < 2:
            raise DataError(f"factor {self.name!r} needs at least two levels")
        if len(set(levels)) != len(levels):
            raise DataError(f"factor {self.name!r} has duplicate level labels")
        kind = self.kind or ("two-level" if len(levels) == 2 else "nominal")
        if kind not in FACTOR_KINDS:
            raise DataError(f"unknown factor kind {kind!r}")
        if kind == "two-level" and len(levels) != 2:
            raise DataError(f"factor {self.name!r} is two-level but has {len(levels)} levels")
        object.__setattr__(self, "kind", kind)
        if self.scores is not None:
            scores = tuple(float(s) for s in self.scores)
            if len(scores) != len(levels):
                raise DataError(f"factor {self.name!r}: one score per level required")
            if kind == "ordinal" and any(b <= a for a, b in zip(scores, scores[1:])):
                raise DataError(f"factor {self.name!r}: ordinal scores must increase")
            object.__setattr__(self, "scores", scores)
        elif kind == "ordinal":
            object.__setattr__(self, "scores", tuple(float(i + 1) for i in range(len(levels))))

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def is_two_level(self) -> bool:
        return self.n_levels == 2

    @property
    def is_numeric(self) -> bool:
        """Whether the factor can enter a model as a single linear column."""
        return self.n_levels == 2 or self.kind == "ordinal"

    def values(self) -> np.ndarray:
        """Numeric value of each level when used as a linear predictor."""
        if self.kind == "ordinal":
            return np.asarray(self.scores, dtype=float)
        if self.n_levels == 2:
            return np.array([-1.0, 1.0])
        raise DataError(f"nominal factor {self.name!r} has no numeric coding")

    def reordered(self, levels: Sequence[str]) -> "Factor":
        order = [self.levels.index(str(v)) for v in levels]
        scores = None if self.scores is None else tuple(self.scores[i] for i in order)
        kind = self.kind
        if kind == "ordinal" and scores is not None and any(b <= a for a, b in zip(scores, scores[1:])):
            kind = "nominal"
            scores = None
        return Factor(self.name, tuple(levels), kind, scores)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Observed rows of a factorial experiment.

    ``codes`` holds one level index per factor and row. ``n_trials`` carries
    binomial denominators and is required for proportion responses.
    """

    factors: tuple
    codes: np.ndarray
    y: np.ndarray
    n_trials: np.ndarray | None = None
    response_kind: str = "gaussian"
    name: str = field(default="", compare=False)

    def __post_init__(self):
        factors = tuple(self.factors)
        codes = np.array(self.codes, dtype=np.int64, copy=True)
        y = np.array(self.y, dtype=float, copy=True).ravel()
        if codes.ndim == 1:
            codes = codes.reshape(-1, len(factors)) if factors else codes.reshape(-1, 0)
        if codes.ndim != 2 or codes.shape[1] != len(factors):
            raise DataError("codes must have one column per factor")
        if codes.shape[0] != y.shape[0]:
            raise DataError("codes and y must have the same number of rows")
        if codes.shape[0] == 0:
            raise DataError("dataset has no rows")
        names = [f.name for f in factors]
        if len(set(names)) != len(names):
            raise DataError("factor names must be unique")
        for j, f in enumerate(factors):
            col = codes[:, j]
            if col.min() < 0 or col.max() >= f.n_levels:
                raise DataError(f"level index out of range for factor {f.name!r}")
        if not np.all(np.isfinite(y)):
            raise DataError("response contains non-finite values")
        if self.response_kind not in RESPONSE_KINDS:
            raise DataError(f"unknown response kind {self.response_kind!r}")
        n_trials = None
        if self.n_trials is not None:
            n_trials = np.array(self.n_trials, dtype=float, copy=True).ravel()
            if n_trials.shape != y.shape:
                raise DataError("n_trials must match y")
            if np.any(n_trials <= 0) or np.any(n_trials != np.round(n_trials)):
                raise DataError("binomial denominators must be positive integers")
        if self.response_kind in ("count", "proportion"):
            if np.any(y < 0) or np.any(y != np.round(y)):
                raise DataError("count responses must be non-negative integers")
        if self.response_kind == "proportion":
            if n_trials is None:
                raise DataError("proportion responses need binomial denominators")
            if np.any(y > n_trials):
                raise DataError("successes exceed the binomial denominator")
        for arr in (codes, y, n_trials):
            if arr is not None:
                arr.setflags(write=False)
        object.__setattr__(self, "factors", factors)
        object.__setattr__(self, "codes", codes)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "n_trials", n_trials)

    @property
    def n(self) -> int:
        return int(self.y.shape[0])

    @property
    def k(self) -> int:
        return len(self.factors)

    @property
    def factor_names(self) -> list[str]:
        return [f.name for f in self.factors]

    @property
    def all_two_level(self) -> bool:
        return all(f.is_two_level for f in self.factors)

    def rows(self) -> Iterator[tuple]:
        """Yield ``(design point, y, n)`` triples."""
        for i in range(self.n):
            n = None if self.n_trials is None else int(self.n_trials[i])
            yield tuple(int(c) for c in self.codes[i]), float(self.y[i]), n

    def signed_codes(self) -> np.ndarray:
        """Rows in +/-1 coding; every factor must be two-level."""
        bad = [f.name for f in self.factors if not f.is_two_level]
        if bad:
            raise DataError(f"factors {bad} are not two-level")
        return 2.0 * self.codes - 1.0

    def replicates(self) -> int:
        """Rows per design point of a complete factorial, or 0 if unbalanced."""
        shape = tuple(f.n_levels for f in self.factors)
        cells = np.ravel_multi_index(self.codes.T, shape) if shape else np.zeros(self.n, int)
        counts = np.bincount(cells, minlength=int(np.prod(shape)))
        r = int(counts[0])
        return r if r > 0 and np.all(counts == r) else 0

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        nt = None if self.n_trials is None else self.n_trials[index]
        return Dataset(self.factors, self.codes[index], self.y[index], nt, self.response_kind, self.name)

    def with_response(self, y, n_trials=None) -> "Dataset":
        nt = self.n_trials if n_trials is None else n_trials
        return Dataset(self.factors, self.codes, y, nt, self.response_kind, self.name)

    def alphabetical(self) -> "Dataset":
        """Relevel every factor so its levels sort alphabetically."""
        factors, codes = [], self.codes.copy()
        for j, f in enumerate(self.factors):
            order = sorted(f.levels)
            nf = f.reordered(order)
            remap = np.array([order.index(lab) for lab in f.levels])
            codes[:, j] = remap[self.codes[:, j]]
            factors.append(nf)
        return Dataset(tuple(factors), codes, self.y, self.n_trials, self.response_kind, self.name)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        same_nt = (self.n_trials is None and other.n_trials is None) or (
            self.n_trials is not None
            and other.n_trials is not None
            and np.array_equal(self.n_trials, other.n_trials)
        )
        return (
            self.factors == other.factors
            and self.response_kind == other.response_kind
            and np.array_equal(self.codes, other.codes)
            and np.array_equal(self.y, other.y)
            and same_nt
        )

    __hash__ = None

    @classmethod
    def from_signed(cls, x, y, names=None, **kwargs) -> "Dataset":
        """Build a two-level dataset from a +/-1 coded matrix."""
        x = np.asarray(x, dtype=float)
        if x.ndim != 2:
            raise DataError("x must be two-dimensional")
        if not np.all(np.isin(x, (-1.0, 1.0))):
            raise DataError("signed codes must be -1 or +1")
        names = names or [chr(ord("A") + j) if x.shape[1] <= 26 else f"x{j + 1}" for j in range(x.shape[1])]
        factors = tuple(Factor(nm, ("-", "+")) for nm in names)
        return cls(factors, ((x + 1) // 2).astype(int), y, **kwargs)


def all_terms(k: int, max_order: int | None = None, intercept: bool = True) -> list[frozenset]:
    """Terms over ``k`` factors ordered by order, then lexicographically."""
    max_order = k if max_order is None else max_order
    out = [INTERCEPT] if intercept else []
    for order in range(1, max_order + 1):
        out.extend(frozenset(c) for c in itertools.combinations(range(k), order))
    return out


def term_key(term) -> tuple:
    return (len(term), tuple(sorted(term)))


def term_label(term, names: Sequence[str] | None = None, sep: str = ":") -> str:
    if not term:
        return "(Intercept)"
    idx = sorted(term)
    if names is None:
        return sep.join(f"x{i + 1}" for i in idx)
    return sep.join(names[i] for i in idx)


def enumerate_design(k: int) -> np.ndarray:
    """All ``2**k`` points of a two-level design in lexicographic +/-1 order.

    >>> enumerate_design(2).tolist()
    [[-1, -1], [-1, 1], [1, -1], [1, 1]]
    """
    if not isinstance(k, (int, np.integer)) or not 1 <= k <= 16:
        raise ValueError("k must be an integer between 1 and 16")
    return np.array(list(itertools.product((-1, 1), repeat=int(k))), dtype=np.int64)


def _signed_columns(signed: np.ndarray, terms: Iterable) -> np.ndarray:
    terms = list(terms)
    out = np.ones((signed.shape[0], len(terms)))
    for j, t in enumerate(terms):
        for f in t:
            out[:, j] *= signed[:, f]
    return out


def effect_matrix(dataset: Dataset, terms: Sequence) -> np.ndarray:
    """Contrast matrix: column ``j`` is the product of the +/-1 codes in term ``j``."""
    used = set().union(*terms) if terms else set()
    bad = [dataset.factors[f].name for f in sorted(used) if not dataset.factors[f].is_two_level]
    if bad:
        raise DataError(f"effect_matrix needs two-level factors; use dummy_matrix for {bad}")
    signed = np.zeros((dataset.n, dataset.k))
    for f in used:
        signed[:, f] = 2.0 * dataset.codes[:, f] - 1.0
    return _signed_columns(signed, terms)


def _indicator_block(dataset: Dataset, f: int) -> tuple[np.ndarray, list[str]]:
    fac = dataset.factors[f]
    levels = range(1, fac.n_levels)
    block = np.column_stack([(dataset.codes[:, f] == lev).astype(float) for lev in levels])
    labels = [f"{fac.name}{fac.levels[lev]}" for lev in levels]
    return block, labels


def dummy_matrix(dataset: Dataset, terms: Sequence) -> tuple[np.ndarray, list[str]]:
    """Set-to-zero indicator coding with the first level of each factor as reference.

    An interaction contributes every product of its members' indicator
    columns, the first member varying fastest. Returns the matrix and its
    column labels, e.g. ``"store42:moistlow"``.
    """
    cols, labels = [], []
    for t in terms:
        if not t:
            cols.append(np.ones((dataset.n, 1)))
            labels.append("(Intercept)")
            continue
        block, lab = None, None
        for f in sorted(t):
            b, bl = _indicator_block(dataset, f)
            if block is None:
                block, lab = b, bl
            else:
                # earlier members vary fastest
                block = np.column_stack([block[:, i] * b[:, j] for j in range(b.shape[1]) for i in range(block.shape[1])])
                lab = [f"{lab[i]}:{bl[j]}" for j in range(len(bl)) for i in range(len(lab))]
        cols.append(block)
        labels.extend(lab)
    if not cols:
        return np.zeros((dataset.n, 0)), []
    return np.column_stack(cols), labels


@dataclass(frozen=True)
class Polynomial:
    """Multilinear polynomial in +/-1 codes, mapping terms to coefficients."""

    coefficients: Mapping

    def __post_init__(self):
        coefs = {frozenset(t): float(c) for t, c in dict(self.coefficients).items()}
        object.__setattr__(self, "coefficients", coefs)

    def __getitem__(self, term) -> float:
        return self.coefficients.get(frozenset(term), 0.0)

    def __add__(self, other: "Polynomial") -> "Polynomial":
        out = dict(self.coefficients)
        for t, c in other.coefficients.items():
            out[t] = out.get(t, 0.0) + c
        return Polynomial(out)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return Polynomial({t: c * other for t, c in self.coefficients.items()})
        out: dict = {}
        for s, a in self.coefficients.items():
            for t, b in other.coefficients.items():
                # x_j**2 == 1 on +/-1 codes
                u = s ^ t
                out[u] = out.get(u, 0.0) + a * b
        return Polynomial(out)

    __rmul__ = __mul__

    @property
    def terms(self) -> list:
        return sorted(self.coefficients, key=term_key)

    def pruned(self, tol: float = 0.0) -> "Polynomial":
        return Polynomial({t: c for t, c in self.coefficients.items() if abs(c) > tol})

    def evaluate(self, points) -> np.ndarray:
        """Evaluate at +/-1 coded points (one row per point)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        terms = self.terms
        if not terms:
            return np.zeros(pts.shape[0])
        cols = _signed_columns(pts, terms)
        return cols @ np.array([self.coefficients[t] for t in terms])

    def format(self, names: Sequence[str] | None = None, digits: int = 6, tol: float = 0.0) -> str:
        parts = []
        for t in self.terms:
            c = self.coefficients[t]
            if abs(c) <= tol and t:
                continue
            mag = f"{abs(c):.{digits}g}"
            body = mag if not t else f"{mag}*{term_label(t, names, '*')}"
            sign = "-" if c < 0 else "+"
            parts.append(body if not parts and c >= 0 else f"{sign} {body}" if parts else f"-{body}")
        return " ".join(parts) if parts else "0"
