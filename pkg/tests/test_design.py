import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from doetree.design import (
    INTERCEPT,
    DataError,
    Dataset,
    Factor,
    Polynomial,
    all_terms,
    dummy_matrix,
    effect_matrix,
    enumerate_design,
    term_label,
)


def two_level(k, r=1, y=None):
    x = np.repeat(enumerate_design(k), r, axis=0)
    y = np.arange(len(x), dtype=float) if y is None else y
    return Dataset.from_signed(x, y)


class TestFactor:
    def test_kind_inferred_from_level_count(self):
        assert Factor("A", ("-", "+")).kind == "two-level"
        assert Factor("M", ("a", "b", "c")).kind == "nominal"

    def test_ordinal_default_scores(self):
        f = Factor("S", ("lo", "mid", "hi"), "ordinal")
        assert f.scores == (1.0, 2.0, 3.0)
        np.testing.assert_array_equal(f.values(), [1.0, 2.0, 3.0])

    @pytest.mark.parametrize(
        "levels, kind, scores",
        [
            (("a",), "", None),
            (("a", "a"), "", None),
            (("a", "b", "c"), "two-level", None),
            (("a", "b"), "bogus", None),
            (("a", "b", "c"), "ordinal", (3.0, 2.0, 1.0)),
            (("a", "b", "c"), "ordinal", (1.0, 2.0)),
        ],
    )
    def test_invalid(self, levels, kind, scores):
        with pytest.raises(DataError):
            Factor("f", levels, kind, scores)

    def test_nominal_has_no_numeric_coding(self):
        f = Factor("M", ("a", "b", "c"))
        assert not f.is_numeric
        with pytest.raises(DataError):
            f.values()

    def test_reordered_ordinal_becomes_nominal_when_scores_break(self):
        f = Factor("S", ("lo", "mid", "hi"), "ordinal", (1.0, 2.0, 3.0))
        assert f.reordered(("hi", "lo", "mid")).kind == "nominal"


class TestDataset:
    def test_shape_and_replicates(self):
        d = two_level(4, r=6)
        assert (d.n, d.k, d.replicates()) == (96, 4, 6)

    def test_incomplete_design_has_zero_replicates(self):
        d = two_level(3)
        assert d.subset(np.arange(7)).replicates() == 0

    def test_rejects_bad_rows(self):
        f = (Factor("A", ("-", "+")),)
        with pytest.raises(DataError):
            Dataset(f, [[0], [2]], [1.0, 2.0])
        with pytest.raises(DataError):
            Dataset(f, [[0], [1]], [1.0, np.nan])
        with pytest.raises(DataError):
            Dataset(f, [[0], [1]], [1.0])

    def test_proportion_checks(self):
        f = (Factor("A", ("-", "+")),)
        with pytest.raises(DataError):
            Dataset(f, [[0], [1]], [101, 3], [100, 10], "proportion")
        with pytest.raises(DataError):
            Dataset(f, [[0], [1]], [1, 3], None, "proportion")
        with pytest.raises(DataError):
            Dataset(f, [[0], [1]], [1.5, 3], [10, 10], "proportion")

    def test_arrays_are_read_only(self):
        d = two_level(2)
        with pytest.raises(ValueError):
            d.y[0] = 1.0

    def test_alphabetical_relevels(self):
        f = (Factor("M", ("low", "medium", "high")),)
        d = Dataset(f, [[0], [1], [2]], [1.0, 2.0, 3.0])
        a = d.alphabetical()
        assert a.factors[0].levels == ("high", "low", "medium")
        assert [a.factors[0].levels[c] for c in a.codes[:, 0]] == ["low", "medium", "high"]

    def test_signed_codes_round_trip(self):
        x = enumerate_design(3)
        np.testing.assert_array_equal(Dataset.from_signed(x, np.zeros(8)).signed_codes(), x)


class TestTerms:
    def test_all_terms_order(self):
        terms = all_terms(3)
        assert terms[0] == INTERCEPT
        assert [len(t) for t in terms] == [0, 1, 1, 1, 2, 2, 2, 3]
        assert terms[4:7] == [frozenset({0, 1}), frozenset({0, 2}), frozenset({1, 2})]

    def test_labels(self):
        assert term_label(frozenset()) == "(Intercept)"
        assert term_label(frozenset({2, 3})) == "x3:x4"
        assert term_label(frozenset({0, 1}), ["A", "B"]) == "A:B"

    def test_effect_matrix_is_orthogonal(self):
        d = two_level(4, r=2)
        X = effect_matrix(d, all_terms(4))
        np.testing.assert_allclose(X.T @ X, d.n * np.eye(16))

    def test_dummy_matrix_interaction_columns(self):
        fac = (Factor("A", ("a0", "a1", "a2")), Factor("B", ("b0", "b1", "b2")))
        codes = np.array(list(itertools.product(range(3), range(3))))
        d = Dataset(fac, codes, np.zeros(9))
        X, labels = dummy_matrix(d, [INTERCEPT, frozenset({0}), frozenset({1}), frozenset({0, 1})])
        assert labels == [
            "(Intercept)", "Aa1", "Aa2", "Bb1", "Bb2",
            "Aa1:Bb1", "Aa2:Bb1", "Aa1:Bb2", "Aa2:Bb2",
        ]
        assert np.linalg.matrix_rank(X) == 9


monomials = st.frozensets(st.integers(0, 4), max_size=5)
polys = st.dictionaries(monomials, st.floats(-10, 10, allow_nan=False), max_size=8).map(Polynomial)


class TestPolynomial:
    @settings(max_examples=60, deadline=None)
    @given(polys, polys)
    def test_product_evaluates_pointwise(self, p, q):
        pts = enumerate_design(5)
        np.testing.assert_allclose((p * q).evaluate(pts), p.evaluate(pts) * q.evaluate(pts), atol=1e-9)

    @settings(max_examples=60, deadline=None)
    @given(polys, polys)
    def test_sum_evaluates_pointwise(self, p, q):
        pts = enumerate_design(5)
        np.testing.assert_allclose((p + q).evaluate(pts), p.evaluate(pts) + q.evaluate(pts), atol=1e-12)

    def test_square_of_coordinate_is_one(self):
        x = Polynomial({frozenset({1}): 1.0})
        assert (x * x).pruned().coefficients == {INTERCEPT: 1.0}

    def test_format(self):
        p = Polynomial({INTERCEPT: 14.16125, frozenset({3}): 0.24502, frozenset({2, 3}): -0.17252})
        assert p.format(["A", "B", "C", "D"]) == "14.1613 + 0.24502*D - 0.17252*C*D"
        assert Polynomial({}).format() == "0"
