import json

import numpy as np
import pytest

from doetree import datasets
from doetree.classic import estimate_effects
from doetree.design import DataError, enumerate_design
from doetree.io import (
    CsvSchema,
    dataset_to_csv,
    emit_plot_data,
    format_number,
    parse_csv,
    read_csv_text,
    render_tree,
    schema_for,
    tree_from_json,
    tree_to_dict,
)
from doetree.simulation import PmseReport, PmseRow
from doetree.tree import TreeConfig, cv_select, grow_tree, predict

TABLE6 = """germ,moist,store,y,n
11,low,21,98,100
11,low,42,96,100
11,low,62,62,100
11,medium,21,94,100
11,medium,42,79,100
11,medium,62,3,100
11,high,21,92,100
11,high,42,41,100
11,high,62,1,100
21,low,21,94,100
21,low,42,93,100
21,low,62,65,100
21,medium,21,94,100
21,medium,42,71,100
21,medium,62,2,100
21,high,21,91,100
21,high,42,30,100
21,high,62,1,100
"""


class TestCsv:
    def test_two_level_shape(self, tmp_path):
        d = datasets.wafer_reconstruction().dataset
        path = tmp_path / "wafer.csv"
        path.write_text(dataset_to_csv(d))
        back = parse_csv(path)
        assert (back.k, back.replicates()) == (4, 6)

    @pytest.mark.parametrize("key", sorted(datasets.REGISTRY))
    def test_round_trip(self, key):
        d = datasets.load(key).dataset
        assert read_csv_text(dataset_to_csv(d), schema_for(d)) == d

    def test_table_as_csv_equals_embedded(self):
        schema = CsvSchema(
            factors=("germ", "store", "moist"),
            n_column="n",
            response_kind="proportion",
            levels={"moist": ("low", "medium", "high")},
            ordinal={"store": None},
        )
        d = read_csv_text(TABLE6, schema)
        ref = datasets.seed_germination().dataset
        assert d.factor_names == ref.factor_names
        order = np.lexsort(d.codes.T[::-1])
        ref_order = np.lexsort(ref.codes.T[::-1])
        np.testing.assert_array_equal(d.codes[order], ref.codes[ref_order])
        np.testing.assert_array_equal(d.y[order], ref.y[ref_order])
        assert d.factors[1].scores == (21.0, 42.0, 62.0)

    def test_first_appearance_levels(self):
        d = read_csv_text("M,y\nb,1\na,2\nc,3\n")
        assert d.factors[0].levels == ("b", "a", "c")

    @pytest.mark.parametrize(
        "text, schema",
        [
            ("A,y\n-,1\n+,\n", CsvSchema()),
            ("A,y,n\n-,101,100\n+,3,100\n", CsvSchema(n_column="n", response_kind="proportion")),
            ("A,y\n-,1.5\n+,2\n", CsvSchema(response_kind="count")),
            ("A,z\n-,1\n+,2\n", CsvSchema()),
            ("A,y\n-,abc\n+,2\n", CsvSchema()),
        ],
    )
    def test_rejects(self, text, schema):
        with pytest.raises(DataError):
            read_csv_text(text, schema)


class TestRender:
    def _wafer_tree(self):
        return cv_select(datasets.wafer_reconstruction().dataset, TreeConfig(), seed=0)

    def test_wafer_first_condition(self):
        text = render_tree(self._wafer_tree())
        assert "split on D" in text.splitlines()[2]
        assert "[D = -]" in text

    def test_root_only(self):
        d = datasets.wafer_reconstruction().dataset
        text = render_tree(grow_tree(d, TreeConfig(max_depth=0), rng=0))
        assert text.count("leaf") == 1 and "split" not in text

    def test_json_round_trip_predictions(self):
        for tree in (
            self._wafer_tree(),
            grow_tree(datasets.seed_germination().dataset, TreeConfig(kind="best_simple", family="binomial"), rng=1),
            grow_tree(datasets.synthetic_solder().dataset, TreeConfig(family="poisson", max_depth=3), rng=2),
        ):
            back = tree_from_json(render_tree(tree, "json"))
            codes = np.array(np.meshgrid(*[range(f.n_levels) for f in tree.factors], indexing="ij")).reshape(len(tree.factors), -1).T
            np.testing.assert_array_equal(predict(back, codes), predict(tree, codes))
            assert tree_to_dict(back) == tree_to_dict(tree)

    def test_json_schema(self):
        doc = json.loads(render_tree(self._wafer_tree(), "json"))
        root = doc["root"]
        assert root["split"]["var"] == "D"
        leaf = root
        while "split" in leaf:
            leaf = leaf["left"]
        assert {"n", "mean", "terms", "coefs", "se"} <= set(leaf)

    def test_text_uses_six_digits(self):
        assert format_number(14.161249999) == "14.1612"
        assert format_number(float("nan")) == "NA"


class TestPlotData:
    def test_half_normal_wafer(self):
        lines = emit_plot_data("half_normal", estimate_effects(datasets.wafer_reconstruction().dataset)).splitlines()
        assert lines[0].startswith("# ")
        rows = lines[2:]
        assert len(rows) == 15
        assert rows[-1].endswith(",x4") and rows[-2].endswith(",x3:x4")

    def test_relative_pmse_equal(self):
        rep = PmseReport("replicated", 10, 0, (PmseRow("A", "Null", 0.2, 0.01, 10, 1.0), PmseRow("B", "Null", 0.2, 0.01, 10, 1.0)))
        rows = emit_plot_data("relative_pmse", rep).splitlines()[2:]
        assert [r.split(",")[-1] for r in rows] == ["1.0", "1.0"]

    def test_fitted_vs_x_one_line_per_leaf(self):
        tree = cv_select(datasets.wafer_reconstruction().dataset, TreeConfig(kind="best_simple"), seed=0)
        rows = emit_plot_data("fitted_vs_x", (tree, "D")).splitlines()[2:]
        assert len(rows) == tree.n_leaves

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            emit_plot_data("pie", None)
