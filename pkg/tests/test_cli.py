import io
import json
import os
import subprocess
import sys

import pytest

from doetree.cli import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, EXIT_VALIDATION, main


def run(*argv):
    out = io.StringIO()
    code = main(list(argv), out=out)
    return code, out.getvalue()


def test_datasets_list_and_export(tmp_path):
    code, text = run("datasets", "--list")
    assert code == EXIT_OK and "wafer: 96 rows" in text
    path = tmp_path / "w.csv"
    assert run("datasets", "--export", "wafer", "--output", str(path))[0] == EXIT_OK
    assert path.read_text().startswith("A,B,C,D,y\n")


def test_analyze_from_csv(tmp_path):
    path = tmp_path / "w.csv"
    run("datasets", "--export", "wafer", "--output", str(path))
    code, text = run("analyze", "--method", "ier", "--input", str(path))
    assert code == EXIT_OK
    assert "selected: D, C:D" in text
    assert "fitted: y = 14.1612 + 0.245021*D - 0.172521*C*D" in text


def test_analyze_json_and_plot_data(tmp_path):
    plot = tmp_path / "hn.csv"
    code, text = run("analyze", "--dataset", "wafer", "--method", "aic", "--format", "json", "--plot-data", str(plot))
    doc = json.loads(text)
    assert code == EXIT_OK and doc["selected"] == ["B", "C", "D", "C:D"]
    assert len(plot.read_text().splitlines()) == 17


def test_analyze_lenth():
    code, text = run("analyze", "--dataset", "reactor", "--method", "lenth-ier")
    assert code == EXIT_OK and "selected: B, D, E, B:D, D:E" in text


def test_tree_text_and_json():
    code, text = run("tree", "--dataset", "wafer", "--seed", "0")
    assert code == EXIT_OK and "node 1: n=96 split on D" in text and "expanded: y = " in text
    code, js = run("tree", "--dataset", "wafer", "--seed", "0", "--format", "json")
    assert code == EXIT_OK and json.loads(js)["root"]["split"]["var"] == "D"


def test_tree_binomial_from_csv(tmp_path):
    path = tmp_path / "seed.csv"
    run("datasets", "--export", "seed_germination", "--output", str(path))
    code, text = run(
        "tree", "--input", str(path), "--family", "binomial", "--n-column", "n",
        "--ordinal", "store", "--model", "simple", "--folds", "0", "--seed", "1",
    )
    assert code == EXIT_OK and "node 1: n=18 split on moist" in text


def test_simulate_is_reproducible():
    args = ("simulate", "--design", "unreplicated", "--trials", "3", "--seed", "9", "--kinds", "Null", "--format", "csv")
    assert run(*args) == run(*args)


@pytest.mark.parametrize(
    "argv, code",
    [
        (("tree", "--dataset", "wafer"), EXIT_CONFIG),
        (("simulate", "--trials", "3"), EXIT_CONFIG),
        (("analyze", "--dataset", "wafer", "--method", "bogus"), EXIT_CONFIG),
        (("analyze", "--dataset", "reactor", "--method", "ier"), EXIT_CONFIG),
        (("analyze", "--dataset", "wafer", "--method", "ier", "--alpha", "1.5"), EXIT_CONFIG),
        (("analyze", "--dataset", "nope", "--method", "ier"), EXIT_CONFIG),
        (("simulate", "--seed", "1", "--kinds", "Weird"), EXIT_CONFIG),
        (("analyze", "--input", "/no/such/file.csv", "--method", "ier"), EXIT_VALIDATION),
        (("tree", "--dataset", "wafer", "--seed", "0", "--folds", "1"), EXIT_CONFIG),
        ((), EXIT_CONFIG),
    ],
)
def test_exit_codes(argv, code):
    assert run(*argv)[0] == code


def test_invalid_csv_is_validation_error(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("A,y,n\n-,101,100\n+,3,100\n")
    code, _ = run("tree", "--input", str(path), "--family", "binomial", "--n-column", "n", "--seed", "0")
    assert code == EXIT_VALIDATION


def test_numerical_failure_exit_code(monkeypatch):
    from doetree import cli
    from doetree.glm import ConvergenceError

    def diverge(*args, **kwargs):
        raise ConvergenceError("IRLS did not converge")

    monkeypatch.setattr(cli, "cv_select", diverge)
    assert run("tree", "--dataset", "seed_germination", "--family", "binomial", "--seed", "0")[0] == EXIT_NUMERICAL


def test_console_script_entry_point():
    env = dict(os.environ, DOETREE_THREADS="1")
    res = subprocess.run(
        [sys.executable, "-m", "doetree.cli", "datasets", "--export", "reactor"],
        capture_output=True, text=True, env=env, check=False,
    )
    assert res.returncode == 0 and res.stdout.startswith("A,B,C,D,E,y")
