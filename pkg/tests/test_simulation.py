import json

import numpy as np
import pytest

from doetree.design import enumerate_design
from doetree.simulation import (
    DESIGNS,
    REPLICATED_METHODS,
    UNREPLICATED_METHODS,
    PmseRow,
    SimModel,
    draw_true_model,
    relative_pmse,
    run_pmse,
    run_study,
    simulate_trial,
    worker_count,
)


class TestModels:
    def test_null_is_zero(self):
        tm = draw_true_model("Null", np.random.default_rng(0))
        assert np.all(tm.mu == 0.0) and tm.points.shape == (16, 4)

    def test_unif_coefficients_in_range(self):
        tm = draw_true_model("Unif", np.random.default_rng(1))
        assert tm.beta.size == 15 and np.all(np.abs(tm.beta) <= 0.25)

    def test_hier_products(self):
        beta = np.array([0.5, -0.4, 0.3, 0.2])
        tm = SimModel("Hier").from_beta(beta)
        x = enumerate_design(4)
        expected = np.prod(1 + beta * x, axis=1) - 1
        np.testing.assert_allclose(tm.mu, expected)

    def test_exp_mean_is_lognormal_mean(self):
        beta = np.array([0.5, -0.4, 0.3, 0.2])
        tm = SimModel("Exp").from_beta(beta)
        x = enumerate_design(4)
        np.testing.assert_allclose(tm.mu, np.exp(x @ beta + 0.125))
        rng = np.random.default_rng(2)
        sims = np.stack([tm.sample(rng, 1).y for _ in range(4000)])
        se = sims.std(0) / np.sqrt(4000)
        assert np.all(np.abs(sims.mean(0) - tm.mu) < 4 * se)

    def test_sample_layout(self):
        tm = draw_true_model("Unif", np.random.default_rng(3))
        d = tm.sample(np.random.default_rng(4), replicates=6)
        assert d.n == 96 and d.replicates() == 6
        np.testing.assert_array_equal(d.signed_codes()[::6], tm.points)

    def test_wrong_beta_length(self):
        with pytest.raises(ValueError):
            SimModel("Exp").from_beta(np.zeros(3))


class TestTrials:
    def test_methods_share_data(self):
        full = simulate_trial("Unif", "replicated", REPLICATED_METHODS, seed=5, trial=3)
        part = simulate_trial("Unif", "replicated", ("EER", "GUIDE-simple"), seed=5, trial=3)
        np.testing.assert_array_equal(part, full[[1, 4]])

    def test_oracles_need_no_selection(self):
        sse = simulate_trial("Null", "replicated", ("saturated", "intercept"), seed=0, trial=0)
        assert sse.shape == (2,) and np.all(sse >= 0)

    def test_method_must_fit_design(self):
        with pytest.raises(ValueError):
            run_pmse("IER", "Null", "unreplicated", trials=1)
        with pytest.raises(ValueError):
            run_pmse("Lenth-EER", "Null", "replicated", trials=1)

    def test_oracle_anchors(self):
        # saturated fit: 16 cells * sigma^2 / 6; grand mean: 16 * sigma^2 / 96
        sat = run_pmse("saturated", "Null", trials=400, seed=1)
        icp = run_pmse("intercept", "Null", trials=400, seed=1)
        assert abs(sat.pmse - 2 / 3) < 3 * sat.mc_se
        assert abs(icp.pmse - 1 / 24) < 3 * icp.mc_se

    def test_workers_do_not_change_results(self):
        a = run_study("unreplicated", trials=6, seed=2, kinds=("Unif",), workers=1)
        b = run_study("unreplicated", trials=6, seed=2, kinds=("Unif",), workers=3)
        assert a.to_csv() == b.to_csv()


class TestReport:
    def test_relative_pmse_equal_methods(self):
        rows = relative_pmse([PmseRow("a", "Null", 0.3, 0.01, 10), PmseRow("b", "Null", 0.3, 0.01, 10)])
        assert [r.relative for r in rows] == [1.0, 1.0]

    def test_relative_pmse_mean_is_one(self):
        rows = relative_pmse([PmseRow(m, "Unif", v, 0.0, 1) for m, v in zip("abc", (1.0, 2.0, 6.0))])
        assert np.mean([r.relative for r in rows]) == pytest.approx(1.0)
        assert rows[2].relative == pytest.approx(2.0)

    def test_relative_pmse_errors(self):
        with pytest.raises(ValueError):
            relative_pmse([PmseRow("a", "Null", 1.0, 0.0, 1)])
        with pytest.raises(ValueError):
            relative_pmse([PmseRow("a", "Null", 0.0, 0.0, 1), PmseRow("b", "Null", 0.0, 0.0, 1)])

    def test_study_layout_and_serialisation(self):
        rep = run_study("unreplicated", trials=3, seed=4, kinds=("Null", "Exp"), oracles=True)
        assert rep.kinds() == ["Null", "Exp"]
        assert rep.methods() == list(UNREPLICATED_METHODS) + ["saturated", "intercept"]
        assert np.isnan(rep.get("saturated", "Null").relative)
        doc = json.loads(rep.to_json())
        assert doc["trials"] == 3 and len(doc["rows"]) == 14
        assert rep.to_csv().splitlines()[0] == "design,kind,method,pmse,mc_se,relative,trials"

    def test_design_sizes(self):
        assert DESIGNS == {"replicated": 6, "unreplicated": 1}


class TestWorkerCount:
    def test_default(self, monkeypatch):
        monkeypatch.delenv("DOETREE_THREADS", raising=False)
        assert worker_count() == 1

    def test_env(self, monkeypatch):
        monkeypatch.setenv("DOETREE_THREADS", "8")
        assert worker_count() == 8

    @pytest.mark.parametrize("raw", ["0", "-2", "many"])
    def test_invalid(self, monkeypatch, raw):
        monkeypatch.setenv("DOETREE_THREADS", raw)
        with pytest.raises(ValueError):
            worker_count()
