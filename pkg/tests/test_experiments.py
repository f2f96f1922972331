import csv
import json
from pathlib import Path

import numpy as np
import pytest

from gpbounds import bounds, experiments, gpr, numerics
from gpbounds.bounds import BoundParams, Method
from gpbounds.experiments import ExperimentConfig, coverage_bound, preset
from gpbounds.kernels import KernelSpec

GOLDEN = Path(__file__).parent / "golden"


def small(tag, **kw):
    kw.setdefault("n_functions", 2)
    kw.setdefault("n_reps", 5)
    return preset(tag, **kw)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestConfig:
    def test_all_presets_valid(self):
        assert set(experiments.PRESETS) == {
            "exp_1_1_a", "exp_1_1_b", "exp_1_2_a", "exp_1_2_b", "exp_1_2_c",
            "exp_1_3_a", "exp_1_4_a", "exp_1_4_b", "robust"}
        for cfg in experiments.PRESETS.values():
            assert (cfg.B, cfg.R, cfg.lam, cfg.n_train, cfg.noise_sd) == (2.0, 0.5, 0.5, 50, 0.5)
            assert cfg.grid_n == 1000

    def test_unknown_preset(self):
        with pytest.raises(KeyError):
            preset("exp_9")

    @pytest.mark.parametrize("kw", [dict(n_reps=0), dict(n_train=2000), dict(deltas=()),
                                    dict(deltas=(1.5,)), dict(sampler="gp")])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            preset("exp_1_1_a", **kw)

    def test_onb_needs_unit_se(self):
        with pytest.raises(ValueError):
            preset("exp_1_4_b", truth_kernel=KernelSpec.matern32(0.2))

    def test_sweep_needs_nominal(self):
        with pytest.raises(ValueError):
            preset("exp_1_2_c", method=Method.ROBUST_NOMINAL)

    @pytest.mark.parametrize("tag", ["exp_1_2_c", "robust", "exp_1_1_b"])
    def test_json_roundtrip(self, tmp_path, tag):
        cfg = preset(tag)
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg.to_dict()))
        assert ExperimentConfig.load(path) == cfg

    def test_unknown_keys(self):
        d = preset("exp_1_1_a").to_dict()
        d["colour"] = "blue"
        with pytest.raises(ValueError):
            ExperimentConfig.from_dict(d)


class TestInstance:
    def test_smoke(self):
        rep = experiments.run_experiment(small("exp_1_1_a", n_functions=1, n_reps=1))
        assert len(rep.records) == 1
        assert rep.records[0].beta.shape == (4,)

    def test_zero_truth_never_violates(self):
        cfg = small("exp_1_1_a", B=0.0, noise_sd=0.0, n_reps=10)
        rep = experiments.run_experiment(cfg)
        assert not any(r.violated.any() for r in rep.records)

    def test_violation_oracle(self):
        """Recompute five instances through the plain fit/tube path."""
        cfg = small("exp_1_4_b", n_functions=5, n_reps=1, deltas=(0.1, 0.01))
        grid = cfg.grid.points
        for fid in range(5):
            truth = experiments.sample_truth(cfg, fid)
            rec = experiments.run_instance(truth, cfg, fid, 0)
            rng = experiments._rng(cfg.master_seed, 1, fid, 0)
            idx = rng.integers(0, grid.size, size=cfg.n_train)
            y = truth(grid[idx]) + cfg.noise_sd * rng.standard_normal(cfg.n_train)
            post = gpr.fit(cfg.model_kernel, cfg.lam, gpr.Dataset(grid[idx], y))
            for j, d in enumerate(cfg.deltas):
                t = bounds.nominal_halfwidth(post, BoundParams(2, 0.5, 0.5, d), grid)
                gap = np.max(np.abs(truth(grid) - t.mean) - t.halfwidth)
                assert rec.violated[j] == (gap > 0)
                assert rec.beta[j] == pytest.approx(bounds.beta_nominal(post, BoundParams(2, 0.5, 0.5, d)),
                                                    rel=1e-12)
                assert rec.width_mean[j] == pytest.approx(t.halfwidth.mean(), rel=1e-10)

    def test_factorization_failure_counted(self, monkeypatch):
        real = numerics.cholesky
        calls = {"n": 0}

        def flaky(K, shift=0.0):
            calls["n"] += 1
            if calls["n"] == 3:
                raise numerics.FactorizationFailure("injected")
            return real(K, shift)

        monkeypatch.setattr(numerics, "cholesky", flaky)
        rep = experiments.run_experiment(small("exp_1_1_a", n_functions=1, n_reps=4))
        assert rep.factorization_failures == 1
        failed = [r for r in rep.records if r.factorization_failed]
        assert failed[0].violated.all() and np.isnan(failed[0].beta).all()
        assert rep.summary()[0]["failures"] >= 1


@pytest.fixture(scope="module")
def report():
    return experiments.run_experiment(small("exp_1_4_b", n_functions=3, n_reps=20))


@pytest.fixture(scope="module")
def sweep():
    return experiments.run_sweep(small("exp_1_2_c", n_functions=3, n_reps=30))


class TestReport:
    def test_nesting(self, report):
        rates = report.failure_rates()
        assert np.all(np.diff(rates, axis=1) <= 0)
        for r in report.records:
            assert np.all(np.diff(r.width_mean) > 0)

    def test_per_function(self, report):
        rows = report.per_function()
        assert len(rows) == 3 * 4
        for row in rows:
            assert 0 <= row["failures"] <= row["reps"] == 20
            assert row["beta_sd"] >= 0 and row["width_sd"] >= 0

    def test_summary(self, report):
        s = report.summary()
        assert [x["delta"] for x in s] == [0.1, 0.01, 0.001, 0.0001]
        assert all(x["instances"] == 60 for x in s)
        assert s[0]["beta_mean"] == pytest.approx(np.mean([r.beta[0] for r in report.records]))

    def test_order_independent(self, report):
        shuffled = list(reversed(report.records))
        again = experiments.CoverageReport(report.config, report.eps_tilde, shuffled)
        assert again.summary() == report.summary()

    def test_outputs(self, report, tmp_path):
        paths = experiments.write_report(report, tmp_path)
        assert set(paths) == {"betas", "coverage", "widths", "summary"}
        assert read_csv(paths["betas"])[0] == ["function_id", "rep_id", "delta", "beta"]
        assert read_csv(paths["coverage"])[0] == ["function_id", "delta", "failures", "reps"]
        assert read_csv(paths["widths"])[0] == ["function_id", "rep_id", "delta", "width_mean", "width_sd"]
        rows = read_csv(paths["betas"])[1:]
        assert len(rows) == 60 * 4
        assert float(rows[0][3]) == report.records[0].beta[0]

    def test_coverage_bound(self):
        assert coverage_bound(0.1, 100) == pytest.approx(0.1 + 3 * 0.03)
        assert coverage_bound(0.01, 10 ** 6) < 0.0104


class TestDeterminism:
    def test_parallel_equals_serial(self, tmp_path):
        cfg = small("exp_1_3_a", n_functions=4, n_reps=3)
        a = experiments.write_report(experiments.run_experiment(cfg, jobs=1), tmp_path / "a")
        b = experiments.write_report(experiments.run_experiment(cfg, jobs=3), tmp_path / "b")
        for k in a:
            assert a[k].read_bytes() == b[k].read_bytes()

    def test_seed_matters(self):
        a = experiments.run_experiment(small("exp_1_1_a", master_seed=1))
        b = experiments.run_experiment(small("exp_1_1_a", master_seed=2))
        assert a.records[0].beta[0] != b.records[0].beta[0]

    def test_reps_override_keeps_prefix(self):
        a = experiments.run_experiment(small("exp_1_1_a", n_reps=3))
        b = experiments.run_experiment(small("exp_1_1_a", n_reps=6))
        kept = [r for r in b.records if r.rep_id < 3]
        for r, s in zip(a.records, kept):
            np.testing.assert_array_equal(r.beta, s.beta)


class TestSweep:
    def test_shape(self, sweep):
        assert sweep.failure_rates.shape == (20, 3)
        assert sweep.scaling_means[0] == 2.0

    def test_endpoint_identity(self, sweep):
        np.testing.assert_array_equal(sweep.failure_rates[-1], sweep.coverage.failure_rates()[:, 0])

    def test_monotone(self, sweep):
        assert np.all(np.diff(sweep.failure_rates, axis=0) <= 0)

    def test_requires_sweep(self):
        with pytest.raises(ValueError):
            experiments.run_sweep(small("exp_1_1_a"))

    def test_csv(self, sweep, tmp_path):
        path = experiments.write_sweep(sweep, tmp_path)["sweep"]
        rows = read_csv(path)
        assert rows[0] == ["scaling", "scaling_index", "function_id", "failure_rate"]
        assert len(rows) == 1 + 20 * 3


class TestAggregate:
    def test_empty(self, tmp_path):
        with pytest.raises(ValueError):
            experiments.aggregate([], tmp_path / "t.csv")

    def test_single_cell(self, tmp_path):
        rep = experiments.run_experiment(small("exp_1_1_a", deltas=(0.1,), n_functions=1, n_reps=2))
        rows = read_csv(experiments.aggregate([("only", rep)], tmp_path / "t.csv"))
        assert rows[0] == ["setting", "quantity", "0.1_mean", "0.1_sd"]
        assert rows[1][:2] == ["only", "beta"]
        assert float(rows[1][2]) == rep.summary()[0]["beta_mean"]

    def test_mixed_deltas(self, tmp_path):
        a = experiments.run_experiment(small("exp_1_1_a", n_functions=1, n_reps=1))
        b = experiments.run_experiment(small("exp_1_2_a", n_functions=1, n_reps=1))
        with pytest.raises(ValueError):
            experiments.aggregate([("a", a), ("b", b)], tmp_path / "t.csv")

    def test_golden_beta_table(self, tmp_path):
        reps = [(t, experiments.run_experiment(small(t))) for t in ("exp_1_1_a", "exp_1_1_b")]
        got = read_csv(experiments.aggregate(reps, tmp_path / "t.csv"))
        want = read_csv(GOLDEN / "beta_table.csv")
        assert got[0] == want[0]
        for g, w in zip(got[1:], want[1:]):
            assert g[:2] == w[:2]
            np.testing.assert_allclose([float(v) for v in g[2:]], [float(v) for v in w[2:]], rtol=1e-10)

    @pytest.mark.parametrize("quantity", ["width", "width_sd"])
    def test_width_tables(self, tmp_path, quantity):
        rep = experiments.run_experiment(small("exp_1_1_a", n_functions=1, n_reps=3))
        rows = read_csv(experiments.aggregate([("a", rep)], tmp_path / "t.csv", quantity=quantity))
        assert rows[1][1] == quantity
        key = "width_mean" if quantity == "width" else "width_sd"
        assert float(rows[1][2]) == rep.summary()[0][key]
