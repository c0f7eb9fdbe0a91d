import time

import numpy as np
import pytest

from necovar.errors import CalibrationError
from necovar.marginals import to_latent
from necovar.sem import fit_sem, necof
from necovar.simulate import (
    SimConfig,
    baseline_network,
    calibrate_contagion,
    draw_edge_coefficients,
    lag_aic_study,
    random_dag,
    run_study,
    simulate_sem,
    timing_study,
    write_study_tables,
)


class TestRandomDag:
    def test_density_zero_empty(self):
        g = random_dag(6, 0.0, seed=1)
        assert not g.directed_edges

    def test_density_one_complete(self):
        g = random_dag(5, 1.0, seed=2)
        assert len(g.directed_edges) == 10

    def test_exact_edge_count(self):
        g = random_dag(5, 7, seed=3)
        assert len(g.directed_edges) == 7
        assert len(g.directed_edges) / 10 == pytest.approx(0.7)

    def test_benchmark_network_shape(self):
        g = baseline_network()
        assert g.p == 5 and len(g.directed_edges) == 7
        assert not g.undirected_edges


class TestCalibration:
    def test_zero_target(self):
        g = baseline_network()
        model = calibrate_contagion(g, draw_edge_coefficients(g, 1), 0.0, 0.01)
        assert np.all(model.B == 0.0)
        assert necof(model)["market"] == 0.0

    def test_benchmark_target(self):
        g = baseline_network()
        model = calibrate_contagion(g, draw_edge_coefficients(g, 4), 0.47, 0.01)
        assert necof(model)["market"] == pytest.approx(0.47, abs=1e-4)

    def test_sweep_targets_all_calibrate(self):
        g = random_dag(10, 0.31, seed=5)
        base = draw_edge_coefficients(g, 6)
        for target in (0.0, 0.19, 0.47, 0.73, 0.83):
            model = calibrate_contagion(g, base, target, 0.01)
            assert necof(model)["market"] == pytest.approx(target, abs=1e-4)

    def test_unreachable_target(self):
        g = random_dag(4, 0.0, seed=7)
        with pytest.raises(CalibrationError):
            calibrate_contagion(g, np.zeros((4, 4)), 0.3, 0.01)


class TestSimulate:
    def test_gaussian_moments(self):
        g = baseline_network()
        model = calibrate_contagion(g, np.zeros((5, 5)) , 0.0, 0.02)
        n = 20000
        panel = simulate_sem(model, SimConfig(p=5, sigma=0.02, n_obs=n, seed=8))
        m = panel.values.mean(axis=0)
        v = panel.values.var(axis=0)
        assert np.all(np.abs(m) < 5 * 0.02 / np.sqrt(n))
        assert np.all(np.abs(v / 0.02**2 - 1.0) < 5 * np.sqrt(2.0 / n))

    def test_exponential_skewness(self):
        g = random_dag(2, 0.0, seed=9)
        model = calibrate_contagion(g, np.zeros((2, 2)), 0.0, 0.01)
        panel = simulate_sem(
            model, SimConfig(p=2, noise="exponential", sigma=0.01, n_obs=10**5, seed=10)
        )
        x = panel.values[:, 0]
        c = x - x.mean()
        skew = np.mean(c**3) / np.mean(c**2) ** 1.5
        assert skew == pytest.approx(2.0, abs=0.2)

    def test_shock_rows_count_and_direction(self):
        g = baseline_network()
        base = np.abs(draw_edge_coefficients(g, 11))  # nonnegative effects
        model = calibrate_contagion(g, base, 0.47, 0.01)
        cfg = dict(p=5, sigma=0.01, n_obs=1000, seed=12)
        shocked = simulate_sem(model, SimConfig(shock_period=100, **cfg))
        plain = simulate_sem(model, SimConfig(shock_period=None, **cfg))
        diff_rows = np.where(np.any(shocked.values != plain.values, axis=1))[0]
        assert diff_rows.tolist() == list(range(99, 1000, 100))
        assert len(diff_rows) == 10
        assert np.all(shocked.values[diff_rows] < plain.values[diff_rows])

    def test_seed_bit_identical(self):
        g = baseline_network()
        model = calibrate_contagion(g, draw_edge_coefficients(g, 13), 0.3, 0.01)
        cfg = SimConfig(p=5, noise="exponential", sigma=0.01, shock_period=100, n_obs=500, seed=14)
        a = simulate_sem(model, cfg)
        b = simulate_sem(model, cfg)
        assert np.array_equal(a.values, b.values)

    def test_sample_necof_matches_target(self):
        # Refit on the generating graph and compare the implied market
        # contagion with the calibrated target.
        g = baseline_network()
        estimates = []
        for seed in range(20):
            ss = np.random.SeedSequence([43, seed])
            c_seed, s_seed = ss.spawn(2)
            base = draw_edge_coefficients(g, np.random.default_rng(c_seed))
            model = calibrate_contagion(g, base, 0.47, 0.01)
            panel = simulate_sem(model, SimConfig(p=5, sigma=0.01, n_obs=5000, seed=s_seed))
            refit = fit_sem(panel, g, L=0).primary
            estimates.append(necof(refit)["market"])
        assert abs(np.mean(estimates) - 0.47) < 0.05

    def test_recursion_matches_conditional_draws(self):
        # Iterating the structural form and drawing from the implied
        # conditional normal give the same distribution.
        from necovar.sem import conditional_distribution

        g = baseline_network()
        base = draw_edge_coefficients(g, 17)
        model = calibrate_contagion(g, base, 0.4, 1.0)
        n = 50000
        panel = simulate_sem(model, SimConfig(p=5, sigma=1.0, n_obs=n, seed=18))
        mean, cov = conditional_distribution(model, None)
        rng = np.random.default_rng(19)
        draws = mean + rng.standard_normal((n, 5)) @ np.linalg.cholesky(cov).T
        for j in range(5):
            se_m = np.sqrt(cov[j, j] / n)
            assert abs(panel.values[:, j].mean() - draws[:, j].mean()) < 5 * np.sqrt(2) * se_m
            se_v = cov[j, j] * np.sqrt(2.0 / n)
            assert abs(panel.values[:, j].var() - draws[:, j].var()) < 5 * np.sqrt(2) * se_v


class TestStudies:
    def test_run_study_shapes_and_tables(self, tmp_path):
        res = run_study("volatility", overrides={"reps": 2, "sigmas": (0.01, 0.05)}, seed=1)
        assert res.levels == (0.01, 0.05)
        assert set(res.table) == {(lv, "neco") for lv in res.levels}
        write_study_tables(res, tmp_path)
        table = (tmp_path / "study_volatility_table.csv").read_text().splitlines()
        assert table[0].startswith("level,method,mean_alpha_hat")
        assert len(table) == 1 + 2
        trace = (tmp_path / "study_volatility_trace.csv").read_text().splitlines()
        assert len(trace) == 1 + 2 * 2 * 5  # levels x reps x instruments

    def test_unknown_study_rejected(self):
        with pytest.raises(ValueError):
            run_study("nope")

    def test_jobs_do_not_change_results(self):
        a = run_study("window", overrides={"reps": 2, "trains": (60,)}, seed=3, jobs=1)
        b = run_study("window", overrides={"reps": 2, "trains": (60,)}, seed=3, jobs=2)
        assert a.table == b.table

    def test_lag_aic_study(self):
        res = lag_aic_study(l_max=2, reps=3, n_obs=400, seed=4)
        assert set(res["frequency"]) == {0, 1, 2}
        assert len(res["curves"]) == 3 and len(res["curves"][0]) == 3

    def test_timing_rows(self):
        rows = timing_study([5, 10], reps=2, seed=5)
        assert [r["p"] for r in rows] == [5, 10]
        assert all(r["mean_ms"] > 0 for r in rows)
        assert rows[0]["mean_ms"] <= rows[1]["mean_ms"] * 5  # roughly monotone

    def test_large_sparse_run_within_budget(self):
        t0 = time.perf_counter()
        rows = timing_study([50], reps=1, seed=6)
        assert time.perf_counter() - t0 < 60.0
        assert rows[0]["p"] == 50
