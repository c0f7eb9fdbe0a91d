import numpy as np
import pytest
from scipy.stats import chi2

from necovar.backtest import (
    BacktestConfig,
    HitSeries,
    backtest_report,
    christoffersen_cc,
    deviation_and_ql,
    dq_test,
    hit_series,
    kupiec_uc,
    rolling_backtest,
    write_aggregate_csv,
    write_forecast_csv,
)
from necovar.panel import make_windows
from conftest import make_panel


def hits_from_counts(n1, T, alpha=0.05, pattern="spread"):
    hits = np.zeros(T, dtype=bool)
    if pattern == "spread":
        hits[np.linspace(0, T - 1, n1).astype(int)] = True
    else:
        hits[:n1] = True
    return HitSeries(hits, alpha)


class TestHitSeries:
    def test_no_violations(self):
        h = hit_series(np.ones(50), -np.ones(50), 0.05)
        assert h.n1 == 0 and h.alpha_hat == 0.0

    def test_rate_and_ae(self):
        h = hits_from_counts(5, 100)
        assert h.alpha_hat == pytest.approx(0.05)
        assert h.alpha_hat / h.alpha == pytest.approx(1.0)

    def test_equality_counts_as_violation(self):
        h = hit_series(np.array([0.0, 1.0]), np.array([0.0, 0.0]), 0.05)
        assert h.hits.tolist() == [True, False]

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            hit_series(np.ones(3), np.ones(4), 0.05)


class TestKupiec:
    def test_exact_rate_gives_zero(self):
        out = kupiec_uc(hits_from_counts(5, 100))
        assert out.statistic == pytest.approx(0.0, abs=1e-12)
        assert out.pvalue == pytest.approx(1.0)

    def test_frozen_direct_evaluation(self):
        # -2 ln[(0.95^90 0.05^10)/(0.90^90 0.10^10)] computed directly
        # before the build.
        out = kupiec_uc(hits_from_counts(10, 100))
        assert out.statistic == pytest.approx(4.130843782549292, rel=1e-12)

    def test_zero_violation_limit_convention(self):
        out = kupiec_uc(hits_from_counts(0, 100))
        assert np.isfinite(out.statistic) and out.statistic > 0

    def test_monte_carlo_size(self):
        rng = np.random.default_rng(17)
        rejections = 0
        for _ in range(1000):
            h = HitSeries(rng.random(250) < 0.05, 0.05)
            rejections += not kupiec_uc(h).accept
        assert 0.03 <= rejections / 1000 <= 0.07

    def test_permutation_invariant(self, rng):
        hits = rng.random(200) < 0.08
        a = kupiec_uc(HitSeries(hits, 0.05)).statistic
        b = kupiec_uc(HitSeries(rng.permutation(hits), 0.05)).statistic
        assert a == pytest.approx(b, rel=1e-12)


class TestChristoffersen:
    def test_alternating_hits_rejected(self):
        hits = np.zeros(200, dtype=bool)
        hits[::2] = True
        out = christoffersen_cc(HitSeries(hits, 0.5))
        assert not out.accept and out.statistic > chi2.ppf(0.95, 2)

    def test_monte_carlo_size(self):
        rng = np.random.default_rng(19)
        rejections = 0
        for _ in range(1000):
            h = HitSeries(rng.random(250) < 0.05, 0.05)
            rejections += not christoffersen_cc(h).accept
        assert 0.03 <= rejections / 1000 <= 0.07

    def test_zero_violations_reduce_to_uc(self):
        h = hits_from_counts(0, 120)
        assert christoffersen_cc(h).statistic == pytest.approx(kupiec_uc(h).statistic)

    def test_clustering_sensitivity_vs_permutation(self):
        # A block of consecutive violations trips the independence part; the
        # same count spread out does not.
        clustered = hits_from_counts(12, 250, pattern="block")
        spread = hits_from_counts(12, 250, pattern="spread")
        assert not christoffersen_cc(clustered).accept
        assert christoffersen_cc(spread).accept


class TestDQ:
    def test_monte_carlo_size_constant_var(self):
        rng = np.random.default_rng(23)
        var = np.full(500, -1.6)
        rejections = 0
        for _ in range(1000):
            h = HitSeries(rng.random(500) < 0.05, 0.05)
            rejections += not dq_test(h, var, n_lags=4).accept
        assert 0.025 <= rejections / 1000 <= 0.075

    def test_power_on_clustered_hits(self):
        rng = np.random.default_rng(29)
        var = np.full(500, -1.6)
        rejections = 0
        for _ in range(200):
            hits = np.zeros(500, dtype=bool)
            hits[:50] = rng.random(50) < 0.5
            out = dq_test(HitSeries(hits, 0.05), var, n_lags=4)
            rejections += not out.accept
        assert rejections / 200 > 0.9

    def test_zero_violations_degenerate(self):
        out = dq_test(hits_from_counts(0, 100), np.full(100, -1.0), 4)
        assert out.accept and out.flag == "degenerate"

    def test_statistics_nonnegative_pvalues_valid(self, rng):
        for _ in range(50):
            h = HitSeries(rng.random(300) < 0.05, 0.05)
            var = rng.normal(-1.6, 0.1, 300)
            for out in (kupiec_uc(h), christoffersen_cc(h), dq_test(h, var)):
                assert out.statistic >= 0.0
                assert 0.0 <= out.pvalue <= 1.0


class TestChiSquareTail:
    def test_reference_values(self):
        # Tabulated from the series expansion of the regularized incomplete
        # gamma function before the build.
        refs = {
            (1, 0.5): 0.479500122186953,
            (1, 3.84): 0.050043521248705,
            (1, 5.99): 0.014387202374007,
            (2, 0.5): 0.778800783071405,
            (2, 3.84): 0.146606962130350,
            (2, 5.99): 0.050036627086586,
            (6, 0.5): 0.997838503310237,
            (6, 3.84): 0.698318282019284,
            (6, 5.99): 0.424311223152090,
        }
        for (df, x), want in refs.items():
            assert chi2.sf(x, df) == pytest.approx(want, abs=1e-6)


class TestDeviationAndQL:
    def test_no_violation_case(self):
        returns = np.full(20, 0.1)
        var = np.zeros(20)
        out = deviation_and_ql(returns, var, 0.05)
        assert out.empty and out.ad_mean == 0.0 and out.ad_max == 0.0
        assert out.ql == pytest.approx(0.005)

    def test_single_violation_case(self):
        out = deviation_and_ql(np.array([-0.02]), np.array([0.0]), 0.05)
        assert out.ql == pytest.approx(0.019)
        assert out.ad_mean == pytest.approx(0.02) and out.ad_max == pytest.approx(0.02)

    def test_tracking_method_beats_constant(self, rng):
        # Heteroskedastic returns: the VaR that follows the true conditional
        # quantile has lower quantile loss than the best constant VaR.
        T = 4000
        sigma = np.where(np.arange(T) % 2 == 0, 0.005, 0.03)
        x = rng.standard_normal(T) * sigma
        tracking = -1.6449 * sigma
        constant = np.full(T, np.quantile(x, 0.05))
        ql_track = deviation_and_ql(x, tracking, 0.05).ql
        ql_const = deviation_and_ql(x, constant, 0.05).ql
        assert ql_track < ql_const


class TestRolling:
    @staticmethod
    def _small_panel(seed=0, n=170, p=2):
        rng = np.random.default_rng(seed)
        return make_panel(rng.normal(0, 0.01, size=(n, p)))

    def test_single_window_single_method(self):
        panel = self._small_panel()
        plan = make_windows(panel.n_obs, 120, 50, 50)
        res = rolling_backtest(panel, plan, ["varcovar"], 0.05, BacktestConfig(), seed=1)
        assert len(res.cells) == panel.n_instruments
        assert not res.failures

    def test_compare_ql_self_normalisation(self):
        panel = self._small_panel(seed=3)
        plan = make_windows(panel.n_obs, 120, 50, 50)
        res = rolling_backtest(
            panel, plan, ["neco", "varcovar"], 0.05, BacktestConfig(lags=0, boot_reps=50), seed=2
        )
        assert res.aggregate["neco"]["compare_ql"] == pytest.approx(1.0)

    def test_deterministic_outputs(self, tmp_path):
        panel = self._small_panel(seed=5)
        plan = make_windows(panel.n_obs, 120, 50, 50)
        cfg = BacktestConfig(lags=1, boot_reps=100, mc_paths=500)
        out = []
        for run in range(2):
            res = rolling_backtest(panel, plan, ["neco", "hist", "garch"], 0.05, cfg, seed=11)
            table = tmp_path / f"t{run}.csv"
            fc = tmp_path / f"f{run}.csv"
            write_aggregate_csv(res.aggregate, ["neco", "hist", "garch"], table)
            write_forecast_csv(res, fc)
            out.append((table.read_bytes(), fc.read_bytes()))
        assert out[0] == out[1]

    def test_unknown_method_rejected(self):
        panel = self._small_panel()
        plan = make_windows(panel.n_obs, 120, 50, 50)
        with pytest.raises(ValueError):
            rolling_backtest(panel, plan, ["nope"], 0.05)

    def test_forecast_rows_schema(self):
        panel = self._small_panel(seed=7)
        plan = make_windows(panel.n_obs, 120, 50, 50)
        res = rolling_backtest(panel, plan, ["varcovar"], 0.05, seed=3)
        assert len(res.forecasts) == 50 * panel.n_instruments
        _, instr, method, alpha, var, realized, hit = res.forecasts[0]
        assert method == "varcovar" and alpha == 0.05
        assert hit == (realized <= var)

    def test_failed_window_skipped_for_method_only(self):
        # Training slice too short for skeleton search: the contagion
        # engine fails, the benchmark still reports.
        rng = np.random.default_rng(13)
        panel = make_panel(rng.normal(0, 0.01, size=(40, 5)))
        plan = make_windows(40, 8, 30, 30)
        res = rolling_backtest(panel, plan, ["neco", "varcovar"], 0.05, BacktestConfig(lags=0), seed=4)
        assert res.failures and res.failures[0][0] == "neco"
        assert {c.method for c in res.cells} == {"varcovar"}

    def test_full_battery_report(self):
        rep = backtest_report(
            np.random.default_rng(15).normal(0, 0.01, 200), np.full(200, -0.016), 0.05
        )
        assert rep.ae == pytest.approx(rep.alpha_hat / 0.05)
        assert 0.0 <= rep.lr_uc.pvalue <= 1.0
