"""VaR forecast scoring and the rolling-window comparison harness.

The battery: exceedance rate and actual/expected ratio, likelihood-ratio
tests of unconditional and conditional coverage, the dynamic quantile
regression test, absolute deviation beyond the VaR on violation days, and
the asymmetric quantile loss. The rolling harness refits every method per
training window and scores one-step-ahead forecasts over the following
test window.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2

from . import engines
from .discovery import CITestConfig, discover_graph
from .errors import FitError, NecoVarError
from .marginals import returns_to_latent, to_latent
from .panel import ReturnPanel, WindowPlan
from .sem import fit_sem

__all__ = [
    "HitSeries",
    "TestOutcome",
    "BacktestReport",
    "BacktestConfig",
    "CellResult",
    "RollingResult",
    "hit_series",
    "kupiec_uc",
    "christoffersen_cc",
    "dq_test",
    "deviation_and_ql",
    "backtest_report",
    "rolling_backtest",
    "aggregate_rows",
    "write_aggregate_csv",
    "write_aggregate_json",
    "write_forecast_csv",
]

AGGREGATE_METRICS = (
    "mean_alpha_hat",
    "sd_alpha_hat",
    "lr_uc_accept",
    "lr_cc_accept",
    "dq_accept",
    "ae_mean",
    "ae_sd",
    "ad_mean",
    "ad_max",
    "compare_ql",
)


@dataclass(frozen=True)
class HitSeries:
    """Violation indicators hit_t = (x_t <= VaR_t) for one forecast series."""

    hits: np.ndarray
    alpha: float

    def __post_init__(self):
        object.__setattr__(self, "hits", np.asarray(self.hits, dtype=bool))

    @property
    def T(self) -> int:
        return self.hits.size

    @property
    def n1(self) -> int:
        return int(self.hits.sum())

    @property
    def n0(self) -> int:
        return self.T - self.n1

    @property
    def alpha_hat(self) -> float:
        return self.n1 / self.T


@dataclass(frozen=True)
class TestOutcome:
    statistic: float
    pvalue: float
    accept: bool
    flag: str | None = None


@dataclass(frozen=True)
class BacktestReport:
    alpha_hat: float
    ae: float
    lr_uc: TestOutcome
    lr_cc: TestOutcome
    dq: TestOutcome
    ad_mean: float
    ad_max: float
    ad_empty: bool
    ql: float


def hit_series(returns, var, alpha: float) -> HitSeries:
    """Mark violations; a return exactly at the VaR counts as a violation."""
    returns = np.asarray(returns, dtype=float)
    var = np.asarray(var, dtype=float)
    if returns.shape != var.shape:
        raise ValueError(f"length mismatch: {returns.shape} vs {var.shape}")
    return HitSeries(returns <= var, alpha)


def _xlogy(n, p):
    # n * log(p) with the 0 * log(0) = 0 convention.
    return 0.0 if n == 0 else n * np.log(p)


def kupiec_uc(h: HitSeries) -> TestOutcome:
    """Likelihood-ratio test of unconditional coverage against chi2(1)."""
    if h.T < 1:
        raise ValueError("empty hit series")
    a, ah = h.alpha, h.alpha_hat
    ll_null = _xlogy(h.n0, 1.0 - a) + _xlogy(h.n1, a)
    ll_alt = _xlogy(h.n0, 1.0 - ah) + _xlogy(h.n1, ah)
    stat = max(-2.0 * (ll_null - ll_alt), 0.0)
    pvalue = float(chi2.sf(stat, 1))
    return TestOutcome(float(stat), pvalue, pvalue > 0.05)


def christoffersen_cc(h: HitSeries) -> TestOutcome:
    """Conditional-coverage test: coverage plus first-order independence.

    The independence part compares the i.i.d. likelihood with a first-order
    Markov alternative built from the transition counts; the sum is
    referred to chi2(2). Degenerate transition rows contribute zero.
    """
    if h.T < 2:
        raise ValueError("conditional coverage needs T >= 2")
    x = h.hits.astype(int)
    prev, cur = x[:-1], x[1:]
    n00 = int(np.sum((prev == 0) & (cur == 0)))
    n01 = int(np.sum((prev == 0) & (cur == 1)))
    n10 = int(np.sum((prev == 1) & (cur == 0)))
    n11 = int(np.sum((prev == 1) & (cur == 1)))
    pi = (n01 + n11) / max(n00 + n01 + n10 + n11, 1)
    ll_null = _xlogy(n00 + n10, 1.0 - pi) + _xlogy(n01 + n11, pi)
    ll_alt = 0.0
    if n00 + n01 > 0:
        pi0 = n01 / (n00 + n01)
        ll_alt += _xlogy(n00, 1.0 - pi0) + _xlogy(n01, pi0)
    if n10 + n11 > 0:
        pi1 = n11 / (n10 + n11)
        ll_alt += _xlogy(n10, 1.0 - pi1) + _xlogy(n11, pi1)
    lr_ind = max(-2.0 * (ll_null - ll_alt), 0.0)
    stat = kupiec_uc(h).statistic + lr_ind
    pvalue = float(chi2.sf(stat, 2))
    return TestOutcome(float(stat), pvalue, pvalue > 0.05)


def dq_test(h: HitSeries, var, n_lags: int = 4) -> TestOutcome:
    """Dynamic quantile test: violations must be unpredictable.

    Regresses the centered hit indicator on an intercept, the previous
    ``n_lags`` hits and the current VaR level; the quadratic form of the
    OLS coefficients is referred to chi-square with one degree of freedom
    per independent regressor (n_lags + 2 when the design has full rank).
    An all-or-nothing hit series is reported as accept with a Degenerate
    flag rather than a failure.
    """
    var = np.asarray(var, dtype=float)
    T = h.T
    if T <= n_lags + 2:
        raise ValueError(f"DQ test needs T > n_lags + 2, got T={T}")
    if h.n1 == 0 or h.n1 == T:
        return TestOutcome(0.0, 1.0, True, "degenerate")
    x = h.hits.astype(float)
    y = x[n_lags:] - h.alpha
    cols = [np.ones(T - n_lags)]
    for lag in range(1, n_lags + 1):
        cols.append(x[n_lags - lag : T - lag])
    cols.append(var[n_lags:])
    X = np.column_stack(cols)
    keep = _independent_columns(X)
    flag = None if len(keep) == X.shape[1] else "reduced_rank"
    X = X[:, keep]
    beta, _, _, _ = np.linalg.lstsq(X, y, rcond=None)
    stat = float(beta @ (X.T @ X) @ beta) / (h.alpha * (1.0 - h.alpha))
    dof = X.shape[1]
    pvalue = float(chi2.sf(stat, dof))
    return TestOutcome(stat, pvalue, pvalue > 0.05, flag)


def _independent_columns(X):
    keep: list[int] = []
    for j in range(X.shape[1]):
        trial = keep + [j]
        if np.linalg.matrix_rank(X[:, trial]) == len(trial):
            keep.append(j)
    return keep


@dataclass(frozen=True)
class DeviationSummary:
    ad_mean: float
    ad_max: float
    ql: float
    empty: bool


def deviation_and_ql(returns, var, alpha: float) -> DeviationSummary:
    """Mean/max loss beyond the VaR on violation days plus average quantile loss.

    With no violations the deviations are reported as zero with the empty
    flag set; the quantile loss is always defined.
    """
    returns = np.asarray(returns, dtype=float)
    var = np.asarray(var, dtype=float)
    if returns.shape != var.shape:
        raise ValueError("length mismatch")
    hits = returns <= var
    diff = returns - var
    ql = float(np.mean((alpha - hits.astype(float)) * diff))
    if not hits.any():
        return DeviationSummary(0.0, 0.0, ql, True)
    exceed = np.abs(diff[hits])
    return DeviationSummary(float(exceed.mean()), float(exceed.max()), ql, False)


def backtest_report(returns, var, alpha: float, dq_lags: int = 4) -> BacktestReport:
    """Run the full battery on one forecast series."""
    h = hit_series(returns, var, alpha)
    dev = deviation_and_ql(returns, var, alpha)
    return BacktestReport(
        alpha_hat=h.alpha_hat,
        ae=h.alpha_hat / alpha,
        lr_uc=kupiec_uc(h),
        lr_cc=christoffersen_cc(h),
        dq=dq_test(h, var, dq_lags),
        ad_mean=dev.ad_mean,
        ad_max=dev.ad_max,
        ad_empty=dev.empty,
        ql=dev.ql,
    )


@dataclass(frozen=True)
class BacktestConfig:
    """Engine and discovery settings shared across a rolling comparison."""

    alpha_ci: float = 0.01
    max_cond_size: int | None = None
    lags: int = 1
    boot_reps: int = 1000
    mc_paths: int = 10_000
    dq_lags: int = 4
    unit_noise: bool = False
    max_models: int = 64


@dataclass(frozen=True)
class CellResult:
    method: str
    window_index: int
    instrument: str
    report: BacktestReport
    fallback: bool = False


@dataclass(frozen=True)
class RollingResult:
    cells: tuple[CellResult, ...]
    aggregate: dict
    failures: tuple = ()
    forecasts: tuple = ()  # (time, instrument, method, alpha, var, realized, hit)


def rolling_backtest(
    panel: ReturnPanel,
    plan: WindowPlan,
    methods,
    alpha: float,
    config: BacktestConfig = BacktestConfig(),
    seed: int = 0,
    keep_forecasts: bool = True,
) -> RollingResult:
    """Fit each method per training window and score the test window.

    Model parameters come from the training slice only. Forecasts for each
    test day are one-step-ahead: the contagion engine conditions on the
    realized lag history mapped through the training marginals, and the
    GARCH engines filter their volatility forward through the realized
    returns with fixed parameters. The variance-covariance and historical
    engines have no history input, so their forecasts are constant within a
    window. Noise-driven engines draw their quantile once per window from a
    seed derived from (seed, window, method, instrument).

    Per-window fit failures skip that window for the failing method only;
    a GARCH fit failure falls back to the variance-covariance VaR for that
    instrument and is recorded as a fallback.
    """
    methods = list(methods)
    for m in methods:
        if m not in engines.METHODS:
            raise ValueError(f"unknown method {m!r}; choose from {engines.METHODS}")
    p = panel.n_instruments
    cells: list[CellResult] = []
    failures: list = []
    forecasts: list = []

    for w_idx, ((tr0, tr1), (te0, te1)) in enumerate(plan.windows):
        train = panel.window(tr0, tr1)
        realized = panel.values[te0:te1]
        for method in methods:
            m_idx = engines.METHODS.index(method)
            try:
                var_matrix, fallbacks = _forecast_window(
                    panel, train, (tr0, tr1, te0, te1), method, alpha, config, seed, w_idx, m_idx
                )
            except NecoVarError as exc:
                failures.append((method, w_idx, f"{type(exc).__name__}: {exc}"))
                continue
            for i in range(p):
                rep = backtest_report(realized[:, i], var_matrix[:, i], alpha, config.dq_lags)
                cells.append(
                    CellResult(method, w_idx, panel.instruments[i], rep, fallback=i in fallbacks)
                )
            if keep_forecasts:
                for t in range(te1 - te0):
                    for i in range(p):
                        x = float(realized[t, i])
                        v = float(var_matrix[t, i])
                        forecasts.append(
                            (panel.times[te0 + t], panel.instruments[i], method, alpha, v, x, x <= v)
                        )
    aggregate = aggregate_rows(cells, methods)
    return RollingResult(tuple(cells), aggregate, tuple(failures), tuple(forecasts))


def _forecast_window(panel, train, span, method, alpha, config, seed, w_idx, m_idx):
    """VaR matrix (test_length, p) for one method over one window."""
    tr0, tr1, te0, te1 = span
    test_len = te1 - te0
    p = panel.n_instruments
    fallbacks: set[int] = set()

    if method == "varcovar":
        row = engines.varcovar_var(train, alpha).values
        return np.tile(row, (test_len, 1)), fallbacks

    if method == "hist":
        cell_seed = _cell_seed(seed, w_idx, m_idx, 0)
        row = engines.hist_var(train, alpha, config.boot_reps, cell_seed).values
        return np.tile(row, (test_len, 1)), fallbacks

    if method == "neco":
        latent, marginals = to_latent(train)
        graph = discover_graph(latent, CITestConfig(config.alpha_ci, config.max_cond_size))
        ensemble = fit_sem(latent, graph, config.lags, config.max_models)
        out = np.empty((test_len, p))
        for t in range(test_len):
            tau = te0 + t
            if config.lags > 0:
                hist = returns_to_latent(panel.values[tau - config.lags : tau], marginals)
            else:
                hist = None
            out[t] = engines.neco_var_general(
                ensemble, marginals, hist, alpha, unit_noise=config.unit_noise
            ).values
        return out, fallbacks

    # garch / fhs share the per-instrument GARCH fit. The per-day VaR scales
    # the simulated quantile by the filtered one-step volatility, which is
    # exactly the quantile of mu + sigma_next * resample for sigma_next > 0.
    out = np.empty((test_len, p))
    for i in range(p):
        cell_seed = _cell_seed(seed, w_idx, m_idx, i + 1)
        rng = np.random.default_rng(cell_seed)
        series = train.values[:, i]
        try:
            fit = engines.fit_garch11(series)
        except FitError:
            fallbacks.add(i)
            vc = engines.varcovar_var(train, alpha).values[i]
            out[:, i] = vc
            continue
        sig2 = engines.garch_sigma2_path(fit, panel.values[tr0:te1, i])
        sig_next = np.sqrt(sig2[te0 - tr0 : te1 - tr0])
        if method == "garch":
            q = float(np.quantile(rng.standard_normal(config.mc_paths), alpha))
        else:
            resid = (series - fit.mu) / fit.sigma_t
            idx = rng.integers(0, resid.size, size=resid.size * config.boot_reps)
            q = float(np.quantile(resid[idx], alpha))
        out[:, i] = fit.mu + sig_next * q
    return out, fallbacks


def _cell_seed(seed, window_idx, method_idx, instrument_idx) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        seed = int(seed.generate_state(1, dtype=np.uint64)[0])
    return np.random.SeedSequence([int(seed), int(window_idx), int(method_idx), int(instrument_idx)])


def aggregate_rows(cells, methods) -> dict:
    """Aggregate per-cell reports into one metric column per method.

    Deviations are averaged over cells that had violations; compare_ql is
    each method's mean quantile loss over the contagion engine's, when run.
    """
    by_method = {m: [c.report for c in cells if c.method == m] for m in methods}
    mean_ql = {
        m: float(np.mean([r.ql for r in reps])) if reps else np.nan
        for m, reps in by_method.items()
    }
    base_ql = mean_ql.get("neco", np.nan)
    out = {}
    for m, reps in by_method.items():
        if not reps:
            out[m] = {k: np.nan for k in AGGREGATE_METRICS}
            continue
        ah = np.array([r.alpha_hat for r in reps])
        ae = np.array([r.ae for r in reps])
        ad_cells = [r for r in reps if not r.ad_empty]
        out[m] = {
            "mean_alpha_hat": float(ah.mean()),
            "sd_alpha_hat": float(ah.std(ddof=1)) if ah.size > 1 else 0.0,
            "lr_uc_accept": float(np.mean([r.lr_uc.accept for r in reps])),
            "lr_cc_accept": float(np.mean([r.lr_cc.accept for r in reps])),
            "dq_accept": float(np.mean([r.dq.accept for r in reps])),
            "ae_mean": float(ae.mean()),
            "ae_sd": float(ae.std(ddof=1)) if ae.size > 1 else 0.0,
            "ad_mean": float(np.mean([r.ad_mean for r in ad_cells])) if ad_cells else 0.0,
            "ad_max": float(np.max([r.ad_max for r in ad_cells])) if ad_cells else 0.0,
            "compare_ql": float(mean_ql[m] / base_ql) if np.isfinite(base_ql) and base_ql != 0 else np.nan,
        }
    return out


def write_aggregate_csv(aggregate: dict, methods, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", *methods])
        for metric in AGGREGATE_METRICS:
            writer.writerow([metric, *[repr(float(aggregate[m][metric])) for m in methods]])


def write_aggregate_json(aggregate: dict, methods, path) -> None:
    payload = {
        m: {
            k: (float(aggregate[m][k]) if np.isfinite(aggregate[m][k]) else None)
            for k in AGGREGATE_METRICS
        }
        for m in methods
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)


def write_forecast_csv(result: RollingResult, path) -> None:
    """Tidy per-day rows: time, instrument, method, alpha, var, realized, hit."""
    from .panel import _format_time

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "instrument", "method", "alpha", "var", "realized", "hit"])
        for t, instr, method, alpha, var, realized, hit in result.forecasts:
            writer.writerow(
                [_format_time(t), instr, method, repr(float(alpha)), repr(var), repr(realized), int(hit)]
            )
