"""One-step-ahead Value-at-Risk engines.

VaR is reported as a (typically negative) return quantile: the realized
return violates the forecast when it is less than or equal to it. The
network-contagion engines read the conditional distribution off a fitted
SEM; the benchmarks are the variance-covariance rule, bootstrapped
historical simulation, Gaussian GARCH(1,1) Monte Carlo and filtered
historical simulation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.signal import lfilter
from scipy.special import ndtr, ndtri

from .errors import DegenerateSeries, FitError, InsufficientData, InvalidInit
from .marginals import EmpiricalMarginal, marginal_quantile
from .panel import ReturnPanel
from .sem import ModelEnsemble, SemModel, conditional_distribution

__all__ = [
    "VaRForecast",
    "GarchFit",
    "neco_var_gaussian",
    "neco_var_general",
    "varcovar_var",
    "hist_var",
    "fit_garch11",
    "garch_var",
    "fhs_var",
    "garch_sigma2_path",
]

METHODS = ("neco", "varcovar", "hist", "garch", "fhs")


@dataclass(frozen=True)
class VaRForecast:
    """Per-instrument VaR at one target level.

    ``low``/``high`` carry the per-instrument range across an ensemble of
    models when edge directions were ambiguous; point engines leave them None.
    """

    alpha: float
    values: np.ndarray
    method: str
    t_index: int = -1
    low: np.ndarray | None = None
    high: np.ndarray | None = None

    def __post_init__(self):
        values = np.atleast_1d(np.asarray(self.values, dtype=float))
        object.__setattr__(self, "values", values)
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0,1), got {self.alpha}")
        if not np.all(np.isfinite(values)):
            raise ValueError("VaR values must be finite")


@dataclass(frozen=True)
class GarchFit:
    """GARCH(1,1) parameters with the fitted and one-step forecast volatility."""

    omega: float
    a1: float
    b1: float
    mu: float
    sigma_t: np.ndarray
    sigma_next: float

    def __post_init__(self):
        if not (self.omega > 0.0 and self.a1 >= 0.0 and self.b1 >= 0.0 and self.a1 + self.b1 < 1.0):
            raise InvalidInit(
                f"GARCH constraints violated: omega={self.omega}, a1={self.a1}, b1={self.b1}"
            )


def neco_var_gaussian(model: SemModel, history, alpha: float) -> VaRForecast:
    """Analytic VaR from the conditional normal of a SEM fitted on raw returns.

    Per instrument: conditional mean minus z_alpha times the conditional
    standard deviation, with z_alpha the upper-tail normal quantile, so the
    5 percent VaR sits below the mean.
    """
    mean, cov = conditional_distribution(model, history)
    z = ndtri(1.0 - alpha)
    values = mean - z * np.sqrt(np.diag(cov))
    return VaRForecast(alpha, values, "neco-gaussian")


def neco_var_general(
    ensemble: ModelEnsemble,
    marginals: list[EmpiricalMarginal],
    latent_history,
    alpha: float,
    unit_noise: bool = False,
) -> VaRForecast:
    """Copula VaR: latent conditional quantile mapped through the marginals.

    The latent quantile is computed per ensemble member and mapped back to
    the return scale with each instrument's empirical quantile function; the
    headline value per instrument is the most conservative (lowest) across
    members, with the full range attached.
    """
    z = ndtri(1.0 - alpha)
    rows = []
    for model in ensemble.models:
        mean, cov = conditional_distribution(model, latent_history, unit_noise=unit_noise)
        q_latent = mean - z * np.sqrt(np.diag(cov))
        u = ndtr(q_latent)
        rows.append([marginal_quantile(m, u[i]) for i, m in enumerate(marginals)])
    stacked = np.asarray(rows)
    low = stacked.min(axis=0)
    high = stacked.max(axis=0)
    return VaRForecast(alpha, low, "neco", low=low, high=high)


def varcovar_var(window: ReturnPanel, alpha: float) -> VaRForecast:
    """Variance-covariance VaR: sample mean minus z_alpha times sample stdev."""
    values = window.values
    std = values.std(axis=0, ddof=1)
    if np.any(std == 0.0):
        label = window.instruments[int(np.argmax(std == 0.0))]
        raise DegenerateSeries(f"zero variance in column {label!r}")
    z = ndtri(1.0 - alpha)
    return VaRForecast(alpha, values.mean(axis=0) - z * std, "varcovar")


def hist_var(window: ReturnPanel, alpha: float, boot_reps: int = 1000, seed: int = 0) -> VaRForecast:
    """Historical simulation: alpha-quantile of pooled bootstrap resamples.

    Resamples whole rows so cross-sectional dependence is preserved;
    deterministic for a fixed seed.
    """
    n = window.n_obs
    if n < 20:
        raise InsufficientData(f"historical simulation needs N >= 20, got {n}")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, n, size=n * boot_reps)
    pooled = window.values[idx, :]
    return VaRForecast(alpha, np.quantile(pooled, alpha, axis=0), "hist")


def fit_garch11(series, init: tuple[float, float, float] | None = None) -> GarchFit:
    """Gaussian quasi-MLE of a constant-mean GARCH(1,1).

    Multi-start Nelder-Mead on unconstrained transformed parameters
    (log omega and a softmax pair keeping a1, b1 >= 0 with a1 + b1 < 1);
    a start converges when the simplex diameter falls below 1e-8 and the
    best converged start wins.

    Raises
    ------
    InsufficientData
        Fewer than 50 observations.
    InvalidInit
        Starting values violating the stationarity constraints.
    FitError
        No start converged.
    """
    x = np.asarray(series, dtype=float).ravel()
    n = x.size
    if n < 50:
        raise InsufficientData(f"GARCH fit needs N >= 50, got {n}")
    s2 = float(x.var())
    if s2 == 0.0:
        raise DegenerateSeries("constant series has no volatility to model")

    if init is not None:
        omega0, a10, b10 = init
        if not (omega0 > 0.0 and a10 >= 0.0 and b10 >= 0.0 and a10 + b10 < 1.0):
            raise InvalidInit(f"init violates constraints: {init}")
        starts = [(float(x.mean()), omega0, max(a10, 1e-6), max(b10, 1e-6))]
    else:
        starts = [
            (float(x.mean()), s2 * (1.0 - a - b), a, b)
            for a, b in ((0.05, 0.90), (0.10, 0.80), (0.02, 0.60))
        ]

    def unpack(theta):
        mu = theta[0]
        omega = np.exp(np.clip(theta[1], -80.0, 40.0))
        e1 = np.exp(np.clip(theta[2], -40.0, 40.0))
        e2 = np.exp(np.clip(theta[3], -40.0, 40.0))
        denom = 1.0 + e1 + e2
        return mu, omega, e1 / denom, e2 / denom

    def negloglik(theta):
        mu, omega, a1, b1 = unpack(theta)
        sig2 = _sigma2_recursion(x, mu, omega, a1, b1, s2)
        u = (x - mu) ** 2
        return 0.5 * float(np.sum(np.log(2.0 * np.pi * sig2) + u / sig2))

    best = None
    for mu0, omega0, a10, b10 in starts:
        d = 1.0 - a10 - b10
        theta0 = np.array([mu0, np.log(omega0), np.log(a10 / d), np.log(b10 / d)])
        res = minimize(
            negloglik,
            theta0,
            method="Nelder-Mead",
            options={"xatol": 1e-8, "fatol": 1e-10, "maxiter": 5000, "maxfev": 10000},
        )
        if res.success and np.isfinite(res.fun):
            if best is None or res.fun < best.fun:
                best = res
    if best is None:
        raise FitError("GARCH(1,1) likelihood maximisation did not converge from any start")

    mu, omega, a1, b1 = unpack(best.x)
    sig2 = _sigma2_recursion(x, mu, omega, a1, b1, s2)
    sigma_next = float(np.sqrt(omega + a1 * (x[-1] - mu) ** 2 + b1 * sig2[-1]))
    return GarchFit(float(omega), float(a1), float(b1), float(mu), np.sqrt(sig2), sigma_next)


def garch_var(fit: GarchFit, alpha: float, mc_paths: int = 10_000, seed: int = 0) -> float:
    """Monte Carlo VaR: alpha-quantile of simulated one-step returns."""
    rng = np.random.default_rng(seed)
    sims = fit.mu + fit.sigma_next * rng.standard_normal(mc_paths)
    return float(np.quantile(sims, alpha))


def fhs_var(series, fit: GarchFit, alpha: float, boot_reps: int = 1000, seed: int = 0) -> float:
    """Filtered historical simulation VaR.

    Standardizes the returns by the fitted volatility path, bootstraps the
    standardized residuals and rescales them with the one-step forecast
    volatility before taking the alpha-quantile.
    """
    x = np.asarray(series, dtype=float).ravel()
    resid = (x - fit.mu) / fit.sigma_t
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, resid.size, size=resid.size * boot_reps)
    pooled = fit.mu + fit.sigma_next * resid[idx]
    return float(np.quantile(pooled, alpha))


def garch_sigma2_path(fit: GarchFit, series) -> np.ndarray:
    """Conditional variance path over ``series`` under the fitted parameters.

    Entry t is the variance for observation t given information through
    t - 1; the final extra entry is the one-step forecast past the series.
    Starts from the fit's initial variance so extending the training series
    reproduces the in-sample path.
    """
    x = np.asarray(series, dtype=float).ravel()
    s0 = float(fit.sigma_t[0] ** 2)
    sig2 = _sigma2_recursion(x, fit.mu, fit.omega, fit.a1, fit.b1, s0)
    nxt = fit.omega + fit.a1 * (x[-1] - fit.mu) ** 2 + fit.b1 * sig2[-1]
    return np.append(sig2, nxt)


def _sigma2_recursion(x, mu, omega, a1, b1, s0):
    # sigma2[0] = s0; sigma2[t] = omega + a1*(x[t-1]-mu)^2 + b1*sigma2[t-1],
    # evaluated with a linear filter so the loop runs in C.
    u = (x - mu) ** 2
    drive = omega + a1 * u[:-1]
    tail, _ = lfilter([1.0], [1.0, -b1], drive, zi=[b1 * s0])
    return np.concatenate(([s0], tail))
