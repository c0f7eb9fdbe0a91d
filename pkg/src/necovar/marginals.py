"""Adjusted empirical marginals and the latent Gaussian transform.

Each instrument's marginal CDF is estimated as F(x) = (0.5 + #{x_i <= x}) / (N+1),
which is bounded away from 0 and 1 so that the Gaussian scores
z = quantile(F(x)) stay finite. The quantile function is the continuous
pseudo-inverse obtained by linear interpolation through the points
(F(x_(k)), x_(k)) and clamps to the sample range outside them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import DomainError, InvalidSample
from .panel import ReturnPanel


class LatentPanel(ReturnPanel):
    """Panel of latent Gaussian scores, same shape and labels as its source."""


@dataclass(frozen=True)
class EmpiricalMarginal:
    """Adjusted empirical distribution of one instrument's returns."""

    sorted_sample: np.ndarray
    n: int

    def cdf(self, x):
        return marginal_cdf(self, x)

    def quantile(self, u):
        return marginal_quantile(self, u)


def fit_marginal(series) -> EmpiricalMarginal:
    """Fit the adjusted empirical CDF of a sample.

    Raises
    ------
    InvalidSample
        Non-finite values or fewer than 2 observations.
    """
    x = np.asarray(series, dtype=float).ravel()
    if x.size < 2:
        raise InvalidSample(f"marginal fit needs N >= 2, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise InvalidSample("sample contains non-finite values")
    return EmpiricalMarginal(np.sort(x), int(x.size))


def marginal_cdf(m: EmpiricalMarginal, x):
    """Evaluate F(x) = (0.5 + #{x_i <= x}) / (N+1); output always in (0, 1)."""
    count = np.searchsorted(m.sorted_sample, x, side="right")
    return (0.5 + count) / (m.n + 1.0)


def marginal_quantile(m: EmpiricalMarginal, u):
    """Continuous pseudo-inverse of the adjusted empirical CDF.

    Linear interpolation through the CDF values at the order statistics,
    (k + 0.5)/(N + 1) for k = 1..N; clamps to the sample min/max outside
    that range.

    Raises
    ------
    DomainError
        If u is outside (0, 1).
    """
    u_arr = np.asarray(u, dtype=float)
    if np.any(u_arr <= 0.0) or np.any(u_arr >= 1.0):
        raise DomainError("quantile argument must lie in (0, 1)")
    positions = (np.arange(1, m.n + 1) + 0.5) / (m.n + 1.0)
    out = np.interp(u_arr, positions, m.sorted_sample)
    return float(out) if np.isscalar(u) else out


def standard_normal_cdf(x):
    """CDF of the standard normal distribution."""
    res = ndtr(np.asarray(x, dtype=float))
    return float(res) if np.isscalar(x) else res


def standard_normal_quantile(p):
    """Inverse CDF of the standard normal distribution.

    Raises
    ------
    DomainError
        If p is outside (0, 1).
    """
    p_arr = np.asarray(p, dtype=float)
    if np.any(p_arr <= 0.0) or np.any(p_arr >= 1.0):
        raise DomainError("normal quantile argument must lie in (0, 1)")
    res = ndtri(p_arr)
    return float(res) if np.isscalar(p) else res


def to_latent(panel: ReturnPanel) -> tuple[LatentPanel, list[EmpiricalMarginal]]:
    """Map every column to Gaussian scores through its own adjusted ECDF.

    Returns the latent panel and the fitted marginals, which are needed to
    map latent quantiles back to the return scale.
    """
    marginals = [fit_marginal(panel.values[:, j]) for j in range(panel.n_instruments)]
    cols = [ndtri(marginal_cdf(m, panel.values[:, j])) for j, m in enumerate(marginals)]
    return LatentPanel(panel.instruments, panel.times, np.column_stack(cols)), marginals


def returns_to_latent(values: np.ndarray, marginals: list[EmpiricalMarginal]) -> np.ndarray:
    """Transform raw return rows (shape (..., p)) with previously fitted marginals."""
    values = np.asarray(values, dtype=float)
    cols = [ndtri(marginal_cdf(m, values[..., j])) for j, m in enumerate(marginals)]
    return np.stack(cols, axis=-1)


def latent_to_returns(scores: np.ndarray, marginals: list[EmpiricalMarginal]) -> np.ndarray:
    """Map latent Gaussian scores back through the marginal quantiles."""
    scores = np.asarray(scores, dtype=float)
    cols = [marginal_quantile(m, ndtr(scores[..., j])) for j, m in enumerate(marginals)]
    return np.stack(cols, axis=-1)
