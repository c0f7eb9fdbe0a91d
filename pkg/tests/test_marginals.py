import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from necovar.errors import DomainError, InvalidSample
from necovar.marginals import (
    fit_marginal,
    latent_to_returns,
    marginal_cdf,
    marginal_quantile,
    standard_normal_cdf,
    standard_normal_quantile,
    to_latent,
)

from conftest import make_panel

finite_samples = st.lists(
    st.floats(min_value=-1e6, max_value=1e6, allow_nan=False), min_size=2, max_size=60
)


class TestMarginal:
    def test_adjusted_cdf_values(self):
        m = fit_marginal([1.0, 2.0, 3.0])
        assert marginal_cdf(m, 2.0) == pytest.approx(0.625)
        assert marginal_cdf(m, 0.0) == pytest.approx(0.5 / 4)
        m9 = fit_marginal(np.arange(9.0))
        assert marginal_cdf(m9, 8.0) == pytest.approx(9.5 / 10)

    def test_cdf_below_min_positive(self):
        m = fit_marginal([5.0, 6.0])
        assert 0.0 < marginal_cdf(m, -100.0) == pytest.approx(0.5 / 3)

    def test_quantile_inverts_cdf_example(self):
        m = fit_marginal([1.0, 2.0, 3.0])
        assert marginal_quantile(m, 0.625) == pytest.approx(2.0)

    def test_quantile_clamps(self):
        m = fit_marginal([1.0, 4.0, 7.0])
        assert marginal_quantile(m, 0.999) == pytest.approx(7.0)
        assert marginal_quantile(m, 0.001) == pytest.approx(1.0)

    def test_quantile_domain(self):
        m = fit_marginal([1.0, 2.0])
        for bad in (0.0, 1.0, -0.2, 1.7):
            with pytest.raises(DomainError):
                marginal_quantile(m, bad)

    def test_invalid_samples(self):
        with pytest.raises(InvalidSample):
            fit_marginal([1.0])
        with pytest.raises(InvalidSample):
            fit_marginal([1.0, np.nan])

    @settings(max_examples=300, deadline=None)
    @given(finite_samples)
    def test_roundtrip_at_sample_points(self, sample):
        m = fit_marginal(sample)
        for x in sample:
            u = marginal_cdf(m, x)
            assert marginal_quantile(m, u) == pytest.approx(x, rel=1e-12, abs=1e-9)


class TestNormal:
    def test_spot_values(self):
        assert standard_normal_cdf(0.0) == pytest.approx(0.5)
        assert standard_normal_cdf(1.96) == pytest.approx(0.9750, abs=1e-4)
        assert standard_normal_quantile(0.05) == pytest.approx(-1.6449, abs=1e-4)

    def test_cdf_accuracy_against_erfc(self):
        # libm's erfc is an independent double-precision route to Phi.
        for x in np.linspace(-8, 8, 1601):
            ref = 0.5 * math.erfc(-x / math.sqrt(2.0))
            assert abs(standard_normal_cdf(float(x)) - ref) <= 1e-9

    def test_quantile_roundtrip(self):
        for x in np.linspace(-6, 6, 241):
            assert standard_normal_quantile(standard_normal_cdf(float(x))) == pytest.approx(
                float(x), abs=1e-7
            )

    def test_quantile_domain(self):
        for bad in (0.0, 1.0, -1.0, 2.0):
            with pytest.raises(DomainError):
                standard_normal_quantile(bad)


class TestLatent:
    def test_three_point_column_scores(self):
        # F at the order statistics is (k + 0.5) / (N + 1).
        panel = make_panel(np.array([[3.0], [1.0], [2.0]]))
        latent, _ = to_latent(panel)
        expected = standard_normal_quantile(np.array([3.5 / 4, 1.5 / 4, 2.5 / 4]))
        np.testing.assert_allclose(latent.values[:, 0], expected, rtol=1e-12)

    def test_rank_preservation_large_gaussian(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal((10**5, 1))
        latent, _ = to_latent(make_panel(x))
        assert np.corrcoef(x[:, 0], latent.values[:, 0])[0, 1] >= 0.999

    @settings(max_examples=200, deadline=None)
    @given(finite_samples)
    def test_rank_preservation_property(self, sample):
        panel = make_panel(np.asarray(sample)[:, None])
        latent, _ = to_latent(panel)
        assert np.array_equal(
            np.argsort(np.argsort(panel.values[:, 0], kind="stable"), kind="stable"),
            np.argsort(np.argsort(latent.values[:, 0], kind="stable"), kind="stable"),
        )

    @settings(max_examples=200, deadline=None)
    @given(finite_samples)
    def test_score_bound(self, sample):
        n = len(sample)
        latent, _ = to_latent(make_panel(np.asarray(sample)[:, None]))
        bound = standard_normal_quantile(1.0 - 0.5 / (n + 1.0)) + 1e-9
        assert np.all(np.abs(latent.values) <= bound)

    def test_roundtrip_reproduces_sample(self, rng):
        values = rng.normal(0, 0.02, size=(40, 3))
        panel = make_panel(values)
        latent, marginals = to_latent(panel)
        back = latent_to_returns(latent.values, marginals)
        np.testing.assert_allclose(back, values, rtol=1e-10, atol=1e-12)

    def test_moments_standardized(self, rng):
        n = 2000
        values = rng.gamma(2.0, size=(n, 2)) * np.array([1.0, 3.0])
        latent, _ = to_latent(make_panel(values))
        tol = 5.0 / math.sqrt(n)
        assert np.all(np.abs(latent.values.mean(axis=0)) < tol)
        assert np.all(np.abs(latent.values.var(axis=0) - 1.0) < tol)
