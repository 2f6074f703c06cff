import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from priorflow.priors import (
    DiagonalGaussian,
    gaussian_cdf_1d,
    gaussian_log_pdf,
    isotropy_stats,
    normal_pdf_1d,
    sample,
)


def test_log_pdf_at_mode():
    g = DiagonalGaussian([0.0], [1.0])
    assert gaussian_log_pdf(g, [0.0]) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-12)


def test_log_pdf_one_sigma_out():
    g = DiagonalGaussian([1.5], [1.0])
    assert gaussian_log_pdf(g, [0.0]) == pytest.approx(math.log(0.1295175956658917), abs=1e-10)


def test_log_pdf_matches_scipy_in_three_dims():
    g = DiagonalGaussian([0.1, -2.0, 3.0], [0.5, 1.5, 2.0])
    x = np.random.default_rng(0).normal(size=(20, 3))
    ref = stats.multivariate_normal(g.mean, np.diag(g.std**2)).logpdf(x)
    np.testing.assert_allclose(gaussian_log_pdf(g, x), ref, atol=1e-10)


@given(st.floats(-5, 5), st.floats(0.1, 5), st.floats(-5, 5))
def test_log_pdf_symmetry(mu, sigma, d):
    g = DiagonalGaussian([mu], [sigma])
    assert gaussian_log_pdf(g, [mu + d]) == pytest.approx(gaussian_log_pdf(g, [mu - d]), abs=1e-12)


def test_invalid_std():
    with pytest.raises(ValueError):
        DiagonalGaussian([0.0, 0.0], [1.0, 0.0])
    with pytest.raises(ValueError):
        DiagonalGaussian([0.0], [1.0, 2.0])


@pytest.mark.parametrize("mu,sigma,t,expected", [
    (0.0, 1.0, 0.0, 0.5),
    (0.0, 1.0, 0.75, 0.7733726476),
    (-0.2, 1.0, 0.75, 0.8289438737),
])
def test_cdf_values(mu, sigma, t, expected):
    assert gaussian_cdf_1d(mu, sigma, t) == pytest.approx(expected, abs=1e-9)


def test_cdf_tails_and_errors():
    assert gaussian_cdf_1d(0, 1, 12) == pytest.approx(1.0, abs=1e-15)
    assert gaussian_cdf_1d(0, 1, -12) < 1e-30
    with pytest.raises(ValueError):
        gaussian_cdf_1d(0, 0, 1)


@given(st.floats(-10, 10), st.floats(-10, 10))
def test_cdf_monotone(a, b):
    lo, hi = sorted((a, b))
    assert gaussian_cdf_1d(0.3, 1.7, lo) <= gaussian_cdf_1d(0.3, 1.7, hi)


def test_pdf_integrates_to_one():
    z = np.linspace(-12, 12, 20001)
    assert np.trapezoid(normal_pdf_1d(z, 0.0, 1.0), z) == pytest.approx(1.0, abs=1e-9)


def test_sample_moments(rng):
    g = DiagonalGaussian([1.0, -2.0], [0.5, 2.0])
    z = sample(g, 1.0, rng, size=200_000)
    np.testing.assert_allclose(z.mean(axis=0), g.mean, atol=0.02)
    np.testing.assert_allclose(z.std(axis=0), g.std, rtol=0.01)


def test_sample_lambda_scales_noise(rng):
    g = DiagonalGaussian([0.0], [2.0])
    z = sample(g, 0.8, rng, size=200_000)
    assert z.std() == pytest.approx(1.6, rel=0.01)
    assert stats.kstest(z[:, 0], stats.norm(0, 1.6).cdf).pvalue > 0.001


def test_sample_lambda_zero_is_mean(rng):
    g = DiagonalGaussian([0.3, 0.7], [1.0, 1.0])
    z = sample(g, 0.0, rng, size=5)
    assert np.all(z == g.mean)
    with pytest.raises(ValueError):
        sample(g, -1.0, rng)


def test_isotropy_stats():
    s = isotropy_stats(DiagonalGaussian([0, 0, 0], [0.756, 0.800, 0.886]))
    assert (s.max, s.min) == (0.886, 0.756)
    assert s.avg == pytest.approx(0.814, abs=1e-12)
    assert s.std == pytest.approx(np.std([0.756, 0.800, 0.886]), abs=1e-12)
    assert isotropy_stats(DiagonalGaussian.isotropic([0, 0], 0.5)).std == 0.0
