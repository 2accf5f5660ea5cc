import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, special, stats

from ccrsync.variates import (RngStream, background_arrival, gg_cdf, gg_logpdf, gg_pdf,
                              gg_sample, poisson_pmf, poisson_sample, sample_r_dev)


def test_gg_pdf_normalised():
    value, _ = integrate.quad(gg_pdf, 0, np.inf, args=(3.0, 2.0), epsabs=1e-12, limit=200)
    assert value == pytest.approx(1.0, abs=1e-6)


def test_gg_pdf_unit_mean():
    value, _ = integrate.quad(lambda h: h * gg_pdf(h, 3.0, 2.0), 0, np.inf, epsabs=1e-12, limit=200)
    assert value == pytest.approx(1.0, abs=1e-6)


def _product_of_gammas_density(h, a, b):
    # density of X*Y with X ~ Gamma(a, 1/a), Y ~ Gamma(b, 1/b), by direct integration
    fx = stats.gamma(a, scale=1 / a).pdf
    fy = stats.gamma(b, scale=1 / b).pdf
    val, _ = integrate.quad(lambda x: fx(x) * fy(h / x) / x, 0, np.inf, epsabs=1e-13, epsrel=1e-12,
                            limit=400)
    return val


@pytest.mark.parametrize("h", [0.05, 0.3, 1.0, 2.5, 7.0])
def test_gg_pdf_matches_gamma_product(h):
    assert gg_pdf(h, 3.0, 2.0) == pytest.approx(_product_of_gammas_density(h, 3.0, 2.0), abs=1e-6)


def test_gg_pdf_equal_parameters():
    # order-zero Bessel function
    for h in (0.2, 1.0, 3.0):
        assert gg_pdf(h, 4.0, 4.0) == pytest.approx(_product_of_gammas_density(h, 4.0, 4.0), rel=1e-7)


@pytest.mark.parametrize("nu", [0.0, 0.5, 1.0, 2.7])
def test_scaled_bessel_accuracy(nu):
    # K_nu over the argument range met for h in [1e-6, 50] at alpha*beta = 6
    for h in np.geomspace(1e-6, 50.0, 25):
        z = 2 * math.sqrt(6.0 * h)
        ref = float(mpmath.besselk(nu, z) * mpmath.exp(z))
        assert special.kve(nu, z) == pytest.approx(ref, rel=1e-9)


def test_gg_pdf_at_zero():
    assert gg_pdf(0.0, 3.0, 2.0) == 0.0
    assert math.isinf(gg_logpdf(0.0, 0.5, 2.0)) and gg_logpdf(0.0, 0.5, 2.0) > 0


@pytest.mark.parametrize("args", [(math.nan, 3, 2), (1.0, math.inf, 2), (1.0, -1, 2), (-0.5, 3, 2)])
def test_gg_pdf_rejects_bad_arguments(args):
    with pytest.raises(ValueError):
        gg_pdf(*args)


def test_gg_sample_moments():
    x = gg_sample(RngStream(101), 3.0, 2.0, 1_000_000)
    assert x.mean() == pytest.approx(1.0, abs=0.01)
    assert x.var() == pytest.approx(1.0, abs=0.05)


def test_gg_sample_matches_pdf():
    x = gg_sample(RngStream(102), 3.0, 2.0, 100_000)
    assert stats.kstest(x, lambda h: gg_cdf(h, 3.0, 2.0)).statistic < 0.01


def test_gg_cdf_against_quadrature():
    for h in (0.1, 0.7, 1.5, 4.0):
        ref, _ = integrate.quad(gg_pdf, 0, h, args=(3.0, 2.0), epsabs=1e-13)
        assert gg_cdf(h, 3.0, 2.0) == pytest.approx(ref, abs=1e-6)


def test_r_dev_degenerate():
    np.testing.assert_array_equal(sample_r_dev(RngStream(1), 0.0, 100), 0.0)
    assert sample_r_dev(RngStream(1), 0.3).shape == (2,)


def test_r_dev_axis_std():
    r = sample_r_dev(RngStream(103), 0.5, 1_000_000)
    np.testing.assert_allclose(r.std(axis=0), 0.5, atol=0.005)


def test_r_dev_radius_is_rayleigh():
    r = sample_r_dev(RngStream(104), 0.3, 100_000)
    radius = np.hypot(r[:, 0], r[:, 1])
    assert stats.kstest(radius, stats.rayleigh(scale=0.3).cdf).statistic < 0.01


def test_poisson_pmf_values():
    assert poisson_pmf(1, 0.5) == pytest.approx(0.5 * math.exp(-0.5), rel=1e-14)
    assert poisson_pmf(1, 0.5) == pytest.approx(0.30327, abs=5e-6)
    assert poisson_pmf(0, 0.0) == 1.0
    assert poisson_pmf(3, 0.0) == 0.0
    assert math.fsum(poisson_pmf(np.arange(51), 3.0)) == pytest.approx(1.0, abs=1e-12)


def test_poisson_negative_mean():
    with pytest.raises(ValueError):
        poisson_pmf(0, -0.1)
    with pytest.raises(ValueError):
        poisson_sample(RngStream(1), -1.0)


def test_poisson_sampler_chi_square():
    n = poisson_sample(RngStream(105), 3.0, 100_000)
    k = np.arange(10)
    observed = np.array([(n == v).sum() for v in k] + [(n >= 10).sum()])
    p = np.append(poisson_pmf(k, 3.0), 1 - poisson_pmf(k, 3.0).sum())
    assert stats.chisquare(observed, p * n.size).pvalue > 0.001


def test_background_arrival_uniform():
    t = background_arrival(RngStream(106), 1e-9, 1_000_000)
    assert abs(t.mean()) < 1e-12
    assert t.var() == pytest.approx(1e-18 / 12, rel=0.02)
    assert t.min() >= -0.5e-9 and t.max() <= 0.5e-9


def test_stream_determinism():
    a = RngStream(7, 3).generator().random(1000)
    b = RngStream(7, 3).generator().random(1000)
    np.testing.assert_array_equal(a, b)


def test_streams_uncorrelated():
    a = RngStream(7, 0).generator().standard_normal(100_000)
    b = RngStream(7, 1).generator().standard_normal(100_000)
    c = RngStream(8, 0).generator().standard_normal(100_000)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.01
    assert abs(np.corrcoef(a, c)[0, 1]) < 0.01


def test_stream_validation():
    with pytest.raises(ValueError):
        RngStream(-1)
    with pytest.raises(ValueError):
        RngStream(1, 2**64)
    RngStream(2**64 - 1, 2**64 - 1).generator()


@settings(max_examples=40, deadline=None)
@given(st.floats(0.6, 20), st.floats(0.6, 20), st.floats(1e-4, 20))
def test_gg_pdf_finite_and_positive(alpha, beta, h):
    v = gg_pdf(h, alpha, beta)
    assert math.isfinite(v) and v >= 0
