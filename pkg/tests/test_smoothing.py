"""Tests for the smoothing families and their mixtures."""

import math

import numpy as np
import pytest
from scipy.integrate import quad

from boltzrelax.core.smoothing import (
    ExponentialSmoothing,
    GaussianSmoothing,
    PowerSmoothing,
    UniformExpSmoothing,
    coefficients,
    evaluate,
    make_smoothing,
    mixture_evaluate,
    mixture_terms_from_logits,
)
from boltzrelax.errors import InvalidSmoothingError, SupportError

FAMILIES = [
    ExponentialSmoothing(5.0),
    UniformExpSmoothing(12.0, 0.05),
    PowerSmoothing(4.0),
    GaussianSmoothing(9.0),
]


def test_power_density_by_hand():
    """Power smoothing with beta=2 at zeta=0.25: density 1, CDF 0.5."""
    pdf, cdf, _ = evaluate(PowerSmoothing(2.0), 0, 0.25)
    assert pdf == pytest.approx(1.0)
    assert cdf == pytest.approx(0.5)


def test_exponential_density_by_hand():
    """Exponential smoothing with beta=1 at zeta=1 given z=1 has density e / (e - 1)."""
    pdf, cdf, _ = evaluate(ExponentialSmoothing(1.0), 1, 1.0)
    assert pdf == pytest.approx(1.5820, abs=1e-4)
    assert cdf == pytest.approx(1.0)


@pytest.mark.parametrize("kind", FAMILIES, ids=lambda k: k.name)
def test_symmetry(kind):
    """r(zeta|1) = r(1 - zeta|0) and the CDFs reflect accordingly."""
    zeta = np.linspace(0.05, 0.95, 19)
    np.testing.assert_allclose(kind.log_pdf(1, zeta), kind.log_pdf(0, 1.0 - zeta), atol=1e-12)
    np.testing.assert_allclose(kind.cdf(1, zeta), 1.0 - kind.cdf(0, 1.0 - zeta), atol=1e-12)


@pytest.mark.parametrize("kind", FAMILIES[:2] + FAMILIES[3:], ids=lambda k: k.name)
def test_densities_integrate_to_one(kind):
    """Quadrature of each component density gives 1."""
    lo, hi = (-np.inf, np.inf) if kind.name == "gauss" else (0.0, 1.0)
    for z in (0, 1):
        total, _ = quad(lambda t: float(kind.pdf(z, t)), lo, hi, epsabs=1e-12, epsrel=1e-12, limit=200)
        assert total == pytest.approx(1.0, abs=1e-8)


def test_power_cdf_endpoints():
    """The power CDF runs from 0 to 1 over [0, 1]."""
    kind = PowerSmoothing(30.0)
    assert kind.cdf(0, 0.0) == 0.0
    assert kind.cdf(0, 1.0) == pytest.approx(1.0)
    assert kind.cdf(1, 0.0) == pytest.approx(0.0)
    assert kind.cdf(1, 1.0) == pytest.approx(1.0)


@pytest.mark.parametrize("kind", FAMILIES, ids=lambda k: k.name)
def test_pdf_is_cdf_derivative(kind):
    """A central difference of the CDF recovers the density."""
    h = 1e-5
    for z in (0, 1):
        for zeta in (0.2, 0.5, 0.7):
            numeric = (kind.cdf(z, zeta + h) - kind.cdf(z, zeta - h)) / (2 * h)
            assert numeric == pytest.approx(kind.pdf(z, zeta), rel=1e-6)


@pytest.mark.parametrize("kind", FAMILIES, ids=lambda k: k.name)
def test_zeta_derivative(kind):
    """d log r / d zeta against a central difference."""
    h = 1e-6
    for z in (0, 1):
        for zeta in (0.3, 0.6):
            numeric = (kind.log_pdf(z, zeta + h) - kind.log_pdf(z, zeta - h)) / (2 * h)
            assert kind.dlog_pdf_dzeta(z, zeta) == pytest.approx(numeric, rel=1e-6, abs=1e-8)


@pytest.mark.parametrize(
    "factory, beta",
    [
        (ExponentialSmoothing, 5.0),
        (lambda b: UniformExpSmoothing(b, 0.05), 12.0),
        (PowerSmoothing, 4.0),
        (GaussianSmoothing, 9.0),
    ],
)
def test_beta_derivatives(factory, beta):
    """d log r / d beta and d R / d beta against central differences in beta."""
    h = 1e-6
    kind, up, down = factory(beta), factory(beta + h), factory(beta - h)
    for z in (0, 1):
        for zeta in (0.15, 0.5, 0.8):
            d_log = (up.log_pdf(z, zeta) - down.log_pdf(z, zeta)) / (2 * h)
            d_cdf = (up.cdf(z, zeta) - down.cdf(z, zeta)) / (2 * h)
            assert kind.dlog_pdf_dbeta(z, zeta) == pytest.approx(d_log, rel=1e-5, abs=1e-9)
            assert kind.dcdf_dbeta(z, zeta) == pytest.approx(d_cdf, rel=1e-5, abs=1e-9)


def test_exponential_coefficients_closed_form():
    """b = beta (2 zeta - 1) and c = -beta zeta - log Z for exponential smoothing."""
    kind = ExponentialSmoothing(7.0)
    zeta = np.array([0.1, 0.5, 0.9])
    coeffs = coefficients(kind, zeta)
    np.testing.assert_allclose(coeffs.b, 7.0 * (2 * zeta - 1), atol=1e-12)
    np.testing.assert_allclose(coeffs.c, -7.0 * zeta - kind.log_normalizer, atol=1e-12)
    np.testing.assert_allclose(coeffs.db, 14.0)


def test_power_and_gaussian_coefficients():
    """Closed-form log-odds for the power and Gaussian families."""
    zeta = np.array([0.2, 0.5, 0.7])
    power = coefficients(PowerSmoothing(3.0), zeta)
    np.testing.assert_allclose(power.b, (1 / 3 - 1) * (np.log(1 - zeta) - np.log(zeta)), atol=1e-12)
    gauss = coefficients(GaussianSmoothing(4.0), zeta)
    np.testing.assert_allclose(gauss.b, 4.0 * (zeta - 0.5), atol=1e-12)


@pytest.mark.parametrize("kind", FAMILIES, ids=lambda k: k.name)
def test_coefficients_reconstruct_density(kind):
    """exp(c + b z) is r(zeta|z) for both z."""
    zeta = np.array([0.05, 0.4, 0.85])
    coeffs = kind.coefficients(zeta)
    np.testing.assert_allclose(coeffs.c, kind.log_pdf(0, zeta), atol=1e-12)
    np.testing.assert_allclose(coeffs.c + coeffs.b, kind.log_pdf(1, zeta), atol=1e-12)


def test_concentration_grows_with_beta():
    """P(zeta > 0.1 | z=0) shrinks as beta grows."""
    for name, betas in [("exp", (4, 8, 16)), ("power", (5, 15, 40)), ("gauss", (20, 40, 80))]:
        tails = [1.0 - float(make_smoothing(name, b).cdf(0, 0.1)) for b in betas]
        assert tails == sorted(tails, reverse=True)


def test_invalid_parameters():
    """Power beta <= 1, non-positive beta and epsilon outside (0, 1) are refused."""
    with pytest.raises(InvalidSmoothingError):
        PowerSmoothing(1.0)
    with pytest.raises(InvalidSmoothingError):
        ExponentialSmoothing(0.0)
    with pytest.raises(InvalidSmoothingError):
        UniformExpSmoothing(10.0, 1.0)
    with pytest.raises(InvalidSmoothingError):
        make_smoothing("laplace", 3.0)


def test_support_checks():
    """Bounded families refuse zeta outside [0, 1]; z must be binary."""
    with pytest.raises(SupportError):
        evaluate(ExponentialSmoothing(3.0), 0, 1.5)
    with pytest.raises(ValueError):
        evaluate(ExponentialSmoothing(3.0), 2, 0.5)
    pdf, _, _ = evaluate(GaussianSmoothing(3.0), 0, 1.5)
    assert pdf > 0


def test_mixture_limits_and_midpoint():
    """q=0 and q=1 give the components; the symmetric mixture has CDF 0.5 at 0.5."""
    kind = ExponentialSmoothing(6.0)
    zeta = np.array([0.1, 0.6])
    pdf0, cdf0 = mixture_evaluate(kind, 0.0, zeta)
    np.testing.assert_allclose(pdf0, np.exp(kind.log_pdf(0, zeta)))
    np.testing.assert_allclose(cdf0, kind.cdf(0, zeta))
    pdf1, _ = mixture_evaluate(kind, 1.0, zeta)
    np.testing.assert_allclose(pdf1, np.exp(kind.log_pdf(1, zeta)))
    _, mid = mixture_evaluate(kind, 0.5, 0.5)
    assert mid == pytest.approx(0.5)
    with pytest.raises(ValueError):
        mixture_evaluate(kind, 1.5, 0.5)


def test_mixture_terms_from_logits():
    """Log-space mixture terms agree with the direct mixture and Bayes' rule."""
    kind = PowerSmoothing(5.0)
    logits = np.array([-2.0, 0.0, 3.0])
    zeta = np.array([0.3, 0.5, 0.9])
    q = 1.0 / (1.0 + np.exp(-logits))
    pdf, cdf = mixture_evaluate(kind, q, zeta)
    terms = mixture_terms_from_logits(kind, logits, zeta)
    np.testing.assert_allclose(np.exp(terms.log_pdf), pdf, rtol=1e-12)
    np.testing.assert_allclose(terms.cdf, cdf, rtol=1e-12)
    np.testing.assert_allclose(terms.responsibility, q * np.exp(kind.log_pdf(1, zeta)) / pdf, rtol=1e-12)


def test_exponential_normalizer():
    """log Z = log((1 - e^-beta) / beta)."""
    assert ExponentialSmoothing(2.0).log_normalizer == pytest.approx(math.log((1 - math.exp(-2.0)) / 2.0))
