"""Tests for inverse-CDF sampling and implicit reparameterization gradients."""

import numpy as np
import pytest
from scipy.stats import kstest

from boltzrelax.core.reparam import (
    exponential_inverse_cdf,
    implicit_grads,
    mixture_cdf,
    sample_inverse_cdf,
)
from boltzrelax.core.rng import make_rng
from boltzrelax.core.smoothing import (
    ExponentialSmoothing,
    GaussianSmoothing,
    PowerSmoothing,
    ShiftedGaussianSmoothing,
    UniformExpSmoothing,
    make_smoothing,
)

# power beta kept small enough that no root rounds onto 1.0 for rho in [0.05, 0.95];
# gauss brackets straddle 0 and span several units
SOLVER_FAMILIES = [
    ("exp", 10.0),
    ("unexp", 20.0),
    ("power", 2.0),
    ("power", 5.0),
    ("gauss", 1.0),
    ("gauss", 4.0),
    ("gauss", 20.0),
]


@pytest.mark.parametrize("name, beta", SOLVER_FAMILIES)
def test_symmetric_midpoint(name, beta):
    """q=0.5 and rho=0.5 land on zeta=0.5 for symmetric families."""
    assert sample_inverse_cdf(make_smoothing(name, beta), 0.5, 0.5) == pytest.approx(0.5, abs=1e-12)


@pytest.mark.parametrize("name, beta", SOLVER_FAMILIES)
def test_residual_on_grid(name, beta):
    """|F(zeta) - rho| stays below 1e-10 over a (q, rho) grid."""
    kind = make_smoothing(name, beta)
    q, rho = np.meshgrid([0.0, 0.1, 0.5, 0.9, 1.0], np.linspace(0.05, 0.95, 19))
    zeta = sample_inverse_cdf(kind, q, rho)
    assert zeta.shape == q.shape
    assert np.max(np.abs(mixture_cdf(kind, q, zeta) - rho)) < 1e-10


def test_heavy_power_tail():
    """Roots far below 1e-16 are still resolved by the bit-pattern bisection."""
    kind = PowerSmoothing(30.0)
    zeta = sample_inverse_cdf(kind, 0.5, 1e-6)
    assert 0.0 < zeta < 1e-100
    assert mixture_cdf(kind, 0.5, zeta) == pytest.approx(1e-6, rel=1e-8)


def test_exponential_closed_form():
    """The quadratic inverse of the exponential mixture matches the solver."""
    q, rho = np.meshgrid([0.0, 0.2, 0.5, 0.8, 1.0], np.linspace(0.01, 0.99, 25))
    for beta in (1.0, 8.0, 16.0):
        solved = sample_inverse_cdf(ExponentialSmoothing(beta), q, rho)
        np.testing.assert_allclose(exponential_inverse_cdf(beta, q, rho), solved, atol=1e-10)


def test_power_gradient_by_hand():
    """Power beta=2, q=0.5, zeta=0.5: d zeta / d q = 2 - sqrt(2) and d zeta / d beta = 0."""
    grads = implicit_grads(PowerSmoothing(2.0), 0.5, 0.5)
    assert grads.dzeta_dq == pytest.approx(2.0 - np.sqrt(2.0), abs=1e-5)
    assert grads.dzeta_dbeta == pytest.approx(0.0, abs=1e-12)
    assert not grads.saturated


@pytest.mark.parametrize("name, beta", SOLVER_FAMILIES)
def test_implicit_gradients_match_finite_differences(name, beta):
    """d zeta / d q and d zeta / d beta agree with differences of re-solved samples."""
    rng = make_rng(7)
    n = 1000
    q = rng.uniform(0.1, 0.9, n)
    rho = rng.uniform(0.05, 0.95, n)
    kind = make_smoothing(name, beta)
    zeta = sample_inverse_cdf(kind, q, rho)
    grads = implicit_grads(kind, q, zeta)
    assert not np.any(grads.saturated)

    h = 1e-6
    fd_q = (sample_inverse_cdf(kind, q + h, rho) - sample_inverse_cdf(kind, q - h, rho)) / (2 * h)
    np.testing.assert_allclose(grads.dzeta_dq, fd_q, rtol=1e-4, atol=1e-7)
    up, down = make_smoothing(name, beta + h), make_smoothing(name, beta - h)
    fd_beta = (sample_inverse_cdf(up, q, rho) - sample_inverse_cdf(down, q, rho)) / (2 * h)
    np.testing.assert_allclose(grads.dzeta_dbeta, fd_beta, rtol=1e-4, atol=1e-7)


def test_per_unit_beta_broadcasts():
    """An array-valued beta is solved elementwise."""
    kind = GaussianSmoothing(np.array([10.0, 40.0]), np.array([0.1, -0.2]))
    zeta = sample_inverse_cdf(kind, np.array([0.3, 0.7]), np.array([0.4, 0.6]))
    assert zeta.shape == (2,)
    np.testing.assert_allclose(mixture_cdf(kind, np.array([0.3, 0.7]), zeta), [0.4, 0.6], atol=1e-10)


@pytest.mark.parametrize(
    "kind",
    [ExponentialSmoothing(10.0), PowerSmoothing(5.0), UniformExpSmoothing(20.0)],
    ids=lambda k: k.name,
)
def test_samples_follow_mixture(kind):
    """Kolmogorov-Smirnov test of 10^5 draws against the mixture CDF."""
    rng = make_rng(11)
    zeta = sample_inverse_cdf(kind, 0.3, rng.random(100_000))
    result = kstest(zeta, lambda x: mixture_cdf(kind, 0.3, x))
    assert result.pvalue > 0.01


def test_degenerate_q_reduces_to_component():
    """q=1 inverts the z=1 component alone."""
    kind = ExponentialSmoothing(6.0)
    rho = np.linspace(0.1, 0.9, 9)
    zeta = sample_inverse_cdf(kind, 1.0, rho)
    np.testing.assert_allclose(kind.cdf(1, zeta), rho, atol=1e-10)


def test_monotone_in_rho():
    """Larger uniforms give larger samples."""
    rho = np.linspace(0.01, 0.99, 99)
    zeta = sample_inverse_cdf(PowerSmoothing(5.0), 0.4, rho)
    assert np.all(np.diff(zeta) > 0)


def test_shifted_gaussian_far_from_origin():
    """Shifts of several units still give interior roots with a tiny residual."""
    kind = ShiftedGaussianSmoothing(np.array([8.0, 8.0, 30.0, 1.0]), np.array([2.5, -3.0, 4.0, -2.0]))
    q = np.array([0.3, 0.7, 0.5, 0.9])
    rho = np.array([0.3, 0.7, 0.2, 0.6])
    zeta = sample_inverse_cdf(kind, q, rho)
    lo, hi = kind.bracket()
    assert np.all((zeta > lo) & (zeta < hi))
    np.testing.assert_allclose(mixture_cdf(kind, q, zeta), rho, atol=1e-10)


def test_gaussian_samples_follow_mixture():
    """Kolmogorov-Smirnov test of Gaussian-smoothing draws, whose bracket straddles 0."""
    kind = GaussianSmoothing(4.0)
    zeta = sample_inverse_cdf(kind, 0.3, make_rng(12).random(50_000))
    assert np.any(zeta < 0.0) and np.any(zeta > 1.0)
    assert kstest(zeta, lambda x: mixture_cdf(kind, 0.3, x)).pvalue > 0.01


def test_power_pole_root_has_zero_gradient(caplog):
    """A sharp power root rounded onto 1.0 sits on the pole: zero gradients, no saturation."""
    kind = PowerSmoothing(30.0)
    zeta = sample_inverse_cdf(kind, 0.5, 0.99)
    assert zeta == 1.0
    grads = implicit_grads(kind, 0.5, zeta)
    assert grads.dzeta_dq == 0.0
    assert grads.dzeta_dbeta == 0.0
    assert not grads.saturated
    assert "saturated" not in caplog.text


def test_sharp_power_gradients_match_finite_differences():
    """beta=30 roots chosen inside (0.05, 0.95), where zeta is representable, agree with differences."""
    rng = make_rng(8)
    n = 500
    kind = PowerSmoothing(30.0)
    q = rng.uniform(0.1, 0.9, n)
    rho = mixture_cdf(kind, q, rng.uniform(0.05, 0.95, n))
    zeta = sample_inverse_cdf(kind, q, rho)
    grads = implicit_grads(kind, q, zeta)
    assert not np.any(grads.saturated)

    h = 1e-6
    fd_q = (sample_inverse_cdf(kind, q + h, rho) - sample_inverse_cdf(kind, q - h, rho)) / (2 * h)
    np.testing.assert_allclose(grads.dzeta_dq, fd_q, rtol=1e-4, atol=1e-7)
    up, down = PowerSmoothing(30.0 + h), PowerSmoothing(30.0 - h)
    fd_beta = (sample_inverse_cdf(up, q, rho) - sample_inverse_cdf(down, q, rho)) / (2 * h)
    np.testing.assert_allclose(grads.dzeta_dbeta, fd_beta, rtol=1e-4, atol=1e-7)


def test_sharp_power_gradients_never_saturate():
    """Over the whole rho range, beta=30 gradients stay finite and unflagged."""
    kind = PowerSmoothing(30.0)
    rho = np.linspace(1e-6, 1.0 - 1e-6, 2001)
    grads = implicit_grads(kind, 0.5, sample_inverse_cdf(kind, 0.5, rho))
    assert not np.any(grads.saturated)
    assert np.all(np.isfinite(grads.dzeta_dq))


@pytest.mark.slow
def test_gradient_variance_matches_quadrature():
    """Monte Carlo Var[d zeta / d q] at q=0.5 over 10^6 draws matches the integral
    int (R0 - R1)^2 / pdf - (int R0 - R1)^2 for both families."""
    rho = make_rng(3).random(1_000_000)
    # values of the integral by quadrature on a log-spaced grid
    expected = {("exp", 10.0): 3.623, ("exp", 11.0): 5.320, ("power", 20.0): 5.125, ("power", 30.0): 8.393}
    for (name, beta), variance in expected.items():
        kind = make_smoothing(name, beta)
        grads = implicit_grads(kind, 0.5, sample_inverse_cdf(kind, 0.5, rho))
        assert not np.any(grads.saturated)
        assert np.var(grads.dzeta_dq) == pytest.approx(variance, rel=0.03)


@pytest.mark.slow
def test_power_is_sharper_at_lower_variance():
    """Power beta=20 is both closer to binary and lower-variance than exponential beta=11."""
    rho = make_rng(4).random(1_000_000)
    stats = {}
    for kind in (ExponentialSmoothing(11.0), PowerSmoothing(20.0)):
        zeta = sample_inverse_cdf(kind, 0.5, rho)
        dist = np.mean(np.abs(zeta - (zeta > 0.5)))
        stats[kind.name] = (dist, np.var(implicit_grads(kind, 0.5, zeta).dzeta_dq))
    assert stats["power"][0] < stats["exp"][0]
    assert stats["power"][1] < stats["exp"][1]
