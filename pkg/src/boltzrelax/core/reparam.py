"""Inverse-CDF sampling of overlapping mixtures and implicit reparameterization gradients.

A sample solves (1 - q) R(zeta|0) + q R(zeta|1) = rho for a fixed uniform rho.
Differentiating that identity gives d zeta / d q and d zeta / d beta without
ever needing an analytic inverse CDF.
"""

from __future__ import annotations

import logging
from typing import NamedTuple

import numpy as np

from boltzrelax.core.smoothing import Smoothing
from boltzrelax.errors import RootBracketError

logger = logging.getLogger(__name__)

RHO_CLAMP = 1e-12
NEWTON_STEPS = 2
GRAD_CAP = 1e8
_PDF_FLOOR = 1e-300
_SIGN_BIT = np.int64(-0x8000000000000000)
_MAGNITUDE = np.int64(0x7FFFFFFFFFFFFFFF)
_MAX_BISECTIONS = 80
_BRACKET_SLACK = 1e-12


class ImplicitGradients(NamedTuple):
    dzeta_dq: np.ndarray
    dzeta_dbeta: np.ndarray
    saturated: np.ndarray


def _to_ordered(x: np.ndarray) -> np.ndarray:
    # monotone map from float64 to int64 (adjacent floats -> adjacent integers)
    bits = np.ascontiguousarray(x, dtype=np.float64).view(np.int64)
    return np.where(bits >= 0, bits, -(bits & _MAGNITUDE))


def _from_ordered(key: np.ndarray) -> np.ndarray:
    bits = np.where(key >= 0, key, (-key) | _SIGN_BIT)
    return np.ascontiguousarray(bits, dtype=np.int64).view(np.float64)


def mixture_cdf(kind: Smoothing, q, zeta) -> np.ndarray:
    return (1.0 - q) * kind.cdf(0, zeta) + q * kind.cdf(1, zeta)


def mixture_pdf(kind: Smoothing, q, zeta) -> np.ndarray:
    """Raw mixture density (no endpoint clamping), used by the root solver and gradients."""
    return (1.0 - q) * kind.pdf(0, zeta) + q * kind.pdf(1, zeta)


def _key_gap(k_lo: np.ndarray, k_hi: np.ndarray) -> np.ndarray:
    # k_hi - k_lo can exceed the int64 range when the bracket straddles 0; modular uint64 is exact
    return k_hi.view(np.uint64) - k_lo.view(np.uint64)


def _key_midpoint(k_lo: np.ndarray, gap: np.ndarray) -> np.ndarray:
    return (k_lo.view(np.uint64) + gap // np.uint64(2)).view(np.int64)


def sample_inverse_cdf(kind: Smoothing, q, rho) -> np.ndarray:
    """zeta with (1 - q) R(zeta|0) + q R(zeta|1) = rho, elementwise.

    Bisection runs over the ordered bit patterns of the bracket, so it ends on
    neighbouring floats even where the root sits at 1e-40 (heavy power tails).
    Two Newton steps using the mixture pdf then polish the result; a step is
    only kept when it lowers the CDF residual and stays inside the bracket.
    """
    q = np.asarray(q, dtype=np.float64)
    rho = np.clip(np.asarray(rho, dtype=np.float64), RHO_CLAMP, 1.0 - RHO_CLAMP)
    lo, hi = kind.bracket()
    shape = np.broadcast_shapes(q.shape, rho.shape, np.shape(lo), np.shape(kind.beta))
    work = shape or (1,)
    q, rho = np.broadcast_to(q, work), np.broadcast_to(rho, work)
    lo = np.broadcast_to(np.asarray(lo, dtype=np.float64), work).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=np.float64), work).copy()

    if np.any(mixture_cdf(kind, q, lo) > rho + _BRACKET_SLACK) or np.any(
        mixture_cdf(kind, q, hi) < rho - _BRACKET_SLACK
    ):
        raise RootBracketError("mixture CDF does not bracket rho; smoothing parameters are invalid")

    k_lo, k_hi = _to_ordered(lo), _to_ordered(hi)
    for _ in range(_MAX_BISECTIONS):
        gap = _key_gap(k_lo, k_hi)
        if np.all(gap <= 1):
            break
        k_mid = _key_midpoint(k_lo, gap)
        below = mixture_cdf(kind, q, _from_ordered(k_mid)) < rho
        k_lo = np.where(below, k_mid, k_lo)
        k_hi = np.where(below, k_hi, k_mid)
    else:
        raise RootBracketError("bisection did not converge")

    x_lo, x_hi = _from_ordered(k_lo), _from_ordered(k_hi)
    r_lo = np.abs(mixture_cdf(kind, q, x_lo) - rho)
    r_hi = np.abs(mixture_cdf(kind, q, x_hi) - rho)
    zeta = np.where(r_lo < r_hi, x_lo, x_hi)
    residual = np.minimum(r_lo, r_hi)

    for _ in range(NEWTON_STEPS):
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            step = (mixture_cdf(kind, q, zeta) - rho) / mixture_pdf(kind, q, zeta)
            candidate = zeta - step
        ok = np.isfinite(candidate) & (candidate >= lo) & (candidate <= hi)
        candidate = np.where(ok, candidate, zeta)
        new_residual = np.abs(mixture_cdf(kind, q, candidate) - rho)
        better = ok & (new_residual < residual)
        zeta = np.where(better, candidate, zeta)
        residual = np.where(better, new_residual, residual)

    zeta = zeta.reshape(shape)
    return zeta if zeta.ndim else zeta[()]


def implicit_grads(kind: Smoothing, q, zeta) -> ImplicitGradients:
    """d zeta / d q and d zeta / d beta at a root of the mixture CDF equation.

    d zeta / d q    = (R(zeta|0) - R(zeta|1)) / pdf(zeta)
    d zeta / d beta = -((1 - q) dR(zeta|0)/d beta + q dR(zeta|1)/d beta) / pdf(zeta)

    A root on the pole of a power-function component (zeta rounded onto 0 or
    1) has an infinite density and bounded numerators, so both gradients are
    exactly 0 there. Where the density underflows the gradients are capped and
    the ``saturated`` flag is set for that element.
    """
    q = np.asarray(q, dtype=np.float64)
    zeta = np.asarray(zeta, dtype=np.float64)
    with np.errstate(over="ignore", invalid="ignore"):
        density = mixture_pdf(kind, q, zeta)
    num_q = kind.cdf(0, zeta) - kind.cdf(1, zeta)
    num_beta = -((1.0 - q) * kind.dcdf_dbeta(0, zeta) + q * kind.dcdf_dbeta(1, zeta))

    underflow = np.isfinite(density) & (density < _PDF_FLOOR)
    safe = np.where(underflow, _PDF_FLOOR, density)
    with np.errstate(invalid="ignore"):
        dq = np.clip(num_q / safe, -GRAD_CAP, GRAD_CAP)
        dbeta = np.clip(num_beta / safe, -GRAD_CAP, GRAD_CAP)
    saturated = underflow | np.isnan(dq) | np.isnan(dbeta) | (np.abs(dq) >= GRAD_CAP) | (np.abs(dbeta) >= GRAD_CAP)
    if np.any(saturated):
        logger.warning("%d implicit gradients saturated", int(np.sum(saturated)))
    if dq.ndim == 0:
        return ImplicitGradients(float(dq), float(dbeta), bool(saturated))
    return ImplicitGradients(dq, dbeta, saturated)


def exponential_inverse_cdf(beta, q, rho) -> np.ndarray:
    """Closed-form inverse CDF of the exponential mixture.

    With u = exp(beta * zeta) the CDF equation becomes
    q e^-beta u^2 + ((1 - q) - q e^-beta - rho (1 - e^-beta)) u - (1 - q) = 0,
    whose positive root is taken in the cancellation-free form. Valid for beta < ~700.
    """
    beta = np.asarray(beta, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    rho = np.clip(np.asarray(rho, dtype=np.float64), RHO_CLAMP, 1.0 - RHO_CLAMP)
    e = np.exp(-beta)
    A = q * e
    B = (1.0 - q) - q * e + rho * np.expm1(-beta)
    C = -(1.0 - q)
    sqrt_disc = np.sqrt(B * B - 4.0 * A * C)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(B >= 0.0, -2.0 * C / (B + sqrt_disc), (-B + sqrt_disc) / (2.0 * A))
    zeta = np.log(u) / beta
    return zeta if zeta.ndim else zeta[()]
