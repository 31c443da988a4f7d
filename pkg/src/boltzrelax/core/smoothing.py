"""Smoothing transformations r(zeta|z) and their two-component mixtures.

Every family maps a binary z to a continuous zeta with inverse temperature
``beta``. Besides densities and CDFs each family exposes the partial
derivatives the reparameterization and prior-gradient code needs:
d log r / d zeta, d log r / d beta and d R / d beta.

All methods broadcast over numpy arrays; ``z`` may be the scalar 0 or 1 or an
array of the same shape as ``zeta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import ClassVar, NamedTuple, Protocol, runtime_checkable

import numpy as np
from scipy.special import log_expit, ndtr

from boltzrelax.core.rbm import AugmentedCoefficients
from boltzrelax.errors import InvalidSmoothingError, SupportError

POWER_CLAMP = 1e-7
DEFAULT_EPSILON = 0.05

# cross-validation grids per smoothing family
BETA_PRESETS: dict[str, tuple[float, ...]] = {
    "exp": (8.0, 10.0, 12.0, 16.0),
    "unexp": (16.0, 20.0, 30.0, 40.0),
    "power": (15.0, 20.0, 30.0, 40.0),
    "gauss": (20.0, 25.0, 30.0, 40.0),
    "git": (20.0, 25.0, 30.0, 40.0),
}


@runtime_checkable
class Smoothing(Protocol):
    """Interface every smoothing family implements."""

    name: ClassVar[str]
    symmetric: ClassVar[bool]
    beta: float | np.ndarray

    def log_pdf(self, z, zeta: np.ndarray) -> np.ndarray: ...

    def pdf(self, z, zeta: np.ndarray) -> np.ndarray: ...

    def cdf(self, z, zeta: np.ndarray) -> np.ndarray: ...

    def dcdf_dbeta(self, z, zeta: np.ndarray) -> np.ndarray: ...

    def dlog_pdf_dzeta(self, z, zeta: np.ndarray) -> np.ndarray: ...

    def dlog_pdf_dbeta(self, z, zeta: np.ndarray) -> np.ndarray: ...

    def bracket(self) -> tuple[np.ndarray, np.ndarray]: ...

    def check_support(self, zeta: np.ndarray) -> np.ndarray: ...

    def coefficients(self, zeta: np.ndarray) -> AugmentedCoefficients: ...


def _positive_beta(beta, minimum: float = 0.0) -> float | np.ndarray:
    arr = np.asarray(beta, dtype=np.float64)
    if not np.all(np.isfinite(arr)) or np.any(arr <= minimum):
        raise InvalidSmoothingError(f"beta must be finite and > {minimum:g}, got {beta!r}")
    return float(arr) if arr.ndim == 0 else arr


class _Overlapping:
    """Shared behaviour; subclasses define the z=0 component on [0, 1].

    Symmetric families satisfy r(zeta|1) = r(1 - zeta|0), so the z=1
    component is obtained by reflection.
    """

    symmetric: ClassVar[bool] = True

    def _log_pdf0(self, t: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _pdf0(self, t: np.ndarray) -> np.ndarray:
        return np.exp(self._log_pdf0(t))

    def _cdf0(self, t: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _dcdf0_dbeta(self, t: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _dlog_pdf0_dt(self, t: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _dlog_pdf0_dbeta(self, t: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _select(self, z, zeta, fn, *, flip_sign: bool = False, complement: bool = False):
        zeta = np.asarray(zeta, dtype=np.float64)
        one = np.asarray(z) == 1
        upper = fn(1.0 - zeta)
        if complement:
            upper = 1.0 - upper
        elif flip_sign:
            upper = -upper
        return np.where(one, upper, fn(zeta))

    def log_pdf(self, z, zeta):
        return self._select(z, zeta, self._log_pdf0)

    def pdf(self, z, zeta):
        return self._select(z, zeta, self._pdf0)

    def cdf(self, z, zeta):
        return self._select(z, zeta, self._cdf0, complement=True)

    def dcdf_dbeta(self, z, zeta):
        return self._select(z, zeta, self._dcdf0_dbeta, flip_sign=True)

    def dlog_pdf_dzeta(self, z, zeta):
        return self._select(z, zeta, self._dlog_pdf0_dt, flip_sign=True)

    def dlog_pdf_dbeta(self, z, zeta):
        return self._select(z, zeta, self._dlog_pdf0_dbeta)

    def bracket(self) -> tuple[np.ndarray, np.ndarray]:
        return np.asarray(0.0), np.asarray(1.0)

    def check_support(self, zeta):
        zeta = np.asarray(zeta, dtype=np.float64)
        if np.any(~np.isfinite(zeta)) or np.any((zeta < 0.0) | (zeta > 1.0)):
            raise SupportError(f"{self.name} smoothing needs zeta in [0, 1]")
        return zeta

    def coefficients(self, zeta) -> AugmentedCoefficients:
        return _coefficients(self, self.check_support(zeta))


@dataclass(frozen=True)
class ExponentialSmoothing(_Overlapping):
    """r(zeta|0) = exp(-beta zeta) / Z, r(zeta|1) = exp(beta (zeta - 1)) / Z on [0, 1].

    Z = (1 - exp(-beta)) / beta.
    """

    beta: float | np.ndarray
    name: ClassVar[str] = "exp"

    def __post_init__(self) -> None:
        object.__setattr__(self, "beta", _positive_beta(self.beta))

    @property
    def log_normalizer(self):
        return np.log(-np.expm1(-self.beta)) - np.log(self.beta)

    def _log_pdf0(self, t):
        return -self.beta * t - self.log_normalizer

    def _cdf0(self, t):
        return np.expm1(-self.beta * t) / np.expm1(-self.beta)

    def _dcdf0_dbeta(self, t):
        beta = self.beta
        denom = -np.expm1(-beta)
        return (t * np.exp(-beta * t) * denom + np.expm1(-beta * t) * np.exp(-beta)) / denom**2

    def _dlog_pdf0_dt(self, t):
        return np.broadcast_to(-self.beta, np.shape(t)).astype(np.float64)

    def _dlog_pdf0_dbeta(self, t):
        return -t - (1.0 / np.expm1(self.beta) - 1.0 / self.beta)


@dataclass(frozen=True)
class UniformExpSmoothing(_Overlapping):
    """(1 - eps) * exponential smoothing + eps * uniform on [0, 1]."""

    beta: float | np.ndarray
    epsilon: float = DEFAULT_EPSILON
    name: ClassVar[str] = "unexp"
    _exp: ExponentialSmoothing = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not 0.0 < self.epsilon < 1.0:
            raise InvalidSmoothingError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        object.__setattr__(self, "_exp", ExponentialSmoothing(self.beta))
        object.__setattr__(self, "beta", self._exp.beta)

    def _log_pdf0(self, t):
        return np.logaddexp(math.log1p(-self.epsilon) + self._exp._log_pdf0(t), math.log(self.epsilon))

    def _cdf0(self, t):
        return (1.0 - self.epsilon) * self._exp._cdf0(t) + self.epsilon * t

    def _dcdf0_dbeta(self, t):
        return (1.0 - self.epsilon) * self._exp._dcdf0_dbeta(t)

    def _exp_share(self, t):
        # fraction of the density contributed by the exponential part
        return np.exp(math.log1p(-self.epsilon) + self._exp._log_pdf0(t) - self._log_pdf0(t))

    def _dlog_pdf0_dt(self, t):
        return self._exp_share(t) * self._exp._dlog_pdf0_dt(t)

    def _dlog_pdf0_dbeta(self, t):
        return self._exp_share(t) * self._exp._dlog_pdf0_dbeta(t)


@dataclass(frozen=True)
class PowerSmoothing(_Overlapping):
    """Power-function pair: Beta(1/beta, 1) for z=0 and Beta(1, 1/beta) for z=1.

    The density diverges at its endpoint, so log densities are evaluated at
    zeta clamped to [POWER_CLAMP, 1 - POWER_CLAMP]. ``pdf`` is the raw density.
    """

    beta: float | np.ndarray
    name: ClassVar[str] = "power"

    def __post_init__(self) -> None:
        object.__setattr__(self, "beta", _positive_beta(self.beta, minimum=1.0))

    def _clamped(self, t):
        return np.clip(t, POWER_CLAMP, 1.0 - POWER_CLAMP)

    def _log_pdf0(self, t):
        return -np.log(self.beta) + (1.0 / self.beta - 1.0) * np.log(self._clamped(t))

    def _pdf0(self, t):
        with np.errstate(divide="ignore"):
            return np.power(t, 1.0 / self.beta - 1.0) / self.beta

    def _cdf0(self, t):
        return np.power(np.maximum(t, 0.0), 1.0 / self.beta)

    def _dcdf0_dbeta(self, t):
        t = np.asarray(t, dtype=np.float64)
        positive = t > 0.0
        safe = np.where(positive, t, 1.0)
        return np.where(positive, -np.power(safe, 1.0 / self.beta) * np.log(safe) / self.beta**2, 0.0)

    def _dlog_pdf0_dt(self, t):
        t = np.asarray(t, dtype=np.float64)
        inside = (t > POWER_CLAMP) & (t < 1.0 - POWER_CLAMP)
        return np.where(inside, (1.0 / self.beta - 1.0) / self._clamped(t), 0.0)

    def _dlog_pdf0_dbeta(self, t):
        return -1.0 / self.beta - np.log(self._clamped(t)) / self.beta**2


@dataclass(frozen=True)
class GaussianSmoothing:
    """r(zeta|z) = N(zeta | z + shift, 1/beta) on the real line."""

    beta: float | np.ndarray
    shift: float | np.ndarray = 0.0
    name: ClassVar[str] = "gauss"
    symmetric: ClassVar[bool] = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "beta", _positive_beta(self.beta))
        shift = np.asarray(self.shift, dtype=np.float64)
        object.__setattr__(self, "shift", float(shift) if shift.ndim == 0 else shift)

    def _offset(self, z, zeta):
        return np.asarray(zeta, dtype=np.float64) - (np.asarray(z, dtype=np.float64) + self.shift)

    def log_pdf(self, z, zeta):
        d = self._offset(z, zeta)
        return 0.5 * np.log(self.beta / (2.0 * np.pi)) - 0.5 * self.beta * d * d

    def pdf(self, z, zeta):
        return np.exp(self.log_pdf(z, zeta))

    def cdf(self, z, zeta):
        return ndtr(np.sqrt(self.beta) * self._offset(z, zeta))

    def dcdf_dbeta(self, z, zeta):
        d = self._offset(z, zeta)
        s = np.sqrt(self.beta)
        return np.exp(-0.5 * self.beta * d * d) / np.sqrt(2.0 * np.pi) * d / (2.0 * s)

    def dlog_pdf_dzeta(self, z, zeta):
        return -self.beta * self._offset(z, zeta)

    def dlog_pdf_dbeta(self, z, zeta):
        d = self._offset(z, zeta)
        return 0.5 / self.beta - 0.5 * d * d

    def bracket(self) -> tuple[np.ndarray, np.ndarray]:
        width = 12.0 / np.sqrt(self.beta)
        shift = np.asarray(self.shift, dtype=np.float64)
        return shift - width, 1.0 + shift + width

    def check_support(self, zeta):
        zeta = np.asarray(zeta, dtype=np.float64)
        if np.any(~np.isfinite(zeta)):
            raise SupportError("Gaussian smoothing needs finite zeta")
        return zeta

    def coefficients(self, zeta) -> AugmentedCoefficients:
        return _coefficients(self, self.check_support(zeta))


@dataclass(frozen=True)
class ShiftedGaussianSmoothing(GaussianSmoothing):
    """Posterior-side Gaussian smoothing with per-unit beta and a shift from the encoder.

    A sample moves one-for-one with the shift, so d zeta / d shift = 1 and
    d log r / d shift = -d log r / d zeta.
    """

    name: ClassVar[str] = "git"
    symmetric: ClassVar[bool] = False


SMOOTHING_FAMILIES: dict[str, type] = {
    "exp": ExponentialSmoothing,
    "unexp": UniformExpSmoothing,
    "power": PowerSmoothing,
    "gauss": GaussianSmoothing,
    "git": ShiftedGaussianSmoothing,
}


def make_smoothing(name: str, beta, epsilon: float = DEFAULT_EPSILON) -> Smoothing:
    """Build a family from its CLI name (exp, unexp, power, gauss, git)."""
    try:
        family = SMOOTHING_FAMILIES[name]
    except KeyError:
        raise InvalidSmoothingError(
            f"unknown smoothing {name!r}; choose from {', '.join(SMOOTHING_FAMILIES)}"
        ) from None
    if family is UniformExpSmoothing:
        return family(beta, epsilon)
    return family(beta)


def _coefficients(kind: Smoothing, zeta: np.ndarray) -> AugmentedCoefficients:
    lp0, lp1 = kind.log_pdf(0, zeta), kind.log_pdf(1, zeta)
    d0, d1 = kind.dlog_pdf_dzeta(0, zeta), kind.dlog_pdf_dzeta(1, zeta)
    return AugmentedCoefficients(b=lp1 - lp0, c=lp0, db=d1 - d0, dc=d0)


def evaluate(kind: Smoothing, z: int, zeta) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(pdf, cdf, log_pdf) of r(zeta|z); pdf is exp(log_pdf), so clamping applies."""
    if z not in (0, 1):
        raise ValueError(f"z must be 0 or 1, got {z!r}")
    zeta = kind.check_support(zeta)
    log_pdf = kind.log_pdf(z, zeta)
    return np.exp(log_pdf), kind.cdf(z, zeta), log_pdf


def coefficients(kind: Smoothing, zeta) -> AugmentedCoefficients:
    """b_i = log r(zeta_i|1) - log r(zeta_i|0) and c_i = log r(zeta_i|0), with zeta-derivatives."""
    return kind.coefficients(zeta)


class MixtureTerms(NamedTuple):
    log_pdf: np.ndarray
    cdf: np.ndarray
    responsibility: np.ndarray  # posterior weight of the z=1 component


def mixture_terms_from_logits(kind: Smoothing, logits, zeta) -> MixtureTerms:
    """Mixture (1-q) r(.|0) + q r(.|1) with q = sigmoid(logits), computed in log space."""
    logits = np.asarray(logits, dtype=np.float64)
    log_q1, log_q0 = log_expit(logits), log_expit(-logits)
    lp0 = log_q0 + kind.log_pdf(0, zeta)
    lp1 = log_q1 + kind.log_pdf(1, zeta)
    log_pdf = np.logaddexp(lp0, lp1)
    q = np.exp(log_q1)
    cdf = (1.0 - q) * kind.cdf(0, zeta) + q * kind.cdf(1, zeta)
    return MixtureTerms(log_pdf, cdf, np.exp(lp1 - log_pdf))


def mixture_evaluate(kind: Smoothing, q, zeta) -> tuple[np.ndarray, np.ndarray]:
    """(pdf, cdf) of the mixture with weight q on the z=1 component."""
    q = np.asarray(q, dtype=np.float64)
    if np.any((q < 0.0) | (q > 1.0)):
        raise ValueError("mixture weight q must lie in [0, 1]")
    zeta = kind.check_support(zeta)
    pdf = (1.0 - q) * np.exp(kind.log_pdf(0, zeta)) + q * np.exp(kind.log_pdf(1, zeta))
    cdf = (1.0 - q) * kind.cdf(0, zeta) + q * kind.cdf(1, zeta)
    return pdf, cdf
