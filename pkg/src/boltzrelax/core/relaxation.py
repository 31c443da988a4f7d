"""Continuous relaxations of the Boltzmann prior.

Two priors over zeta are provided:

* the overlapping relaxation p(zeta) = sum_z p(z) r(zeta|z), whose log
  partition over the augmented energy is approximated by a mean-field fit;
* the Gaussian integral trick, where r(zeta|z) = N(zeta | z, (W + beta I)^-1)
  makes the pairwise terms cancel so z marginalizes in closed form.

Training-time log-probabilities exclude -log Z_theta; its gradient is the
negative phase supplied by a sampler.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple, Protocol

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.special import entr, expit

from boltzrelax.core.rbm import (
    RBM,
    AugmentedCoefficients,
    augmented_energy,
    augmented_log_partition,
)
from boltzrelax.core.samplers import NegativePhase, negative_phase
from boltzrelax.core.smoothing import Smoothing
from boltzrelax.errors import DimensionError, NotPositiveDefiniteError

logger = logging.getLogger(__name__)

M_CLAMP = 1e-7
POWER_ITERATIONS = 200


@dataclass
class MeanFieldSolution:
    """Factorial marginals m_i = m(z_i = 1); fields carry any leading batch shape."""

    m: np.ndarray
    entropy: np.ndarray | float
    unnormalized_log_prob: np.ndarray | float
    kl_to_target: np.ndarray | float | None = None


class PriorGrads(NamedTuple):
    a: np.ndarray
    W: np.ndarray
    zeta: np.ndarray


def _entropy(m: np.ndarray) -> np.ndarray | float:
    value = np.sum(entr(m) + entr(1.0 - m), axis=-1)
    return float(value) if np.ndim(value) == 0 else value


def _check_coefficients(rbm: RBM, coeffs: AugmentedCoefficients) -> tuple[np.ndarray, np.ndarray]:
    b = np.asarray(coeffs.b, dtype=np.float64)
    if b.shape[-1] != rbm.D:
        raise DimensionError(f"coefficients have length {b.shape[-1]}, RBM has D = {rbm.D}")
    return b, np.asarray(coeffs.c, dtype=np.float64)


def mean_field_sweep(rbm: RBM, coeffs: AugmentedCoefficients, m: np.ndarray) -> np.ndarray:
    """One sequential pass m_i <- sigma(a_i + b_i + sum_j W_ij m_j), i = 0..D-1."""
    b, _ = _check_coefficients(rbm, coeffs)
    m = np.array(m, dtype=np.float64)
    field = rbm.a + b
    for i in range(rbm.D):
        m[..., i] = expit(field[..., i] + m @ rbm.W[:, i])
    return m


def _solution(rbm: RBM, coeffs: AugmentedCoefficients, m: np.ndarray) -> MeanFieldSolution:
    m = np.clip(m, M_CLAMP, 1.0 - M_CLAMP)
    entropy = _entropy(m)
    return MeanFieldSolution(m, entropy, entropy - augmented_energy(rbm, coeffs, m))


def mean_field_fit(
    rbm: RBM,
    coeffs: AugmentedCoefficients,
    iterations: int,
    *,
    exact_kl: bool = False,
) -> MeanFieldSolution:
    """Fit m to the augmented Boltzmann machine by ``iterations`` sequential sweeps.

    Starts from sigma(a + b). The returned ``unnormalized_log_prob`` is
    H(m) - E_hat(m), a lower bound on the augmented log partition.
    """
    if iterations < 1:
        raise ValueError("mean-field fit needs at least one sweep")
    b, _ = _check_coefficients(rbm, coeffs)
    m = expit(rbm.a + b)
    for _ in range(iterations):
        m = mean_field_sweep(rbm, coeffs, m)
    solution = _solution(rbm, coeffs, m)
    if exact_kl:
        solution.kl_to_target = mean_field_kl_exact(rbm, coeffs, solution.m)
    return solution


def mean_field_kl_exact(rbm: RBM, coeffs: AugmentedCoefficients, m: np.ndarray) -> float:
    """KL(m || p_hat) = E_hat(m) + log sum_z exp(-E_hat(z)) - H(m) for a single zeta."""
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (rbm.D,):
        raise DimensionError(f"m has shape {m.shape}, expected ({rbm.D},)")
    value = augmented_energy(rbm, coeffs, m) + augmented_log_partition(rbm, coeffs) - _entropy(m)
    return max(float(value), 0.0)


def relaxed_log_prob(
    rbm: RBM, kind: Smoothing, zeta: np.ndarray, mf_iterations: int
) -> tuple[np.ndarray | float, MeanFieldSolution]:
    """Mean-field estimate of log sum_z exp(-E(z)) r(zeta|z), i.e. log p(zeta) + log Z_theta."""
    zeta = np.asarray(zeta, dtype=np.float64)
    if zeta.shape[-1] != rbm.D:
        raise DimensionError(f"zeta has length {zeta.shape[-1]}, RBM has D = {rbm.D}")
    solution = mean_field_fit(rbm, kind.coefficients(zeta), mf_iterations)
    return solution.unnormalized_log_prob, solution


def _as_negative(negative: NegativePhase | np.ndarray) -> NegativePhase:
    if isinstance(negative, NegativePhase):
        return negative
    return negative_phase(negative)


def _weights(zeta: np.ndarray, weights: np.ndarray | None) -> np.ndarray:
    if zeta.ndim == 1:
        return np.ones(())
    if weights is None:
        return np.ones(zeta.shape[0])
    return np.asarray(weights, dtype=np.float64)


def relaxed_log_prob_grads(
    rbm: RBM,
    kind: Smoothing,
    zeta: np.ndarray,
    m: MeanFieldSolution,
    negative_samples: NegativePhase | np.ndarray,
    weights: np.ndarray | None = None,
) -> PriorGrads:
    """Gradients of H(m) - E_hat(m) - log Z_theta with m held fixed.

    grad_a = m - E[z] and grad_W = m m^T - E[z z^T] (masked); grad_zeta = m db + dc.
    For a (N, D) batch the a/W gradients are the ``weights``-weighted sums over
    rows, with the negative phase scaled by sum(weights); grad_zeta stays per row.
    """
    zeta = np.asarray(zeta, dtype=np.float64)
    neg = _as_negative(negative_samples)
    coeffs = kind.coefficients(zeta)
    w = _weights(zeta, weights)
    mm = m.m
    total = float(np.sum(w))
    if zeta.ndim == 1:
        pos_a, pos_W = mm, np.outer(mm, mm)
    else:
        pos_a = w @ mm
        pos_W = (mm * w[:, None]).T @ mm
    grad_a = pos_a - total * neg.mean_z
    grad_W = (pos_W - total * neg.mean_zz) * rbm.mask
    grad_zeta = mm * coeffs.db + coeffs.dc
    return PriorGrads(grad_a, grad_W, grad_zeta)


@dataclass
class GitPrior:
    """Precision W + beta I with its Cholesky factor and 1/2 log|precision / (2 pi)|."""

    beta: float
    precision: np.ndarray
    chol: tuple[np.ndarray, bool]
    log_det_term: float

    @property
    def D(self) -> int:
        return self.precision.shape[0]

    def covariance(self) -> np.ndarray:
        return cho_solve(self.chol, np.eye(self.D))


def negative_eigenvalue_bound(W: np.ndarray, iterations: int = POWER_ITERATIONS) -> float:
    """Lower bound on -lambda_min(W) from power iteration on (r I - W).

    r is the Gershgorin radius, so r I - W is positive semidefinite and its
    Rayleigh quotient never exceeds r - lambda_min.
    """
    W = np.asarray(W, dtype=np.float64)
    D = W.shape[0]
    radius = float(np.max(np.sum(np.abs(W), axis=1))) if D else 0.0
    shifted = radius * np.eye(D) - W
    v = np.linspace(1.0, 2.0, D)
    v /= np.linalg.norm(v)
    quotient = 0.0
    for _ in range(iterations):
        u = shifted @ v
        norm = np.linalg.norm(u)
        if norm == 0.0:
            break
        quotient = float(v @ u)
        v = u / norm
    return max(quotient - radius, 0.0)


def git_prepare(rbm: RBM, beta: float) -> GitPrior:
    """Factor W + beta I, raising NotPositiveDefiniteError with a usable lower bound on beta."""
    precision = rbm.W + beta * np.eye(rbm.D)
    try:
        chol = cho_factor(precision, lower=True)
    except LinAlgError:
        raise NotPositiveDefiniteError(beta, negative_eigenvalue_bound(rbm.W)) from None
    diag = np.diag(chol[0])
    if np.any(diag <= 0.0) or not np.all(np.isfinite(diag)):
        raise NotPositiveDefiniteError(beta, negative_eigenvalue_bound(rbm.W))
    log_det_term = float(np.sum(np.log(diag))) - 0.5 * rbm.D * math.log(2.0 * math.pi)
    return GitPrior(float(beta), precision, chol, log_det_term)


def _git_terms(prior: GitPrior, rbm: RBM, zeta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    zeta = np.asarray(zeta, dtype=np.float64)
    if prior.D != rbm.D or zeta.shape[-1] != rbm.D:
        raise DimensionError(
            f"GIT prior has D = {prior.D}, RBM D = {rbm.D}, zeta length {zeta.shape[-1]}"
        )
    pz = zeta @ prior.precision
    return zeta, pz


def git_log_prob(prior: GitPrior, rbm: RBM, zeta: np.ndarray) -> np.ndarray | float:
    """log sum_z exp(-E(z)) N(zeta | z, (W + beta I)^-1), i.e. log p(zeta) + log Z_theta.

    = log_det_term - 1/2 zeta^T P zeta + sum_i softplus(a_i + (P zeta)_i - beta/2)
    """
    zeta, pz = _git_terms(prior, rbm, zeta)
    u = rbm.a + pz - 0.5 * prior.beta
    value = prior.log_det_term - 0.5 * np.sum(pz * zeta, axis=-1) + np.sum(np.logaddexp(0.0, u), axis=-1)
    return float(value) if np.ndim(value) == 0 else value


def git_log_prob_grads(
    prior: GitPrior,
    rbm: RBM,
    zeta: np.ndarray,
    negative: NegativePhase | np.ndarray,
    weights: np.ndarray | None = None,
) -> PriorGrads:
    """Gradients of git_log_prob - log Z_theta.

    With s = sigma(a + P zeta - beta/2):
    grad_zeta = P (s - zeta), grad_a = s - E[z],
    grad_W_ij = (P^-1)_ij - zeta_i zeta_j + s_i zeta_j + s_j zeta_i - E[z_i z_j] (masked).
    Batches are reduced as in :func:`relaxed_log_prob_grads`.
    """
    zeta, pz = _git_terms(prior, rbm, zeta)
    neg = _as_negative(negative)
    s = expit(rbm.a + pz - 0.5 * prior.beta)
    grad_zeta = (s - zeta) @ prior.precision
    w = _weights(zeta, weights)
    total = float(np.sum(w))
    cov = prior.covariance()
    if zeta.ndim == 1:
        pos_a = s
        cross = np.outer(s, zeta)
        pos_W = total * cov - np.outer(zeta, zeta) + cross + cross.T
    else:
        pos_a = w @ s
        wz = zeta * w[:, None]
        cross = s.T @ wz
        pos_W = total * cov - zeta.T @ wz + cross + cross.T
    grad_a = pos_a - total * neg.mean_z
    grad_W = (pos_W - total * neg.mean_zz) * rbm.mask
    return PriorGrads(grad_a, grad_W, grad_zeta)


class PriorTerms(NamedTuple):
    """Per-sample unnormalized log prior plus whatever its backward pass needs."""

    value: np.ndarray
    cache: object


class RelaxedPrior(Protocol):
    """Relaxed prior as used by the model: a forward value and weighted backward."""

    def log_prob(self, rbm: RBM, zeta: np.ndarray) -> PriorTerms: ...

    def grads(
        self,
        rbm: RBM,
        zeta: np.ndarray,
        terms: PriorTerms,
        negative: NegativePhase,
        weights: np.ndarray,
    ) -> PriorGrads: ...


@dataclass(frozen=True)
class OverlappingPrior:
    smoothing: Smoothing
    mf_iterations: int = 5

    def log_prob(self, rbm: RBM, zeta: np.ndarray) -> PriorTerms:
        value, solution = relaxed_log_prob(rbm, self.smoothing, zeta, self.mf_iterations)
        return PriorTerms(np.asarray(value), solution)

    def grads(self, rbm, zeta, terms, negative, weights) -> PriorGrads:
        return relaxed_log_prob_grads(rbm, self.smoothing, zeta, terms.cache, negative, weights)


@dataclass(frozen=True)
class GaussianIntegralPrior:
    beta: float

    def log_prob(self, rbm: RBM, zeta: np.ndarray) -> PriorTerms:
        prior = git_prepare(rbm, self.beta)
        return PriorTerms(np.asarray(git_log_prob(prior, rbm, zeta)), prior)

    def grads(self, rbm, zeta, terms, negative, weights) -> PriorGrads:
        return git_log_prob_grads(terms.cache, rbm, zeta, negative, weights)
