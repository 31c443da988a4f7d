"""Negative-phase samplers for bipartite RBMs and annealed log-partition estimates.

Both annealers move along the path p_t(z) ∝ exp(a^T z + t/2 z^T W z), t in [0, 1],
whose t = 0 end is the factorial model sigma(a) with exactly known log Z.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import expit, logsumexp

from boltzrelax.config import AisConfig, SamplerConfig
from boltzrelax.core.rbm import RBM, block_gibbs_sweep, exact_moments
from boltzrelax.errors import DimensionError, EmptyBatchError, NotBipartiteError

logger = logging.getLogger(__name__)

BOOTSTRAP_RESAMPLES = 200
COLLAPSE_ESS = 2.0


class NegativePhase(NamedTuple):
    """Model expectations E[z] and E[z z^T] entering the log-partition gradient."""

    mean_z: np.ndarray
    mean_zz: np.ndarray


class PopulationAnnealingResult(NamedTuple):
    samples: np.ndarray
    log_z: float
    min_ess: float
    collapsed: bool


class AisResult(NamedTuple):
    estimate: float
    std_error: float
    log_weights: np.ndarray


@dataclass
class PersistentChains:
    """PCD chain states, shape (chains, D); advanced in place by :func:`pcd_negative_samples`."""

    state: np.ndarray

    @classmethod
    def from_base(cls, rbm: RBM, n_chains: int, rng: np.random.Generator) -> PersistentChains:
        return cls(_base_sample(rbm, n_chains, rng))

    @property
    def D(self) -> int:
        return self.state.shape[1]


def _base_sample(rbm: RBM, n: int, rng: np.random.Generator) -> np.ndarray:
    return (rng.random((n, rbm.D)) < expit(rbm.a)).astype(np.float64)


def _base_log_partition(rbm: RBM) -> float:
    return float(np.sum(np.logaddexp(0.0, rbm.a)))


def _half_coupling(rbm: RBM, z: np.ndarray) -> np.ndarray:
    return 0.5 * np.sum((z @ rbm.W) * z, axis=1)


def _require_bipartite(rbm: RBM) -> None:
    if rbm.bipartite is None:
        raise NotBipartiteError("samplers need a bipartite RBM")


def effective_sample_size(log_w: np.ndarray) -> float:
    """(sum w)^2 / sum w^2, computed from log weights."""
    log_w = np.asarray(log_w, dtype=np.float64)
    return float(np.exp(2.0 * logsumexp(log_w) - logsumexp(2.0 * log_w)))


def systematic_resample(log_w: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Indices of a systematic (low-variance) resample; output size equals input size."""
    log_w = np.asarray(log_w, dtype=np.float64)
    n = log_w.size
    weights = np.exp(log_w - logsumexp(log_w))
    positions = (rng.random() + np.arange(n)) / n
    cumulative = np.cumsum(weights)
    cumulative[-1] = 1.0
    return np.minimum(np.searchsorted(cumulative, positions, side="right"), n - 1)


def pcd_negative_samples(
    rbm: RBM,
    chains: PersistentChains,
    config: SamplerConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Advance every persistent chain by ``sweeps_per_update`` block Gibbs sweeps.

    The chains are updated in place and a copy of the new states is returned.
    """
    _require_bipartite(rbm)
    if chains.D != rbm.D:
        raise DimensionError(f"persistent chains have D = {chains.D}, RBM has D = {rbm.D}")
    state = chains.state
    for _ in range(config.sweeps_per_update):
        state = block_gibbs_sweep(rbm, state, rng)
    chains.state = state
    return state.copy()


def population_annealing_run(
    rbm: RBM, config: SamplerConfig, rng: np.random.Generator
) -> PopulationAnnealingResult:
    """Anneal a population from t = 0 to t = 1 on a linear grid of ``pa_temperatures`` steps.

    Each step reweights by the Boltzmann factor of the temperature increment,
    resamples systematically when the effective sample size drops below half
    the population, then applies Gibbs sweeps at the new temperature. log Z
    accumulates the log mean weight of every resampling epoch.
    """
    _require_bipartite(rbm)
    n = config.chains
    steps = config.pa_temperatures
    sweeps = math.ceil(config.sweeps_per_update / steps)
    grid = np.linspace(0.0, 1.0, steps + 1)

    population = _base_sample(rbm, n, rng)
    log_z = _base_log_partition(rbm)
    log_w = np.zeros(n)
    min_ess = float(n)

    for t_prev, t in zip(grid[:-1], grid[1:]):
        log_w = log_w + (t - t_prev) * _half_coupling(rbm, population)
        ess = effective_sample_size(log_w)
        min_ess = min(min_ess, ess)
        if ess < 0.5 * n:
            log_z += float(logsumexp(log_w) - math.log(n))
            population = population[systematic_resample(log_w, rng)]
            log_w = np.zeros(n)
        target = rbm.scaled(t)
        for _ in range(sweeps):
            population = block_gibbs_sweep(target, population, rng)

    log_z += float(logsumexp(log_w) - math.log(n))
    if np.ptp(log_w) > 0.0:
        population = population[systematic_resample(log_w, rng)]

    collapsed = min_ess < COLLAPSE_ESS
    if collapsed:
        logger.warning("Population annealing collapsed (min ESS %.2f of %d)", min_ess, n)
    return PopulationAnnealingResult(population, log_z, min_ess, collapsed)


def ais_log_partition(rbm: RBM, config: AisConfig, rng: np.random.Generator) -> AisResult:
    """Annealed importance sampling estimate of log Z with a bootstrap standard error.

    The estimate is log Z_0 + log mean exp(log_w); the standard error is the
    spread of that quantity over resampled sets of log weights.
    """
    _require_bipartite(rbm)
    grid = config.grid()
    samples = _base_sample(rbm, config.num_samples, rng)
    log_w = np.zeros(config.num_samples)
    last = len(grid) - 1
    for k in range(1, len(grid)):
        log_w += (grid[k] - grid[k - 1]) * _half_coupling(rbm, samples)
        if k < last:
            samples = block_gibbs_sweep(rbm.scaled(grid[k]), samples, rng)

    base = _base_log_partition(rbm)
    n = log_w.size
    estimate = base + float(logsumexp(log_w) - math.log(n))
    if n > 1 and np.ptp(log_w) > 0.0:
        idx = rng.integers(0, n, size=(BOOTSTRAP_RESAMPLES, n))
        boot = logsumexp(log_w[idx], axis=1) - math.log(n)
        std_error = float(np.std(boot, ddof=1))
    else:
        std_error = 0.0
    logger.debug("AIS log Z = %.4f +- %.4f (%d temperatures)", estimate, std_error, len(grid))
    return AisResult(estimate, std_error, log_w)


def negative_phase(samples: np.ndarray) -> NegativePhase:
    """Sample moments of a (n, D) batch of binary states."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[0] == 0:
        raise EmptyBatchError("negative phase needs a non-empty (n, D) sample batch")
    n = samples.shape[0]
    return NegativePhase(samples.mean(axis=0), samples.T @ samples / n)


def exact_negative_phase(rbm: RBM) -> NegativePhase:
    return NegativePhase(*exact_moments(rbm))


def draw_negative_phase(
    rbm: RBM,
    config: SamplerConfig,
    rng: np.random.Generator,
    chains: PersistentChains | None = None,
) -> tuple[NegativePhase, PopulationAnnealingResult | None]:
    """One negative-phase estimate with the configured sampler (chains are required for PCD)."""
    if config.kind == "pcd":
        if chains is None:
            raise ValueError("PCD sampling needs persistent chains")
        return negative_phase(pcd_negative_samples(rbm, chains, config, rng)), None
    result = population_annealing_run(rbm, config, rng)
    return negative_phase(result.samples), result
