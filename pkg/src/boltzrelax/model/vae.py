"""Relaxed Boltzmann-prior VAE: hierarchical posterior, decoder and the importance-weighted bound.

The objective for a datum x with K posterior samples zeta_k is

    log mean_k exp(log p(x|zeta_k) + lam * (log p_rel(zeta_k) - log q(zeta_k|x)))

where log p_rel excludes -log Z_theta and ``lam`` is the KL warm-up
multiplier. Its gradient is assembled by hand: decoder and posterior
networks by layer-wise reverse passes, samples by implicit differentiation
of the inverse CDF, and the prior through a fixed mean-field (or Gaussian
integral) node plus the sampled negative phase.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import expit, log_expit, logsumexp

from boltzrelax.config import AppConfig
from boltzrelax.core.rbm import RBM, energy, enumerate_states, exact_log_partition
from boltzrelax.core.relaxation import (
    GaussianIntegralPrior,
    OverlappingPrior,
    PriorTerms,
    RelaxedPrior,
    mean_field_kl_exact,
)
from boltzrelax.core.reparam import implicit_grads, sample_inverse_cdf
from boltzrelax.core.samplers import NegativePhase, PersistentChains, draw_negative_phase
from boltzrelax.core.smoothing import (
    ShiftedGaussianSmoothing,
    Smoothing,
    make_smoothing,
    mixture_terms_from_logits,
)
from boltzrelax.errors import (
    DimensionError,
    EmptyBatchError,
    EnumerationLimitError,
    MissingLogPartitionError,
)
from boltzrelax.model.layers import Sequential, make_network
from boltzrelax.model.optim import Adam

logger = logging.getLogger(__name__)

RBM_INIT_SCALE = 0.01
EXACT_LIKELIHOOD_LIMIT = 16
KL_TRACK_ROWS = 16


@dataclass
class ModelState:
    config: AppConfig
    decoder: Sequential
    encoders: list[Sequential]
    rbm: RBM
    log_beta: np.ndarray | None
    optimizer: Adam
    smoothing: Smoothing | None
    updates: int = 0
    warmup_updates: int = 0
    chains: PersistentChains | None = None
    log_z_snapshot: float | None = None
    data_dim: int = field(init=False)

    def __post_init__(self) -> None:
        self.data_dim = self.decoder.layers[-1].params["W"].shape[1]

    @property
    def D(self) -> int:
        return self.rbm.D

    @property
    def groups(self) -> int:
        return len(self.encoders)

    @property
    def group_size(self) -> int:
        return self.D // self.groups

    @property
    def git(self) -> bool:
        return self.log_beta is not None

    def group_slice(self, g: int) -> slice:
        s = self.group_size
        return slice(g * s, (g + 1) * s)

    def parameters(self) -> dict[str, np.ndarray]:
        """Every trainable array by name; the arrays are live views, updated in place."""
        params = {"rbm.a": self.rbm.a, "rbm.W": self.rbm.W}
        params.update({f"decoder.{k}": v for k, v in self.decoder.params.items()})
        for g, net in enumerate(self.encoders):
            params.update({f"encoder{g}.{k}": v for k, v in net.params.items()})
        if self.log_beta is not None:
            params["posterior.log_beta"] = self.log_beta
        return params

    def zero_grad(self) -> None:
        self.decoder.zero_grad()
        for net in self.encoders:
            net.zero_grad()


def build_model(config: AppConfig, data_dim: int, rng: np.random.Generator) -> ModelState:
    """Fresh model: uniform +-1/sqrt(fan_in) networks, a = 0, W ~ U(+-0.01) on the bipartite blocks."""
    D1, D2 = config.prior.D1, config.prior.D2
    D = D1 + D2
    groups = config.posterior.groups
    size = D // groups
    git = config.smoothing.kind == "git"
    outputs = size * (2 if git else 1)

    decoder = make_network(D, data_dim, config.decoder, rng)
    encoders = [make_network(data_dim + g * size, outputs, config.posterior, rng) for g in range(groups)]
    rbm = RBM.from_blocks(np.zeros(D), rng.uniform(-RBM_INIT_SCALE, RBM_INIT_SCALE, size=(D1, D2)), D1)
    log_beta = np.full(D, math.log(config.smoothing.beta)) if git else None
    smoothing = None if git else make_smoothing(config.smoothing.kind, config.smoothing.beta, config.smoothing.epsilon)
    chains = PersistentChains.from_base(rbm, config.sampler.chains, rng) if config.sampler.kind == "pcd" else None
    return ModelState(
        config=config,
        decoder=decoder,
        encoders=encoders,
        rbm=rbm,
        log_beta=log_beta,
        optimizer=Adam(lr=config.train.lr),
        smoothing=smoothing,
        chains=chains,
    )


def relaxed_prior(state: ModelState) -> RelaxedPrior:
    if state.git:
        return GaussianIntegralPrior(state.config.prior.git_beta)
    return OverlappingPrior(state.smoothing, state.config.prior.mf_iterations)


def warmup_multiplier(updates: int, warmup_updates: int) -> float:
    """Linear ramp from 0 to 1 over the first ``warmup_updates`` updates."""
    if warmup_updates <= 0:
        return 1.0
    return min(1.0, updates / warmup_updates)


def bernoulli_log_likelihood(logits: np.ndarray, x: np.ndarray) -> np.ndarray:
    """sum_j log Bernoulli(x_j | sigmoid(logit_j)), exact at infinite logits."""
    return np.sum(np.where(x > 0.5, log_expit(logits), log_expit(-logits)), axis=-1)


def _as_batch(state: ModelState, x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.shape[-1] != state.data_dim:
        raise DimensionError(f"x has length {X.shape[-1]}, decoder expects {state.data_dim}")
    return X, single


# posterior


@dataclass
class PosteriorPass:
    zeta: np.ndarray
    log_q: np.ndarray
    logits: np.ndarray
    responsibility: np.ndarray
    kinds: list[Smoothing]


def _group_smoothing(state: ModelState, g: int, shift: np.ndarray | None) -> Smoothing:
    if state.git:
        return ShiftedGaussianSmoothing(np.exp(state.log_beta[state.group_slice(g)]), shift)
    return state.smoothing


def posterior_forward(state: ModelState, X: np.ndarray, rho: np.ndarray) -> PosteriorPass:
    """Sample zeta group by group for fixed uniforms ``rho`` (N, D).

    Network g sees (x, zeta_<g) and emits logits of q(z=1|x) for its group
    (followed by the shifts for shifted Gaussian smoothing).
    """
    N = X.shape[0]
    s = state.group_size
    zeta = np.zeros((N, state.D))
    logits = np.zeros((N, state.D))
    responsibility = np.zeros((N, state.D))
    log_q = np.zeros(N)
    kinds = []
    for g, net in enumerate(state.encoders):
        sl = state.group_slice(g)
        out = net.forward(np.concatenate([X, zeta[:, : g * s]], axis=1))
        logit = out[:, :s]
        kind = _group_smoothing(state, g, out[:, s:] if state.git else None)
        zeta[:, sl] = sample_inverse_cdf(kind, expit(logit), rho[:, sl])
        terms = mixture_terms_from_logits(kind, logit, zeta[:, sl])
        logits[:, sl] = logit
        responsibility[:, sl] = terms.responsibility
        log_q += terms.log_pdf.sum(axis=1)
        kinds.append(kind)
    return PosteriorPass(zeta, log_q, logits, responsibility, kinds)


def posterior_backward(
    state: ModelState, forward: PosteriorPass, g_zeta: np.ndarray, g_log_q: np.ndarray
) -> np.ndarray | None:
    """Push dL/dzeta and dL/dlog_q into the encoder gradients; returns dL/dlog_beta (GIT only).

    Groups are visited last to first so that every group's zeta gradient is
    complete, including what later networks received through their inputs,
    before it is sent through that group's sampler.
    """
    g_zeta = g_zeta.copy()
    s = state.group_size
    dx = state.data_dim
    grad_log_beta = np.zeros(state.D) if state.git else None
    for g in reversed(range(state.groups)):
        sl = state.group_slice(g)
        kind = forward.kinds[g]
        zeta_g = forward.zeta[:, sl]
        logit = forward.logits[:, sl]
        q = expit(logit)
        pi1 = forward.responsibility[:, sl]
        pi0 = 1.0 - pi1
        w = g_log_q[:, None]

        dlogq_dzeta = pi0 * kind.dlog_pdf_dzeta(0, zeta_g) + pi1 * kind.dlog_pdf_dzeta(1, zeta_g)
        g_zeta[:, sl] += w * dlogq_dzeta
        upstream = g_zeta[:, sl]
        implicit = implicit_grads(kind, q, zeta_g)

        g_logit = w * (pi1 - q) + upstream * implicit.dzeta_dq * q * (1.0 - q)
        if state.git:
            # zeta moves one-for-one with the shift; log q sees it with opposite sign
            g_shift = -w * dlogq_dzeta + upstream
            g_beta = w * (pi0 * kind.dlog_pdf_dbeta(0, zeta_g) + pi1 * kind.dlog_pdf_dbeta(1, zeta_g))
            g_beta = g_beta + upstream * implicit.dzeta_dbeta
            grad_log_beta[sl] += g_beta.sum(axis=0) * kind.beta
            g_out = np.concatenate([g_logit, g_shift], axis=1)
        else:
            g_out = g_logit
        g_in = state.encoders[g].backward(g_out)
        if g:
            g_zeta[:, : g * s] += g_in[:, dx:]
    return grad_log_beta


def posterior_sample(
    state: ModelState, x: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray | float, np.ndarray]:
    """(zeta, log q(zeta|x), logits) for one datum or a batch."""
    X, single = _as_batch(state, x)
    forward = posterior_forward(state, X, rng.random((X.shape[0], state.D)))
    if single:
        return forward.zeta[0], float(forward.log_q[0]), forward.logits[0]
    return forward.zeta, forward.log_q, forward.logits


# decoder


def decoder_log_likelihood(state: ModelState, zeta: np.ndarray, x: np.ndarray) -> np.ndarray | float:
    """Factorial Bernoulli log p(x|zeta) with logits from the decoder network."""
    value = bernoulli_log_likelihood(state.decoder.forward(np.asarray(zeta, dtype=np.float64)), np.asarray(x))
    return float(value) if np.ndim(value) == 0 else value


def _decoder_backward(state: ModelState, logits: np.ndarray, X: np.ndarray, g_ll: np.ndarray) -> np.ndarray:
    return state.decoder.backward(g_ll[:, None] * (X - expit(logits)))


# objective


class Forward(NamedTuple):
    X: np.ndarray
    posterior: PosteriorPass
    decoder_logits: np.ndarray
    log_likelihood: np.ndarray
    prior: PriorTerms
    log_w: np.ndarray


class ObjectiveResult(NamedTuple):
    value: float
    log_w: np.ndarray
    grads: dict[str, np.ndarray]
    zeta: np.ndarray
    prior: PriorTerms


def _forward(state: ModelState, X: np.ndarray, rho: np.ndarray, warmup: float) -> Forward:
    B, K = rho.shape[0], rho.shape[1]
    if B == 0:
        raise EmptyBatchError("minibatch is empty")
    if rho.shape != (B, K, state.D) or X.shape[0] != B:
        raise DimensionError(f"rho has shape {rho.shape}, expected ({X.shape[0]}, K, {state.D})")
    Xr = np.repeat(X, K, axis=0)
    posterior = posterior_forward(state, Xr, rho.reshape(B * K, state.D))
    decoder_logits = state.decoder.forward(posterior.zeta)
    ll = bernoulli_log_likelihood(decoder_logits, Xr)
    prior = relaxed_prior(state).log_prob(state.rbm, posterior.zeta)
    log_w = ll + warmup * (prior.value - posterior.log_q)
    return Forward(Xr, posterior, decoder_logits, ll, prior, log_w.reshape(B, K))


def _bounds(log_w: np.ndarray) -> np.ndarray:
    return logsumexp(log_w, axis=1) - math.log(log_w.shape[1])


def objective_and_grads(
    state: ModelState,
    X: np.ndarray,
    rho: np.ndarray,
    negative: NegativePhase,
    warmup: float = 1.0,
) -> ObjectiveResult:
    """Mean importance-weighted bound over the batch and its gradient for frozen noise.

    ``rho`` (B, K, D) fixes the posterior uniforms and ``negative`` the model
    expectations, so the value is a deterministic function of the parameters.
    The value omits -warmup * log Z_theta per datum; the gradients include it
    through ``negative``.
    """
    X = np.asarray(X, dtype=np.float64)
    rho = np.asarray(rho, dtype=np.float64)
    state.zero_grad()
    fwd = _forward(state, X, rho, warmup)
    B, K = fwd.log_w.shape
    value = float(np.mean(_bounds(fwd.log_w)))

    # normalized importance weights, averaged over the batch
    u = (np.exp(fwd.log_w - logsumexp(fwd.log_w, axis=1, keepdims=True)) / B).reshape(B * K)

    g_zeta = _decoder_backward(state, fwd.decoder_logits, fwd.X, u)
    prior_grads = relaxed_prior(state).grads(
        state.rbm, fwd.posterior.zeta, fwd.prior, negative, warmup * u
    )
    g_zeta = g_zeta + (warmup * u)[:, None] * prior_grads.zeta
    grad_log_beta = posterior_backward(state, fwd.posterior, g_zeta, -warmup * u)

    grads = {"rbm.a": prior_grads.a, "rbm.W": prior_grads.W}
    grads.update({f"decoder.{k}": v for k, v in state.decoder.grads.items()})
    for g, net in enumerate(state.encoders):
        grads.update({f"encoder{g}.{k}": v for k, v in net.grads.items()})
    if grad_log_beta is not None:
        grads["posterior.log_beta"] = grad_log_beta
    return ObjectiveResult(value, fwd.log_w, grads, fwd.posterior.zeta, fwd.prior)


def iw_bound(state: ModelState, x: np.ndarray, K: int, rng: np.random.Generator):
    """(bound, per-sample log weights) for one datum, or arrays of both for a batch.

    The prior term is unnormalized, so the bound is exact up to -log Z_theta.
    """
    if K < 1:
        raise ValueError(f"K must be at least 1, got {K}")
    X, single = _as_batch(state, x)
    rho = rng.random((X.shape[0], K, state.D))
    log_w = _forward(state, X, rho, 1.0).log_w
    bounds = _bounds(log_w)
    if single:
        return float(bounds[0]), log_w[0]
    return bounds, log_w


def _mf_kl_median(state: ModelState, result: ObjectiveResult) -> float:
    if state.git or state.D > 20:
        return float("nan")
    zeta = result.zeta[:KL_TRACK_ROWS]
    solution = result.prior.cache
    kls = [
        mean_field_kl_exact(state.rbm, state.smoothing.coefficients(row), solution.m[i])
        for i, row in enumerate(zeta)
    ]
    return float(np.median(kls))


def iw_gradient_step(
    state: ModelState,
    minibatch: np.ndarray,
    K: int,
    rng: np.random.Generator,
    *,
    track_kl: bool = False,
) -> dict[str, float | bool]:
    """One Adam ascent step on the warmed-up IW objective; non-finite gradients skip the update."""
    X = np.asarray(minibatch, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyBatchError("minibatch is empty")
    if K < 1:
        raise ValueError(f"K must be at least 1, got {K}")
    warmup = warmup_multiplier(state.updates, state.warmup_updates)
    negative, annealing = draw_negative_phase(state.rbm, state.config.sampler, rng, state.chains)
    rho = rng.random((X.shape[0], K, state.D))
    result = objective_and_grads(state, X, rho, negative, warmup)

    grad_norm = math.sqrt(sum(float(np.sum(g * g)) for g in result.grads.values()))
    skipped = not (math.isfinite(grad_norm) and math.isfinite(result.value))
    metrics: dict[str, float | bool] = {
        "bound": result.value,
        "grad_norm": grad_norm,
        "warmup": warmup,
        "skipped": skipped,
        "pa_collapsed": bool(annealing.collapsed) if annealing is not None else False,
        "mf_kl_median": _mf_kl_median(state, result) if track_kl and not skipped else float("nan"),
    }
    if skipped:
        logger.warning("Non-finite gradient at update %d; update skipped", state.updates)
    else:
        state.optimizer.step(state.parameters(), result.grads)
    state.updates += 1
    return metrics


# discrete evaluation


def _discrete_posterior(
    state: ModelState, X: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    N = X.shape[0]
    s = state.group_size
    z = np.zeros((N, state.D))
    log_q = np.zeros(N)
    for g, net in enumerate(state.encoders):
        sl = state.group_slice(g)
        logit = net.forward(np.concatenate([X, z[:, : g * s]], axis=1))[:, :s]
        z[:, sl] = (rng.random(logit.shape) < expit(logit)).astype(np.float64)
        log_q += bernoulli_log_likelihood(logit, z[:, sl])
    return z, log_q


def discrete_eval_ll(
    state: ModelState,
    x: np.ndarray,
    K: int = 4000,
    rng: np.random.Generator | None = None,
    log_z: float | None = None,
) -> np.ndarray | float:
    """K-sample IW bound of log p(x) under the discrete model p(z) p(x|z).

    z is drawn from the Bernoulli posterior (groups fed binary z), and
    ``log_z`` is an externally supplied (AIS) estimate of log Z_theta.
    """
    if log_z is None:
        raise MissingLogPartitionError("discrete evaluation needs an estimate of log Z")
    if rng is None:
        raise ValueError("discrete evaluation needs a random generator")
    if K < 1:
        raise ValueError(f"K must be at least 1, got {K}")
    X, single = _as_batch(state, x)
    bounds = np.empty(X.shape[0])
    for i, row in enumerate(X):
        Xr = np.broadcast_to(row, (K, row.size))
        z, log_q = _discrete_posterior(state, Xr, rng)
        log_w = -energy(state.rbm, z) - log_z + decoder_log_likelihood(state, z, Xr) - log_q
        bounds[i] = logsumexp(log_w) - math.log(K)
    return float(bounds[0]) if single else bounds


def exact_discrete_log_likelihood(
    state: ModelState, x: np.ndarray, log_z: float | None = None
) -> np.ndarray | float:
    """log sum_z p(z) p(x|z) by enumerating all 2^D latent states (D <= 16)."""
    if state.D > EXACT_LIKELIHOOD_LIMIT:
        raise EnumerationLimitError(state.D, EXACT_LIKELIHOOD_LIMIT)
    X, single = _as_batch(state, x)
    if log_z is None:
        log_z = exact_log_partition(state.rbm)
    total = np.full(X.shape[0], -np.inf)
    for states in enumerate_states(state.D):
        logits = state.decoder.forward(states)
        # log p(x|z) for every (state, datum) pair; logit * x sums the Bernoulli log-odds
        ll = log_expit(-logits).sum(axis=1)[:, None] + logits @ X.T
        log_joint = (-energy(state.rbm, states) - log_z)[:, None] + ll
        total = np.logaddexp(total, logsumexp(log_joint, axis=0))
    return float(total[0]) if single else total
