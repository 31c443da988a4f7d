"""Tests for the relaxed-prior VAE: sampling, bounds, gradients and discrete evaluation."""

import math

import numpy as np
import pytest
from scipy.special import expit, logsumexp
from scipy.stats import ttest_ind, ttest_rel

from boltzrelax.config import AppConfig
from boltzrelax.core.rbm import RBM, energy, enumerate_states, exact_log_partition, exact_relaxed_log_prob
from boltzrelax.core.reparam import mixture_cdf, mixture_pdf
from boltzrelax.core.rng import make_rng
from boltzrelax.core.samplers import exact_negative_phase
from boltzrelax.core.smoothing import ExponentialSmoothing
from boltzrelax.errors import EmptyBatchError, MissingLogPartitionError
from boltzrelax.model.vae import (
    bernoulli_log_likelihood,
    build_model,
    decoder_log_likelihood,
    discrete_eval_ll,
    exact_discrete_log_likelihood,
    iw_bound,
    iw_gradient_step,
    objective_and_grads,
    posterior_forward,
    posterior_sample,
    warmup_multiplier,
)
from tests.gradcheck import central_difference, rel_error, symmetric_pair_difference

DATA_DIM = 5


def _config(**sections) -> AppConfig:
    data = {
        "prior": {"D1": 3, "D2": 3, "mf_iterations": 5},
        "smoothing": {"kind": "exp", "beta": 5.0},
        "posterior": {"groups": 2},
        "sampler": {"kind": "pcd", "chains": 20, "sweeps_per_update": 2},
        "train": {"seed": 0, "lr": 1e-2},
    }
    for name, values in sections.items():
        data.setdefault(name, {}).update(values)
    return AppConfig.model_validate(data)


def _model(seed=0, **sections):
    return build_model(_config(**sections), DATA_DIM, make_rng(seed))


def _zero_networks(state):
    for net in [state.decoder, *state.encoders]:
        for value in net.params.values():
            value[...] = 0.0


def _binary(rng, n, d=DATA_DIM):
    return (rng.random((n, d)) < 0.5).astype(np.float64)


def test_build_model_shapes():
    """One encoder per group, a bipartite RBM with small couplings and PCD chains."""
    state = _model()
    assert state.D == 6 and state.groups == 2 and state.group_size == 3
    assert state.rbm.bipartite == (3, 3)
    assert np.all(state.rbm.a == 0.0)
    assert np.max(np.abs(state.rbm.W)) <= 0.01
    assert state.chains is not None and state.chains.state.shape == (20, 6)
    assert not state.git
    assert state.data_dim == DATA_DIM
    assert set(state.parameters()) == {
        "rbm.a", "rbm.W", "decoder.0.W", "decoder.0.b",
        "encoder0.0.W", "encoder0.0.b", "encoder1.0.W", "encoder1.0.b",
    }


def test_git_model_has_per_unit_beta():
    """Shifted Gaussian smoothing adds log beta and doubles the encoder outputs."""
    state = _model(prior={"kind": "git", "git_beta": 4.0}, smoothing={"kind": "git", "beta": 8.0})
    assert state.git
    np.testing.assert_allclose(state.log_beta, np.log(8.0))
    assert state.encoders[0].params["0.W"].shape == (DATA_DIM, 6)
    assert "posterior.log_beta" in state.parameters()


def test_zero_encoder_gives_symmetric_posterior():
    """All-zero encoder weights give q = 1/2 for every unit."""
    state = _model()
    _zero_networks(state)
    x = _binary(make_rng(1), 1)[0]
    zeta, log_q, logits = posterior_sample(state, x, make_rng(2))
    np.testing.assert_array_equal(logits, 0.0)
    assert log_q == pytest.approx(float(np.sum(np.log(mixture_pdf(state.smoothing, 0.5, zeta)))), abs=1e-10)


def test_zero_decoder_likelihood():
    """An all-zero decoder gives log p(x|zeta) = D_x log 1/2."""
    state = _model()
    _zero_networks(state)
    x = _binary(make_rng(3), 1)[0]
    assert decoder_log_likelihood(state, np.full(6, 0.3), x) == pytest.approx(DATA_DIM * math.log(0.5))


def test_bernoulli_likelihood_at_infinite_logits():
    """Perfect logits give a log likelihood of exactly zero."""
    logits = np.array([np.inf, -np.inf, np.inf])
    assert bernoulli_log_likelihood(logits, np.array([1.0, 0.0, 1.0])) == 0.0


def test_posterior_sampling_is_deterministic_and_hierarchical():
    """Same generator, same sample; later groups never influence earlier ones."""
    state = _model()
    x = _binary(make_rng(4), 3)
    first, _, _ = posterior_sample(state, x, make_rng(5))
    again, _, _ = posterior_sample(state, x, make_rng(5))
    np.testing.assert_array_equal(first, again)
    state.encoders[1].params["0.W"][...] += 1.0
    changed, _, _ = posterior_sample(state, x, make_rng(5))
    np.testing.assert_array_equal(changed[:, :3], first[:, :3])
    assert not np.allclose(changed[:, 3:], first[:, 3:])


def test_single_sample_bound_is_log_weight():
    """With K = 1 the bound equals its only log weight; K < 1 is refused."""
    state = _model()
    x = _binary(make_rng(6), 1)[0]
    bound, log_w = iw_bound(state, x, 1, make_rng(7))
    assert log_w.shape == (1,)
    assert bound == pytest.approx(log_w[0])
    with pytest.raises(ValueError):
        iw_bound(state, x, 0, make_rng(7))


def test_warmup_multiplier():
    """Linear ramp to one; no warm-up means one from the start."""
    assert warmup_multiplier(0, 10) == 0.0
    assert warmup_multiplier(5, 10) == 0.5
    assert warmup_multiplier(25, 10) == 1.0
    assert warmup_multiplier(0, 0) == 1.0


def _check_gradients(state, warmup, tol):
    rng = make_rng(8)
    X = _binary(rng, 2)
    rho = rng.uniform(0.05, 0.95, (2, 3, state.D))
    negative = exact_negative_phase(state.rbm)

    def objective():
        value = objective_and_grads(state, X, rho, negative, warmup).value
        return value - warmup * exact_log_partition(state.rbm)

    result = objective_and_grads(state, X, rho, negative, warmup)
    analytic = {name: g.copy() for name, g in result.grads.items()}
    assert set(analytic) == set(state.parameters())
    for name, param in state.parameters().items():
        if name == "rbm.W":
            numeric = symmetric_pair_difference(objective, param, state.rbm.mask)
        else:
            numeric = central_difference(objective, param)
        assert rel_error(analytic[name], numeric) < tol, name


def test_overlapping_model_gradients():
    """Hand-assembled gradients of the frozen-noise objective match finite differences."""
    state = _model(
        prior={"mf_iterations": 200},
        decoder={"arch": "mlp", "hidden": 4, "layers": 1},
    )
    rng = make_rng(9)
    state.rbm = RBM.random(3, 3, rng, weight_scale=0.5)
    _check_gradients(state, warmup=0.7, tol=1e-4)


def test_git_model_gradients():
    """Gradients including the learned per-unit log beta match finite differences."""
    state = _model(
        prior={"kind": "git", "git_beta": 5.0, "D1": 2, "D2": 2},
        smoothing={"kind": "git", "beta": 8.0},
    )
    state.rbm = RBM.random(2, 2, make_rng(10), weight_scale=0.5)
    state.log_beta[...] = np.log(make_rng(11).uniform(5.0, 12.0, 4))
    _check_gradients(state, warmup=1.0, tol=1e-4)


def test_git_posterior_inverts_cdf_for_large_shifts():
    """Encoder shifts of several units still give zeta with mixture CDF equal to rho."""
    state = _model(prior={"kind": "git", "git_beta": 4.0}, smoothing={"kind": "git", "beta": 8.0})
    for g, net in enumerate(state.encoders):
        net.params["0.b"][3:] = (-3.0, 2.5, 4.0) if g == 0 else (3.0, -4.5, -1.5)
    rng = make_rng(41)
    X = _binary(rng, 20)
    rho = rng.uniform(0.01, 0.99, (20, state.D))
    forward = posterior_forward(state, X, rho)
    for g, kind in enumerate(forward.kinds):
        sl = state.group_slice(g)
        cdf = mixture_cdf(kind, expit(forward.logits[:, sl]), forward.zeta[:, sl])
        np.testing.assert_allclose(cdf, rho[:, sl], atol=1e-10)
    assert np.all(np.isfinite(forward.log_q))


def test_zero_learning_rate_leaves_parameters():
    """lr = 0 changes nothing but the update counter."""
    state = _model(train={"lr": 0.0})
    before = {name: value.copy() for name, value in state.parameters().items()}
    metrics = iw_gradient_step(state, _binary(make_rng(12), 4), 2, make_rng(13))
    assert not metrics["skipped"]
    assert state.updates == 1
    for name, value in state.parameters().items():
        np.testing.assert_array_equal(value, before[name])


def test_gradient_step_changes_parameters():
    """A step with a positive learning rate moves the parameters and reports finite metrics."""
    state = _model()
    before = state.rbm.a.copy()
    metrics = iw_gradient_step(state, _binary(make_rng(14), 4), 2, make_rng(15), track_kl=True)
    assert math.isfinite(metrics["bound"]) and metrics["grad_norm"] > 0.0
    assert metrics["mf_kl_median"] >= 0.0
    assert not np.array_equal(state.rbm.a, before)


def test_non_finite_gradients_skip_the_update(caplog):
    """A NaN decoder weight skips the step but still counts the update."""
    state = _model()
    state.decoder.params["0.W"][0, 0] = np.nan
    before = state.rbm.a.copy()
    metrics = iw_gradient_step(state, _binary(make_rng(16), 4), 2, make_rng(17))
    assert metrics["skipped"]
    assert state.updates == 1
    np.testing.assert_array_equal(state.rbm.a, before)
    assert "skipped" in caplog.text


def test_empty_minibatch():
    """An empty minibatch is refused."""
    state = _model()
    with pytest.raises(EmptyBatchError):
        iw_gradient_step(state, np.zeros((0, DATA_DIM)), 2, make_rng(0))


def test_discrete_eval_uniform_model():
    """Uniform prior, posterior and decoder make every log weight D_x log 1/2."""
    state = _model()
    _zero_networks(state)
    state.rbm = RBM.from_blocks(np.zeros(6), np.zeros((3, 3)), 3)
    x = _binary(make_rng(18), 2)
    bounds = discrete_eval_ll(state, x, K=10, rng=make_rng(19), log_z=exact_log_partition(state.rbm))
    np.testing.assert_allclose(bounds, DATA_DIM * math.log(0.5), atol=1e-12)


def test_discrete_eval_needs_log_partition():
    """Without a log Z estimate the discrete bound is undefined."""
    state = _model()
    with pytest.raises(MissingLogPartitionError):
        discrete_eval_ll(state, _binary(make_rng(20), 1)[0], K=5, rng=make_rng(21))


def test_exact_likelihood_normalizes():
    """Summing exp(log p(x)) over every binary x gives one."""
    state = _model()
    state.rbm = RBM.random(3, 3, make_rng(22))
    xs = np.concatenate(list(enumerate_states(DATA_DIM)))
    total = np.logaddexp.reduce(exact_discrete_log_likelihood(state, xs))
    assert total == pytest.approx(0.0, abs=1e-10)


def test_discrete_eval_approaches_exact():
    """With K = 4000 the discrete IW bound sits just below the exact log likelihood."""
    state = _model()
    state.rbm = RBM.random(3, 3, make_rng(23))
    x = _binary(make_rng(24), 3)
    log_z = exact_log_partition(state.rbm)
    bounds = discrete_eval_ll(state, x, K=4000, rng=make_rng(25), log_z=log_z)
    exact = exact_discrete_log_likelihood(state, x)
    assert np.all(bounds <= exact + 0.1)
    assert np.all(np.abs(bounds - exact) < 0.1)


def _random_networks(state, rng, scale=1.0):
    for net in [state.decoder, *state.encoders]:
        for value in net.params.values():
            value[...] = rng.normal(0.0, scale, value.shape)


def _relaxed_log_weights(state, X, rho):
    forward = posterior_forward(state, X, rho)
    log_prior = np.array([exact_relaxed_log_prob(state.rbm, state.smoothing, row) for row in forward.zeta])
    return decoder_log_likelihood(state, forward.zeta, X) + log_prior - forward.log_q


def _discrete_log_weights(state, X, rho):
    # z = 1 exactly when rho lands in the z = 1 share of the mixture CDF
    s = state.group_size
    z = np.zeros_like(rho)
    log_q = np.zeros(X.shape[0])
    for g, net in enumerate(state.encoders):
        sl = state.group_slice(g)
        logit = net.forward(np.concatenate([X, z[:, : g * s]], axis=1))[:, :s]
        z[:, sl] = (rho[:, sl] > 1.0 - expit(logit)).astype(np.float64)
        log_q += bernoulli_log_likelihood(logit, z[:, sl])
    log_prior = -energy(state.rbm, z) - exact_log_partition(state.rbm)
    return decoder_log_likelihood(state, z, X) + log_prior - log_q


def test_relaxed_bound_approaches_discrete_bound():
    """With shared uniforms the relaxed bound closes on the discrete one as beta grows."""
    rng = make_rng(40)
    state = _model()
    _random_networks(state, rng)
    state.rbm = RBM.random(3, 3, rng, weight_scale=1.0)
    N, K = 3, 200
    X = np.repeat(_binary(rng, N), K, axis=0)
    rho = rng.random((N * K, state.D))
    discrete = _discrete_log_weights(state, X, rho)
    discrete_bound = logsumexp(discrete.reshape(N, K), axis=1)
    sample_gaps, bound_gaps = [], []
    for beta in (8.0, 16.0, 32.0, 64.0):
        state.smoothing = ExponentialSmoothing(beta)
        relaxed = _relaxed_log_weights(state, X, rho)
        sample_gaps.append(float(np.mean(np.abs(relaxed - discrete))))
        bound_gaps.append(float(np.mean(np.abs(logsumexp(relaxed.reshape(N, K), axis=1) - discrete_bound))))
    assert all(later < earlier for earlier, later in zip(sample_gaps, sample_gaps[1:]))
    assert sample_gaps[-1] < sample_gaps[0] / 3
    assert bound_gaps[-1] < bound_gaps[0]


def _trained_model(seed, updates=30):
    rng = make_rng(seed)
    state = _model()
    _random_networks(state, rng, scale=0.5)
    state.rbm = RBM.random(3, 3, rng)
    data = _binary(rng, 16)
    for _ in range(updates):
        iw_gradient_step(state, data, 5, rng)
    return state, data


@pytest.mark.slow
def test_bound_tightens_with_more_samples():
    """Nested K = 1, 5, 25 bounds on shared draws increase with paired significance."""
    state, data = _trained_model(26)
    x = np.repeat(data[:1], 10_000, axis=0)
    _, log_w = iw_bound(state, x, 25, make_rng(28))
    bounds = [logsumexp(log_w[:, :K], axis=1) - math.log(K) for K in (1, 5, 25)]
    for smaller, larger in zip(bounds, bounds[1:]):
        assert ttest_rel(larger, smaller, alternative="greater").pvalue < 0.01


@pytest.mark.slow
def test_discrete_bound_tightens_with_more_samples():
    """The discrete evaluation bound is larger at K = 25 than at K = 1."""
    state, data = _trained_model(29)
    x = np.repeat(data[:1], 2000, axis=0)
    log_z = exact_log_partition(state.rbm)
    single = discrete_eval_ll(state, x, K=1, rng=make_rng(30), log_z=log_z)
    many = discrete_eval_ll(state, x, K=25, rng=make_rng(31), log_z=log_z)
    assert ttest_ind(many, single, alternative="greater").pvalue < 0.01
    assert np.mean(many) < exact_discrete_log_likelihood(state, x[0])
