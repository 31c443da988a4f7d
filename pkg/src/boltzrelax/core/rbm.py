"""Boltzmann machine representation, energies, exact small-D oracles and block Gibbs sampling.

The distribution is p(z) = exp(-E(z)) / Z with E(z) = -a^T z - 1/2 z^T W z over
binary vectors z. W is stored densely (symmetric, zero diagonal); a bipartite
RBM additionally restricts the non-zero couplings to the (D1, D2) cross blocks.
"""

from __future__ import annotations

import logging
from collections.abc import Iterator
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
from scipy.special import expit, logsumexp

from boltzrelax.errors import DimensionError, EnumerationLimitError, NotBipartiteError
from boltzrelax.storage import read_container, require, write_container

if TYPE_CHECKING:
    from boltzrelax.core.smoothing import Smoothing

logger = logging.getLogger(__name__)

ENUMERATION_LIMIT = 24
AUGMENTED_ENUMERATION_LIMIT = 20
_CHUNK_BITS = 16

RBM_FORMAT = "boltzrelax-rbm"
RBM_VERSION = 1


@dataclass
class RBM:
    """Biases ``a`` (D,) and symmetric zero-diagonal couplings ``W`` (D, D).

    ``bipartite = (D1, D2)`` marks the first D1 units as one side and the
    remaining D2 as the other; couplings within a side must be zero.
    """

    a: np.ndarray
    W: np.ndarray
    bipartite: tuple[int, int] | None = None

    def __post_init__(self) -> None:
        self.a = np.asarray(self.a, dtype=np.float64).copy()
        self.W = np.asarray(self.W, dtype=np.float64).copy()
        D = self.a.shape[0]
        if self.a.ndim != 1 or self.W.shape != (D, D):
            raise DimensionError(f"a has shape {self.a.shape} but W has shape {self.W.shape}")
        if not np.allclose(self.W, self.W.T, rtol=0.0, atol=1e-12):
            raise ValueError("W must be symmetric")
        if np.any(np.diag(self.W) != 0.0):
            raise ValueError("W must have a zero diagonal")
        if self.bipartite is not None:
            D1, D2 = (int(v) for v in self.bipartite)
            if D1 + D2 != D or D1 < 1 or D2 < 1:
                raise DimensionError(f"bipartite split {self.bipartite} does not match D = {D}")
            self.bipartite = (D1, D2)
            if np.any(self.W[:D1, :D1] != 0.0) or np.any(self.W[D1:, D1:] != 0.0):
                raise ValueError("bipartite W has couplings within one side")
        self.W = 0.5 * (self.W + self.W.T)

    @property
    def D(self) -> int:
        return self.a.shape[0]

    @property
    def mask(self) -> np.ndarray:
        """1.0 where a coupling is allowed, 0.0 elsewhere (always 0 on the diagonal)."""
        D = self.D
        if self.bipartite is None:
            return 1.0 - np.eye(D)
        D1 = self.bipartite[0]
        mask = np.zeros((D, D))
        mask[:D1, D1:] = 1.0
        mask[D1:, :D1] = 1.0
        return mask

    def scaled(self, t: float) -> RBM:
        """Same biases, couplings multiplied by ``t`` (annealing paths)."""
        return RBM(self.a, self.W * t, self.bipartite)

    @classmethod
    def from_blocks(cls, a: np.ndarray, W12: np.ndarray, D1: int) -> RBM:
        W12 = np.asarray(W12, dtype=np.float64)
        D2 = W12.shape[1]
        if W12.shape[0] != D1:
            raise DimensionError(f"W12 has shape {W12.shape}, expected ({D1}, *)")
        W = np.zeros((D1 + D2, D1 + D2))
        W[:D1, D1:] = W12
        W[D1:, :D1] = W12.T
        return cls(a, W, (D1, D2))

    @classmethod
    def random(
        cls,
        D1: int,
        D2: int,
        rng: np.random.Generator,
        *,
        weight_scale: float = 0.5,
        bias_scale: float = 0.5,
    ) -> RBM:
        """Bipartite RBM with Gaussian biases and couplings of the given scales."""
        a = rng.normal(0.0, bias_scale, size=D1 + D2)
        W12 = rng.normal(0.0, weight_scale, size=(D1, D2))
        return cls.from_blocks(a, W12, D1)


@dataclass(frozen=True)
class AugmentedCoefficients:
    """Per-unit bias shift ``b`` and constant ``c`` of the augmented energy.

    ``db``/``dc`` hold d b_i / d zeta_i and d c_i / d zeta_i for the same zeta.
    Arrays may carry leading batch dimensions.
    """

    b: np.ndarray
    c: np.ndarray
    db: np.ndarray | None = None
    dc: np.ndarray | None = None


def _as_states(rbm: RBM, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != rbm.D:
        raise DimensionError(f"state has length {z.shape[-1]}, RBM has D = {rbm.D}")
    return z


def energy(rbm: RBM, z: np.ndarray) -> np.ndarray | float:
    """E(z) = -a^T z - 1/2 z^T W z, evaluated along the last axis."""
    z = _as_states(rbm, z)
    value = -(z @ rbm.a) - 0.5 * np.sum((z @ rbm.W) * z, axis=-1)
    return float(value) if np.ndim(value) == 0 else value


def augmented_energy(rbm: RBM, coeffs: AugmentedCoefficients, m: np.ndarray) -> np.ndarray | float:
    """Multilinear augmented energy E(m) - b^T m - sum(c).

    Since W has a zero diagonal, E(m) is the expectation of E(z) under the
    factorial distribution with means m.
    """
    m = _as_states(rbm, m)
    b = np.asarray(coeffs.b)
    c = np.asarray(coeffs.c)
    if b.shape[-1] != rbm.D or c.shape[-1] != rbm.D:
        raise DimensionError("augmented coefficients do not match the RBM dimension")
    value = energy(rbm, m) - np.sum(b * m, axis=-1) - np.sum(c, axis=-1)
    return float(value) if np.ndim(value) == 0 else value


def enumerate_states(n: int, chunk_bits: int = _CHUNK_BITS) -> Iterator[np.ndarray]:
    """All 2**n binary vectors in index order, in chunks; bit j of the index is unit j."""
    total = 1 << n
    step = 1 << min(chunk_bits, n)
    shifts = np.arange(n, dtype=np.int64)
    for start in range(0, total, step):
        idx = np.arange(start, min(start + step, total), dtype=np.int64)
        yield ((idx[:, None] >> shifts) & 1).astype(np.float64)


def _full_log_partition(a: np.ndarray, W: np.ndarray) -> float:
    acc = -np.inf
    for states in enumerate_states(a.shape[0]):
        neg_energy = states @ a + 0.5 * np.sum((states @ W) * states, axis=1)
        acc = np.logaddexp(acc, logsumexp(neg_energy))
    return float(acc)


def _bipartite_log_partition(a: np.ndarray, W: np.ndarray, D1: int) -> float:
    # enumerate the smaller side, the other one sums out as a product of softplus terms
    D = a.shape[0]
    if D1 <= D - D1:
        side, other = np.arange(D1), np.arange(D1, D)
    else:
        side, other = np.arange(D1, D), np.arange(D1)
    a_s, a_o = a[side], a[other]
    W_so = W[np.ix_(side, other)]
    acc = -np.inf
    for states in enumerate_states(side.size):
        terms = states @ a_s + np.sum(np.logaddexp(0.0, a_o + states @ W_so), axis=1)
        acc = np.logaddexp(acc, logsumexp(terms))
    return float(acc)


def log_partition(a: np.ndarray, W: np.ndarray, bipartite: tuple[int, int] | None) -> float:
    D = a.shape[0]
    if bipartite is not None and min(bipartite) <= ENUMERATION_LIMIT:
        return _bipartite_log_partition(a, W, bipartite[0])
    if D > ENUMERATION_LIMIT:
        raise EnumerationLimitError(D, ENUMERATION_LIMIT)
    return _full_log_partition(a, W)


def exact_log_partition(rbm: RBM) -> float:
    """log Z = log sum_z exp(-E(z)), summed with max-subtraction."""
    return log_partition(rbm.a, rbm.W, rbm.bipartite)


def augmented_log_partition(rbm: RBM, coeffs: AugmentedCoefficients) -> float:
    """log sum_z exp(-E(z) + b^T z + sum(c)) for a single zeta."""
    if rbm.D > AUGMENTED_ENUMERATION_LIMIT:
        raise EnumerationLimitError(rbm.D, AUGMENTED_ENUMERATION_LIMIT)
    b = np.asarray(coeffs.b, dtype=np.float64)
    c = np.asarray(coeffs.c, dtype=np.float64)
    if b.shape != (rbm.D,):
        raise DimensionError(f"coefficients have shape {b.shape}, expected ({rbm.D},)")
    return float(np.sum(c)) + log_partition(rbm.a + b, rbm.W, rbm.bipartite)


def exact_relaxed_log_prob(rbm: RBM, kind: Smoothing, zeta: np.ndarray) -> float:
    """Normalized log p(zeta) = log sum_z p(z) r(zeta|z) by enumeration."""
    if rbm.D > AUGMENTED_ENUMERATION_LIMIT:
        raise EnumerationLimitError(rbm.D, AUGMENTED_ENUMERATION_LIMIT)
    zeta = _as_states(rbm, zeta)
    coeffs = kind.coefficients(zeta)
    return augmented_log_partition(rbm, coeffs) - exact_log_partition(rbm)


def _boltzmann_probabilities(rbm: RBM) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    if rbm.D > AUGMENTED_ENUMERATION_LIMIT:
        raise EnumerationLimitError(rbm.D, AUGMENTED_ENUMERATION_LIMIT)
    log_z = exact_log_partition(rbm)
    for states in enumerate_states(rbm.D):
        yield states, np.exp(-energy(rbm, states) - log_z)


def exact_moments(rbm: RBM) -> tuple[np.ndarray, np.ndarray]:
    """(E[z], E[z z^T]) under p(z), by enumeration."""
    mean = np.zeros(rbm.D)
    second = np.zeros((rbm.D, rbm.D))
    for states, probs in _boltzmann_probabilities(rbm):
        mean += probs @ states
        second += states.T @ (states * probs[:, None])
    return mean, second


def exact_probabilities(rbm: RBM) -> np.ndarray:
    """p(z) for every state, indexed as in :func:`enumerate_states`."""
    return np.concatenate([probs for _, probs in _boltzmann_probabilities(rbm)])


def states_from_indices(indices: np.ndarray, n: int) -> np.ndarray:
    indices = np.asarray(indices, dtype=np.int64)
    return ((indices[..., None] >> np.arange(n, dtype=np.int64)) & 1).astype(np.float64)


def exact_sample(rbm: RBM, n: int, rng: np.random.Generator) -> np.ndarray:
    """n independent exact draws from p(z)."""
    probs = exact_probabilities(rbm)
    idx = rng.choice(probs.size, size=n, p=probs / probs.sum())
    return states_from_indices(idx, rbm.D)


def conditional_probs(rbm: RBM, state: np.ndarray, units: slice) -> np.ndarray:
    """p(z_i = 1 | rest) = sigma(a_i + sum_j W_ij z_j) for the units in ``units``."""
    return expit(rbm.a[units] + state @ rbm.W[:, units])


def block_gibbs_sweep(rbm: RBM, state: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One sweep: resample side 1 given side 2, then side 2 given the new side 1.

    ``state`` may be a single vector or a (chains, D) batch; a new array is returned.
    """
    if rbm.bipartite is None:
        raise NotBipartiteError("block Gibbs sampling needs a bipartite RBM")
    state = _as_states(rbm, state).copy()
    D1 = rbm.bipartite[0]
    for units in (slice(0, D1), slice(D1, rbm.D)):
        probs = conditional_probs(rbm, state, units)
        state[..., units] = (rng.random(probs.shape) < probs).astype(np.float64)
    return state


def save_rbm(path: str | Path, rbm: RBM) -> Path:
    D1, D2 = rbm.bipartite if rbm.bipartite is not None else (rbm.D, 0)
    return write_container(
        path,
        RBM_FORMAT,
        RBM_VERSION,
        {"D": rbm.D, "D1": D1, "D2": D2, "a": rbm.a, "W": np.ascontiguousarray(rbm.W)},
    )


def load_rbm(path: str | Path) -> RBM:
    data = read_container(path, RBM_FORMAT, RBM_VERSION)
    require(data, "D", "D1", "D2", "a", "W")
    return rbm_from_fields(data)


def rbm_from_fields(data: dict[str, np.ndarray], prefix: str = "") -> RBM:
    D = int(data[prefix + "D"])
    D1, D2 = int(data[prefix + "D1"]), int(data[prefix + "D2"])
    bipartite = (D1, D2) if D2 > 0 else None
    return RBM(data[prefix + "a"].reshape(D), data[prefix + "W"].reshape(D, D), bipartite)
