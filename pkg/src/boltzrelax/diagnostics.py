"""Diagnostic experiments behind the diag-* commands; each returns rows for a CSV."""

from __future__ import annotations

import csv
import logging
from collections.abc import Iterable, Sequence
from pathlib import Path
from typing import Any, TextIO

import numpy as np
from scipy.special import expit
from tqdm import tqdm

from boltzrelax.config import AppConfig, with_overrides
from boltzrelax.core.rbm import AUGMENTED_ENUMERATION_LIMIT, RBM, exact_sample
from boltzrelax.core.relaxation import M_CLAMP, mean_field_kl_exact, mean_field_sweep
from boltzrelax.core.reparam import implicit_grads, sample_inverse_cdf
from boltzrelax.core.rng import make_rng
from boltzrelax.core.samplers import ais_log_partition
from boltzrelax.core.smoothing import make_smoothing
from boltzrelax.errors import EnumerationLimitError
from boltzrelax.model.train import train, write_config_header
from boltzrelax.model.vae import ModelState, discrete_eval_ll

logger = logging.getLogger(__name__)

MIN_GRADVAR_SAMPLES = 10_000
GRADVAR_GRID: tuple[tuple[str, float], ...] = (
    *(("exp", float(b)) for b in range(8, 16)),
    *(("power", float(b)) for b in range(10, 81, 10)),
)
INVCDF_GRID: tuple[tuple[str, float], ...] = (
    ("exp", 8.0),
    ("exp", 16.0),
    ("power", 10.0),
    ("power", 30.0),
    ("gauss", 20.0),
)
REPORT_KS = (1, 5, 25)

GRADVAR_COLUMNS = ["kind", "beta", "mean_abs_dist", "grad_variance"]
MFKL_COLUMNS = ["beta", "zeta_index", "sweep", "kl"]
INVCDF_COLUMNS = ["kind", "beta", "rho", "zeta", "dzeta_dq"]
REPORT_COLUMNS = ["sampler", "K", "eval_ll", "logz", "logz_std"]


def write_rows(
    target: str | Path | TextIO,
    columns: Sequence[str],
    rows: Iterable[dict[str, Any]],
    config: AppConfig | None = None,
) -> None:
    """CSV with an optional ``# config:`` first line."""
    if isinstance(target, (str, Path)):
        with open(target, "w", newline="") as f:
            write_rows(f, columns, rows, config)
        return
    if config is not None:
        write_config_header(target, config)
    writer = csv.DictWriter(target, fieldnames=list(columns))
    writer.writeheader()
    for row in rows:
        writer.writerow(row)


def grad_variance_experiment(
    grid: Sequence[tuple[str, float]] = GRADVAR_GRID,
    q: float = 0.5,
    n_samples: int = 1_000_000,
    rng: np.random.Generator | None = None,
) -> list[dict[str, Any]]:
    """Sharpness/variance tradeoff: mean |zeta - 1[zeta > 0.5]| and Var[d zeta / d q] per (kind, beta)."""
    if n_samples < MIN_GRADVAR_SAMPLES:
        raise ValueError(f"n_samples must be at least {MIN_GRADVAR_SAMPLES}")
    if rng is None:
        raise ValueError("grad_variance_experiment needs a random generator")
    rows = []
    for name, beta in grid:
        kind = make_smoothing(name, beta)
        rho = rng.random(n_samples)
        zeta = sample_inverse_cdf(kind, q, rho)
        grads = implicit_grads(kind, q, zeta)
        rows.append({
            "kind": name,
            "beta": beta,
            "mean_abs_dist": float(np.mean(np.abs(zeta - (zeta > 0.5)))),
            "grad_variance": float(np.var(grads.dzeta_dq)),
        })
        logger.debug("gradvar %s beta=%g: %s", name, beta, rows[-1])
    return rows


def sample_relaxed_prior(rbm: RBM, kind, n: int, rng: np.random.Generator) -> np.ndarray:
    """zeta ~ sum_z p(z) r(zeta|z): exact z draws followed by one inverse-CDF draw per unit."""
    z = exact_sample(rbm, n, rng)
    return sample_inverse_cdf(kind, z, rng.random(z.shape))


def mf_kl_trace(
    rbm: RBM,
    kind_name: str,
    betas: Sequence[float],
    n_zeta: int,
    rng: np.random.Generator,
    sweeps: int = 5,
) -> list[dict[str, Any]]:
    """Exact KL(m || p_hat) after every mean-field sweep, for zeta drawn from the relaxed prior."""
    if rbm.D > AUGMENTED_ENUMERATION_LIMIT:
        raise EnumerationLimitError(rbm.D, AUGMENTED_ENUMERATION_LIMIT)
    rows = []
    for beta in betas:
        kind = make_smoothing(kind_name, beta)
        for index, zeta in enumerate(sample_relaxed_prior(rbm, kind, n_zeta, rng)):
            coeffs = kind.coefficients(zeta)
            m = expit(rbm.a + coeffs.b)
            for sweep in range(1, sweeps + 1):
                m = mean_field_sweep(rbm, coeffs, m)
                kl = mean_field_kl_exact(rbm, coeffs, np.clip(m, M_CLAMP, 1.0 - M_CLAMP))
                rows.append({"beta": beta, "zeta_index": index, "sweep": sweep, "kl": kl})
    return rows


def inverse_cdf_curves(
    grid: Sequence[tuple[str, float]] = INVCDF_GRID,
    q: float = 0.5,
    n_points: int = 201,
) -> list[dict[str, Any]]:
    """zeta(rho) and d zeta / d q(rho) on an even rho grid in (0, 1)."""
    rho = np.linspace(0.0, 1.0, n_points + 2)[1:-1]
    rows = []
    for name, beta in grid:
        kind = make_smoothing(name, beta)
        zeta = sample_inverse_cdf(kind, q, rho)
        dq = implicit_grads(kind, q, zeta).dzeta_dq
        rows.extend(
            {"kind": name, "beta": beta, "rho": float(r), "zeta": float(zz), "dzeta_dq": float(g)}
            for r, zz, g in zip(rho, zeta, dq)
        )
    return rows


def evaluate_model(
    state: ModelState,
    test: np.ndarray,
    K: int,
    seed: int,
) -> dict[str, float]:
    """AIS log Z followed by the mean discrete IW bound over ``test``."""
    ais = ais_log_partition(state.rbm, state.config.ais, make_rng(seed, 0))
    bounds = discrete_eval_ll(state, test, K, make_rng(seed, 1), log_z=ais.estimate)
    return {"eval_ll": float(np.mean(bounds)), "logz": ais.estimate, "logz_std": ais.std_error}


def pa_vs_pcd_report(
    config: AppConfig,
    train_data: np.ndarray,
    test_data: np.ndarray,
    output_dir: str | Path,
    Ks: Sequence[int] = REPORT_KS,
    samplers: Sequence[str] = ("pcd", "pa"),
) -> list[dict[str, Any]]:
    """Train twin models that differ only in the negative-phase sampler; one row per (sampler, K)."""
    seed = config.train.seed
    if seed is None:
        raise ValueError("pa_vs_pcd_report needs a seed")
    rows = []
    runs = [(sampler, K) for sampler in samplers for K in Ks]
    for sampler, K in tqdm(runs, desc="pa-vs-pcd", disable=None):
        run_config = with_overrides(config, {"sampler.kind": sampler, "train.k": K})
        logger.info("Training %s model with K=%d", sampler, K)
        result = train(run_config, train_data, Path(output_dir) / f"{sampler}-k{K}")
        metrics = evaluate_model(result.state, test_data, config.train.eval_k, seed)
        rows.append({"sampler": sampler, "K": K, **metrics})
    return rows
