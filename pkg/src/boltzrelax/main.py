"""Command-line entry point: training, evaluation and the diagnostic experiments."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Any

from dotenv import load_dotenv
from pydantic import ValidationError

from boltzrelax import diagnostics
from boltzrelax.config import SEED_ENV, AppConfig, load_config, with_overrides
from boltzrelax.core.rbm import RBM
from boltzrelax.core.rng import make_rng
from boltzrelax.core.smoothing import BETA_PRESETS, SMOOTHING_FAMILIES
from boltzrelax.data import bernoulli_baseline_ll, load_dataset
from boltzrelax.model.checkpoint import load_checkpoint
from boltzrelax.model.train import train

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


class _UsageError(Exception):
    pass


def _common(parser: argparse.ArgumentParser, *, seed: bool) -> None:
    parser.add_argument("--config", type=Path, help="TOML config file (flags override it)")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    if seed:
        parser.add_argument("--seed", type=int, help=f"random seed (required; or set {SEED_ENV})")


def _model_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--dataset", choices=["mnist", "synthetic"])
    parser.add_argument("--data-dir")
    parser.add_argument("--smoothing", choices=list(SMOOTHING_FAMILIES))
    parser.add_argument("--beta", type=float)
    parser.add_argument("--sampler", choices=["pa", "pcd"])
    parser.add_argument("--chains", type=int, help="PCD chains or PA population")
    parser.add_argument("--sweeps", type=int, help="Gibbs sweeps per parameter update")
    parser.add_argument("--groups", type=int)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--max-updates", type=int)
    parser.add_argument("--k", type=int, help="importance samples per datum")
    parser.add_argument("--output-dir")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="boltzrelax", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a relaxed Boltzmann-prior VAE")
    _common(p, seed=True)
    _model_flags(p)
    p.add_argument("--resume", action="store_true", help="continue from OUTPUT_DIR/checkpoint.npz")
    p.add_argument("--until", type=int, help="stop after this many total updates")
    p.set_defaults(handler=_cmd_train)

    p = sub.add_parser("eval", help="discrete IW bound of a checkpoint, normalized by AIS")
    _common(p, seed=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--k", type=int, default=4000)
    p.add_argument("--dataset", choices=["mnist", "synthetic"])
    p.add_argument("--data-dir")
    p.add_argument("--limit", type=int, help="evaluate the first N test points only")
    p.add_argument("--out", type=Path, help="CSV output path")
    p.set_defaults(handler=_cmd_eval)

    p = sub.add_parser("diag-gradvar", help="sharpness vs. gradient-variance tradeoff")
    _common(p, seed=True)
    p.add_argument("--q", type=float, default=0.5)
    p.add_argument("--samples", type=int, default=1_000_000)
    p.add_argument("--out", type=Path)
    p.set_defaults(handler=_cmd_gradvar)

    p = sub.add_parser("diag-mfkl", help="exact mean-field KL per sweep on a random RBM")
    _common(p, seed=True)
    p.add_argument("--D1", type=int, default=8)
    p.add_argument("--D2", type=int, default=8)
    p.add_argument("--smoothing", choices=["exp", "unexp", "power", "gauss"], default="power")
    p.add_argument("--betas", type=float, nargs="+")
    p.add_argument("--n-zeta", type=int, default=50)
    p.add_argument("--sweeps", dest="mf_sweeps", type=int, default=5, help="mean-field sweeps per zeta")
    p.add_argument("--weight-scale", type=float, default=0.5)
    p.add_argument("--out", type=Path)
    p.set_defaults(handler=_cmd_mfkl)

    p = sub.add_parser("diag-invcdf", help="inverse-CDF and d zeta / d q curves")
    _common(p, seed=False)
    p.add_argument("--q", type=float, default=0.5)
    p.add_argument("--points", type=int, default=201)
    p.add_argument("--out", type=Path)
    p.set_defaults(handler=_cmd_invcdf)

    p = sub.add_parser("diag-pa-vs-pcd", help="twin training runs differing only in the sampler")
    _common(p, seed=True)
    _model_flags(p)
    p.add_argument("--ks", type=int, nargs="+", default=list(diagnostics.REPORT_KS))
    p.add_argument("--out", type=Path)
    p.set_defaults(handler=_cmd_pa_vs_pcd)
    return parser


def _seed(args: argparse.Namespace) -> int:
    if args.seed is not None:
        return args.seed
    if os.environ.get(SEED_ENV):
        return int(os.environ[SEED_ENV])
    raise _UsageError(f"{args.command} is stochastic: pass --seed or set {SEED_ENV}")


def _resolve_config(args: argparse.Namespace) -> AppConfig:
    config = load_config(getattr(args, "config", None))
    overrides: dict[str, Any] = {
        "train.seed": getattr(args, "seed", None),
        "data.dataset": getattr(args, "dataset", None),
        "data.data_dir": getattr(args, "data_dir", None),
        "sampler.kind": getattr(args, "sampler", None),
        "sampler.chains": getattr(args, "chains", None),
        "sampler.sweeps_per_update": getattr(args, "sweeps", None),
        "prior.mf_iterations": getattr(args, "mf_sweeps", None),
        "posterior.groups": getattr(args, "groups", None),
        "train.epochs": getattr(args, "epochs", None),
        "train.max_updates": getattr(args, "max_updates", None),
        "train.output_dir": getattr(args, "output_dir", None),
    }
    if args.command != "eval":
        overrides["train.k"] = getattr(args, "k", None)
    smoothing = getattr(args, "smoothing", None)
    if smoothing is not None and args.command != "diag-mfkl":
        overrides["smoothing.kind"] = smoothing
        if smoothing == "git":
            overrides["prior.kind"] = "git"
    if args.command != "diag-mfkl":
        overrides["smoothing.beta"] = getattr(args, "beta", None)
    return with_overrides(config, overrides)


def _out_path(args: argparse.Namespace, config: AppConfig, name: str) -> Path:
    if args.out is not None:
        return args.out
    out = Path(config.train.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out / name


def _cmd_train(args: argparse.Namespace) -> int:
    _seed(args)
    config = _resolve_config(args)
    dataset = load_dataset(config)
    result = train(config, dataset.train, resume=args.resume, until=args.until)
    print(f"trained to update {result.state.updates}; checkpoint {result.checkpoint}; metrics {result.metrics}")
    print(f"independent-Bernoulli baseline test LL: {bernoulli_baseline_ll(dataset.train, dataset.test):.4f}")
    return EXIT_OK


def _cmd_eval(args: argparse.Namespace) -> int:
    seed = _seed(args)
    state, _ = load_checkpoint(args.checkpoint)
    config = with_overrides(
        state.config, {"data.dataset": args.dataset, "data.data_dir": args.data_dir, "train.seed": seed}
    )
    test = load_dataset(config).test
    if args.limit is not None:
        test = test[: args.limit]
    metrics = diagnostics.evaluate_model(state, test, args.k, seed)
    row = {"sampler": config.sampler.kind, "K": args.k, **metrics}
    diagnostics.write_rows(_out_path(args, config, "eval.csv"), diagnostics.REPORT_COLUMNS, [row], config)
    print(f"discrete IW bound (K={args.k}): {metrics['eval_ll']:.4f}")
    print(f"AIS log Z: {metrics['logz']:.4f} +- {metrics['logz_std']:.4f}")
    return EXIT_OK


def _cmd_gradvar(args: argparse.Namespace) -> int:
    seed = _seed(args)
    config = _resolve_config(args)
    rows = diagnostics.grad_variance_experiment(q=args.q, n_samples=args.samples, rng=make_rng(seed))
    diagnostics.write_rows(_out_path(args, config, "gradvar.csv"), diagnostics.GRADVAR_COLUMNS, rows, config)
    for row in rows:
        print(f"{row['kind']:>6} beta={row['beta']:5.1f}  |zeta-z|={row['mean_abs_dist']:.4f}  var={row['grad_variance']:.4g}")
    return EXIT_OK


def _cmd_mfkl(args: argparse.Namespace) -> int:
    seed = _seed(args)
    config = _resolve_config(args)
    rng = make_rng(seed)
    rbm = RBM.random(args.D1, args.D2, rng, weight_scale=args.weight_scale)
    betas = args.betas or list(BETA_PRESETS[args.smoothing])
    sweeps = config.prior.mf_iterations
    rows = diagnostics.mf_kl_trace(rbm, args.smoothing, betas, args.n_zeta, rng, sweeps=sweeps)
    diagnostics.write_rows(_out_path(args, config, "mfkl.csv"), diagnostics.MFKL_COLUMNS, rows, config)
    for beta in betas:
        final = sorted(r["kl"] for r in rows if r["beta"] == beta and r["sweep"] == sweeps)
        print(f"beta={beta:g}: median KL after {sweeps} sweeps = {final[len(final) // 2]:.4g}")
    return EXIT_OK


def _cmd_invcdf(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    rows = diagnostics.inverse_cdf_curves(q=args.q, n_points=args.points)
    path = _out_path(args, config, "invcdf.csv")
    diagnostics.write_rows(path, diagnostics.INVCDF_COLUMNS, rows, config)
    print(f"wrote {len(rows)} curve points to {path}")
    return EXIT_OK


def _cmd_pa_vs_pcd(args: argparse.Namespace) -> int:
    _seed(args)
    config = _resolve_config(args)
    dataset = load_dataset(config)
    rows = diagnostics.pa_vs_pcd_report(config, dataset.train, dataset.test, config.train.output_dir, Ks=args.ks)
    diagnostics.write_rows(_out_path(args, config, "pa_vs_pcd.csv"), diagnostics.REPORT_COLUMNS, rows, config)
    for row in rows:
        print(f"{row['sampler']:>4} K={row['K']:<3} eval LL {row['eval_ll']:.4f}  log Z {row['logz']:.4f} +- {row['logz_std']:.4f}")
    return EXIT_OK


def run_command(argv: list[str] | None = None) -> int:
    """Run one subcommand; returns 0 on success, 1 on runtime failure, 2 on usage errors."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
    )
    try:
        return args.handler(args)
    except (_UsageError, ValidationError) as exc:
        parser.print_usage(sys.stderr)
        print(f"boltzrelax {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception:
        logger.exception("%s failed", args.command)
        return EXIT_FAILURE


def entrypoint() -> None:
    load_dotenv()
    sys.exit(run_command())
