"""Command-line entry points.

Subcommands: ``run`` (one experiment), ``sweep`` (hyperparameter grid),
``audit`` (metrics over a predictions CSV, optionally with CAI against a
baseline), ``gradcheck`` (finite-difference check of the configured loss),
and ``divtable`` (divergence values over an order grid for a Gaussian pair).

Exit codes: 0 success, 2 config error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from .autodiff import NonFiniteError, grad_check
from .divergences import DiagGaussian, FinitenessError, renyi_gauss_diag
from .experiment import (
    ConfigError,
    audit,
    config_from_mapping,
    load_data,
    parse_config_file,
    run_experiment,
    sweep,
)
from .metrics import EmptyGroupError
from .model import init_encoder, init_head
from .objective import rfib_loss
from .trainer import TrainingError

__all__ = ["main"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _float_list(raw: str):
    return [float(v) for v in raw.split(",") if v.strip() != ""]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rfib",
        description="Train fair bottleneck encoders and audit their predictions.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment end to end")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--seed", type=int, default=None)

    p_sweep = sub.add_parser("sweep", help="grid of (alpha, beta1, beta2) runs")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--out", required=True)
    p_sweep.add_argument("--seed", type=int, default=None)
    p_sweep.add_argument("--alpha", type=_float_list, default=[1.0])
    p_sweep.add_argument("--beta1", type=_float_list, default=[30.0])
    p_sweep.add_argument("--beta2", type=_float_list, default=[0.0])
    p_sweep.add_argument("--jobs", type=int, default=1)

    p_audit = sub.add_parser("audit", help="metrics (and CAI) for prediction files")
    p_audit.add_argument("--predictions", required=True)
    p_audit.add_argument("--baseline", default=None)
    p_audit.add_argument(
        "--lambda",
        dest="lambdas",
        type=float,
        action="append",
        help="CAI weight, repeatable (default 0.5 and 0.75)",
    )
    p_audit.add_argument("--out", default=None, help="also write the report as JSON")

    p_grad = sub.add_parser("gradcheck", help="finite-difference check of the loss")
    p_grad.add_argument("--config", required=True)
    p_grad.add_argument("--seed", type=int, default=None)
    p_grad.add_argument("--tol", type=float, default=1e-4)

    p_div = sub.add_parser("divtable", help="divergence over an order grid")
    p_div.add_argument("--mean-p", type=_float_list, required=True)
    p_div.add_argument("--var-p", type=_float_list, required=True)
    p_div.add_argument("--mean-q", type=_float_list, required=True)
    p_div.add_argument("--var-q", type=_float_list, required=True)
    p_div.add_argument(
        "--alphas",
        type=_float_list,
        default=[round(0.1 * k, 1) for k in range(21)],
    )
    return parser


def _cmd_run(args) -> int:
    cfg = config_from_mapping(parse_config_file(args.config), args.seed)
    bundle = run_experiment(cfg, args.out)
    rep = bundle.report
    print(f"method={bundle.method} seed={bundle.seed} out={bundle.out_dir}")
    print(
        f"acc={rep.acc:.2f} acc_gap={rep.acc_gap:.2f} acc_min={rep.acc_min:.2f} "
        f"(group {rep.acc_min_group}) dp_gap={rep.dp_gap:.2f} "
        f"eqodds_gap={rep.eqodds_gap:.2f}"
    )
    return EXIT_OK


def _cmd_sweep(args) -> int:
    cfg = config_from_mapping(parse_config_file(args.config), args.seed)
    results, failures = sweep(
        cfg, args.alpha, args.beta1, args.beta2, args.out, jobs=args.jobs
    )
    done = sum(1 for r in results if r is not None)
    print(f"sweep finished: {done} ok, {len(failures)} failed, out={args.out}")
    for index, (alpha, beta1, beta2), msg in failures:
        print(f"  point {index} (a={alpha}, b1={beta1}, b2={beta2}) failed: {msg}")
    return EXIT_OK if not failures else EXIT_NUMERIC


def _cmd_audit(args) -> int:
    lambdas = args.lambdas if args.lambdas else [0.5, 0.75]
    text, doc = audit(args.predictions, args.baseline, lambdas)
    print(text)
    if args.out:
        import json

        from .model import _atomic_write_text

        _atomic_write_text(args.out, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    cfg = config_from_mapping(parse_config_file(args.config), args.seed)
    train_data, _ = load_data(cfg)
    batch = train_data.subset(np.arange(min(8, len(train_data))))
    t = cfg.train
    rng = np.random.default_rng(t.seed)
    encoder = init_encoder(rng, batch.x.shape[1], t.hidden, t.latent_dim)
    head_f = init_head(rng, t.latent_dim, t.head_hidden, conditional=False)
    head_g = init_head(rng, t.latent_dim, t.head_hidden, conditional=True)
    eps = rng.standard_normal((len(batch), t.latent_dim))

    containers = (encoder, head_f, head_g)
    counts = [len(c.named()) for c in containers]
    flat = [tensor for c in containers for _, tensor in c.named()]

    def loss_fn(leaves):
        offsets = np.cumsum([0] + counts)
        lifted = [
            c.with_tensors(leaves[offsets[i] : offsets[i + 1]])
            for i, c in enumerate(containers)
        ]
        return rfib_loss(batch, lifted[0], lifted[1], lifted[2], t.hyper, eps)

    err = grad_check(loss_fn, flat, step=1e-5)
    print(f"gradcheck: max relative error {err:.3e} (tolerance {args.tol:g})")
    return EXIT_OK if err <= args.tol else EXIT_NUMERIC


def _cmd_divtable(args) -> int:
    p = DiagGaussian(np.array(args.mean_p), np.array(args.var_p))
    q = DiagGaussian(np.array(args.mean_q), np.array(args.var_q))
    print(f"{'alpha':>8}  {'divergence':>14}")
    for alpha in args.alphas:
        try:
            value = f"{renyi_gauss_diag(p, q, alpha):.8f}"
        except FinitenessError:
            value = "inf"
        print(f"{alpha:>8.3g}  {value:>14}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    handlers = {
        "run": _cmd_run,
        "sweep": _cmd_sweep,
        "audit": _cmd_audit,
        "gradcheck": _cmd_gradcheck,
        "divtable": _cmd_divtable,
    }
    try:
        return handlers[args.command](args)
    except (NonFiniteError, TrainingError, FinitenessError, EmptyGroupError) as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
