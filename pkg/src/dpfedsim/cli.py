"""Command-line interface.

Subcommands:
  run <config.json>        execute an experiment config end to end
  sweep <config.json>      alias of run, for multi-point sweep configs
  account                  end-to-end (epsilon, best order) for sigma, q, T, delta
  calibrate                noise multiplier for a target epsilon, by both the
                           closed form and the accountant bisection
"""

from __future__ import annotations

import argparse
import sys

from .errors import CalibrationError, ConfigError
from .harness import ExperimentConfig, run_experiment
from .privacy import (
    account,
    calibrate_sigma_accountant,
    calibrate_sigma_theorem1,
    lemma3_conditions_ok,
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dpfedsim",
        description="Differentially-private federated learning simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("run", "sweep"):
        p = sub.add_parser(name, help=f"{name} an experiment config")
        p.add_argument("config", help="path to a JSON experiment config")

    p = sub.add_parser("account", help="report end-to-end privacy loss")
    p.add_argument("--sigma", type=float, required=True, help="noise multiplier")
    p.add_argument("--q", type=float, required=True, help="client sampling ratio r/n")
    p.add_argument("--rounds", type=int, required=True, help="communication rounds")
    p.add_argument("--delta", type=float, required=True)

    p = sub.add_parser("calibrate", help="find sigma for a target epsilon")
    p.add_argument("--eps", type=float, required=True, help="target epsilon")
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--q", type=float, required=True, help="client sampling ratio r/n")
    p.add_argument("--rounds", type=int, required=True)
    p.add_argument("--bracket-low", type=float, default=0.3)
    p.add_argument("--bracket-high", type=float, default=500.0)
    return parser


def _cmd_account(args) -> int:
    if args.sigma <= 0:
        print(
            "infinite privacy loss: sigma = 0 adds no noise, epsilon diverges",
            file=sys.stderr,
        )
        return 1
    eps, alpha = account(args.sigma, args.q, args.rounds, args.delta)
    print(f"epsilon = {eps:.6g} at order alpha = {alpha:g} (delta = {args.delta:g})")
    if alpha == round(alpha) and not lemma3_conditions_ok(int(alpha), args.sigma, args.q):
        print(
            "note: simplified-bound side conditions do not hold at the best "
            "order; the reported bound is still valid",
            file=sys.stderr,
        )
    return 0


def _cmd_calibrate(args) -> int:
    sigma_closed = calibrate_sigma_theorem1(args.eps, args.delta, args.q, args.rounds)
    print(f"closed-form sigma  = {sigma_closed:.6g}")
    try:
        sigma_acct = calibrate_sigma_accountant(
            args.eps,
            args.delta,
            args.q,
            args.rounds,
            sigma_bracket=(args.bracket_low, args.bracket_high),
        )
    except CalibrationError as err:
        print(f"accountant sigma   = unavailable ({err})", file=sys.stderr)
        return 1
    print(f"accountant sigma   = {sigma_acct:.6g}")
    eps_check, _ = account(sigma_acct, args.q, args.rounds, args.delta)
    print(f"accountant epsilon at that sigma = {eps_check:.6g}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command in ("run", "sweep"):
            config = ExperimentConfig.from_file(args.config)
            out = run_experiment(config)
            print(f"wrote {len(out['results'])} runs under {config.output_dir}")
            print(f"summary:   {out['summary_path']}")
            print(f"aggregate: {out['aggregate_path']}")
            return 0
        if args.command == "account":
            return _cmd_account(args)
        if args.command == "calibrate":
            return _cmd_calibrate(args)
    except (ConfigError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
