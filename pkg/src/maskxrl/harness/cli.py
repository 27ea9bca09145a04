"""Command line entry point: ``maskxrl {train,sweep-tau,ablate,eval,plot}``.

Exit codes: 0 success, 2 configuration error, 3 numeric failure.
The output root defaults to ``./runs`` and is overridden by ``MASKXRL_OUTPUT_ROOT``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict

from ..errors import ConfigError
from .config import load_config
from .plots import emit_plots
from .runner import NumericFailure, run_experiment, trainer_from_checkpoint
from .sweeps import run_ablations, run_tau_sweep

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _overrides(args):
    out = {}
    if getattr(args, "seed", None) is not None:
        out["seed"] = args.seed
    if getattr(args, "deterministic", False):
        out["deterministic"] = True
    if getattr(args, "disable_comm", False):
        out["disable_comm"] = True
    if getattr(args, "disable_adaptive_eps", False):
        out["disable_adaptive_epsilon"] = True
    return out


def _parse_taus(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as e:
        raise ConfigError(f"cannot parse --taus {text!r}") from e


def cmd_train(args):
    cfg = load_config(args.config, _overrides(args))
    art = run_experiment(cfg)
    last = art.records[-1] if art.records else None
    print(f"run {art.run_id}: {art.iterations_run} iterations -> {art.run_dir}")
    if last is not None:
        print(json.dumps(asdict(last)))


def cmd_sweep_tau(args):
    cfg = load_config(args.config)
    table = run_tau_sweep(cfg, _parse_taus(args.taus), seeds=args.seeds)
    print(table.format())
    print(f"table written to {table.csv_path}")


def cmd_ablate(args):
    cfg = load_config(args.config)
    table = run_ablations(cfg, seeds=args.seeds)
    print(table.format())
    print(f"table written to {table.csv_path}")


def cmd_eval(args):
    tr = trainer_from_checkpoint(args.checkpoint, output_dir=args.out or None)
    tr.run_dir.mkdir(parents=True, exist_ok=True)
    record = tr.evaluate()
    print(json.dumps(asdict(record)))


def cmd_plot(args):
    for p in emit_plots(args.run):
        print(p)


def build_parser():
    p = argparse.ArgumentParser(prog="maskxrl", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run one experiment")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--deterministic", action="store_true")
    t.add_argument("--disable-comm", action="store_true")
    t.add_argument("--disable-adaptive-eps", action="store_true")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sweep-tau", help="threshold sensitivity table")
    s.add_argument("--config", required=True)
    s.add_argument("--taus", default="0.3,0.5,0.7")
    s.add_argument("--seeds", type=int, default=3)
    s.set_defaults(func=cmd_sweep_tau)

    a = sub.add_parser("ablate", help="full method vs no-Comm vs constant epsilon")
    a.add_argument("--config", required=True)
    a.add_argument("--seeds", type=int, default=3)
    a.set_defaults(func=cmd_ablate)

    e = sub.add_parser("eval", help="evaluate a saved checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--out", help="output root for the evaluation (default: the config's)")
    e.set_defaults(func=cmd_eval)

    pl = sub.add_parser("plot", help="write SVG plots for a run or sweep directory")
    pl.add_argument("--run", required=True)
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericFailure as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
