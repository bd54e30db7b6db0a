"""Command-line entry point: ``noisyoct <subcommand> --config FILE --out DIR``.

Exit status is 0 on success, 2 when an optimization does not converge (or
propagation/monotonicity fails) and 1 on configuration errors.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

from ..krotov import MonotonicityError
from ..propagator import PropagationError
from .checkpoint import CheckpointError, read_checkpoint, write_checkpoint
from .config import ConfigError, ExperimentConfig, load_config
from . import experiments as ex

log = logging.getLogger("noisyoct")

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGED = 0, 1, 2


def _baseline_for(cfg, args):
    if args.checkpoint:
        return read_checkpoint(args.checkpoint)
    log.info("no --checkpoint given; optimizing the noiseless baseline first")
    ckpt, report, _ = ex.run_baseline(cfg)
    write_checkpoint(os.path.join(args.out, "baseline.ckpt"), ckpt)
    return ckpt


def cmd_baseline(cfg, args):
    ckpt, report, _ = ex.run_baseline(cfg)
    path = args.checkpoint or os.path.join(args.out, "baseline.ckpt")
    write_checkpoint(path, ckpt)
    ex.write_csv(os.path.join(args.out, "baseline.csv"), [report],
                 ["gate", "if_u", "iterations", "energy", "reason", "converged"])
    log.info("IF_U = %.3e after %d iterations (%s)", report["if_u"], report["iterations"],
             report["reason"])
    return EXIT_OK if report["converged"] else EXIT_NONCONVERGED


def cmd_sweep(cfg, args):
    baseline = _baseline_for(cfg, args)
    result = ex.run_noise_sweep(cfg, baseline)
    energy = sum(result.energy_u.values())
    ex.write_csv(os.path.join(args.out, "sweep.csv"), ex.sweep_rows(result, energy), ex.SWEEP_COLUMNS)
    return EXIT_OK


def cmd_staged(cfg, args):
    result = ex.run_staged(cfg)
    ex.write_csv(os.path.join(args.out, "staged.csv"), result.rows, ex.STAGED_COLUMNS)
    ex.write_csv(os.path.join(args.out, "ancilla_series.csv"), result.series,
                 ["gamma", "t", "population"])
    for i, (gamma, (c1, c2)) in enumerate(sorted(result.checkpoints.items())):
        write_checkpoint(os.path.join(args.out, f"stage1_{i:02d}.ckpt"), c1)
        write_checkpoint(os.path.join(args.out, f"stage2_{i:02d}.ckpt"), c2)
    return EXIT_OK


def cmd_trajectory(cfg, args):
    rows = ex.run_trajectory(cfg, _baseline_for(cfg, args))
    ex.write_csv(os.path.join(args.out, "trajectory.csv"), rows, ex.TRAJECTORY_COLUMNS)
    return EXIT_OK


def cmd_timekeeping(cfg, args):
    rows = ex.run_timekeeping_compare(cfg, _baseline_for(cfg, args))
    ex.write_csv(os.path.join(args.out, "timekeeping.csv"), rows, ex.TIMEKEEPING_COLUMNS)
    return EXIT_OK


COMMANDS = {
    "baseline": cmd_baseline,
    "sweep": cmd_sweep,
    "staged": cmd_staged,
    "trajectory": cmd_trajectory,
    "timekeeping": cmd_timekeeping,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="noisyoct", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="experiment config file (defaults when omitted)")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--checkpoint", help="field checkpoint to read (or write, for baseline)")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        os.makedirs(args.out, exist_ok=True)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, CheckpointError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PropagationError, MonotonicityError, ex.StageError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED


if __name__ == "__main__":
    sys.exit(main())
