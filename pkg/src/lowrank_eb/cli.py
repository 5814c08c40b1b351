"""Command line entry point.

    lowrank-eb gen <config>
    lowrank-eb scan <config>
    lowrank-eb optimize <config>
    lowrank-eb reconstruct <config> [--theta FILE] [--label NAME]
    lowrank-eb selftest

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from . import harness, selftest
from .errors import CapacityError, ConfigError, NumericalError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lowrank-eb", description="Approximate empirical Bayes for linear inverse problems.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)
    for name, text in [
        ("gen", "generate truth and synthetic data"),
        ("scan", "evaluate the objective on the search grid for each rank"),
        ("optimize", "Nelder-Mead search for the hyperparameters"),
    ]:
        sub.add_parser(name, help=text).add_argument("config")
    rec = sub.add_parser("reconstruct", help="posterior mean and variance images")
    rec.add_argument("config")
    rec.add_argument("--theta", help="JSON hyperparameters or an optimize.json")
    rec.add_argument("--label", help="name used in output files and the report")
    sub.add_parser("selftest", help="run the built-in oracle checks")
    return p


def _run(args) -> int:
    if args.cmd == "selftest":
        return EXIT_OK if selftest.run() else EXIT_NUMERICAL
    cfg = harness.load_config(args.config)
    if args.cmd == "gen":
        ds = harness.generate(cfg)
        print(f"wrote dataset ({ds.y.size} observations) to {cfg.output_dir}")
    elif args.cmd == "scan":
        rows = harness.run_scan(cfg)
        print(f"wrote {len(rows)} rows to {cfg.output_dir / 'scan.csv'}")
    elif args.cmd == "optimize":
        res = harness.run_optimize(cfg)
        print(f"objective {res.objective_opt!r} at {res.theta_opt} ({res.status})")
    elif args.cmd == "reconstruct":
        for label, rank, theta, p in harness.run_reconstruct(cfg, args.theta, args.label):
            print(f"{label} rank={rank} PSNR={p:.3f} dB")
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except (ConfigError, CapacityError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
