"""``qrt-memory`` command line: run sweeps and Fock-cutoff checks from YAML configs.

Exit codes: 0 success, 2 invalid config or arguments, 3 convergence failure.
"""
from __future__ import annotations

import argparse
import json
import sys

from . import __version__
from .config import ConfigError, load_config, load_preset, preset_names
from .experiments import (WORKERS_ENV, ConvergenceFailure, check_convergence, resolve_workers,
                          run_experiment)
from .model import FockTruncationError
from .multitime import FockConvergenceError

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_CONVERGENCE = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qrt-memory",
        description="Exact versus QRT multitime statistics for the spin-boson model.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_source(p):
        p.add_argument("--config", help="YAML experiment config")
        p.add_argument("--preset", help="bundled preset name (see `qrt-memory presets`)")

    run = sub.add_parser("run", help="evaluate a parameter grid and write a table")
    add_source(run)
    run.add_argument("--out", help="output file (default: config output.path, else stdout)")
    run.add_argument("--format", choices=("csv", "json"), help="output format (default: config)")
    run.add_argument("--workers", type=int,
                     help=f"worker processes (default: ${WORKERS_ENV} or 1)")
    run.add_argument("--no-check", action="store_true",
                     help="skip the Fock-cutoff convergence check")

    check = sub.add_parser("check", help="rerun designated grid points at n_max+2")
    add_source(check)
    check.add_argument("--workers", type=int)

    sub.add_parser("presets", help="list bundled presets")
    return parser


def _load(args):
    if bool(args.config) == bool(args.preset):
        raise ConfigError("give exactly one of --config or --preset")
    return load_config(args.config) if args.config else load_preset(args.preset)


def _cmd_run(args) -> int:
    cfg = _load(args)
    workers = resolve_workers(args.workers)
    table = run_experiment(cfg, workers, check=False if args.no_check else None)
    fmt = args.format or cfg.output.format
    out = args.out or cfg.output.path
    if out:
        table.write(out, fmt)
        print(f"wrote {len(table)} rows to {out}", file=sys.stderr)
    else:
        sys.stdout.write(table.render(fmt))
    return EXIT_OK


def _cmd_check(args) -> int:
    cfg = _load(args)
    report = check_convergence(cfg, resolve_workers(args.workers))
    print(json.dumps(report.as_dict(), indent=2))
    print(("PASS: " if report.passed else "FAIL: ") + report.message, file=sys.stderr)
    return EXIT_OK if report.passed else EXIT_CONVERGENCE


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "presets":
            print("\n".join(preset_names()))
            return EXIT_OK
        if args.command == "run":
            return _cmd_run(args)
        return _cmd_check(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ConvergenceFailure as exc:
        print(f"convergence failure: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (FockTruncationError, FockConvergenceError) as exc:
        print(f"convergence failure: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
