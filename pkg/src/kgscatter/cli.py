"""Command line entry point: ``kgscatter <subcommand> --config cfg.json --out dir``."""
from __future__ import annotations

import argparse
import logging
import os
import sys

from .config import ConfigError, load_config_file
from .experiment import SUBCOMMAND_PROBES, run_experiment
from .report import render_report_file

RUN_COMMANDS = ("simulate", "wave-op", "decay-check", "commutator-check", "decompose", "run")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kgscatter", description="Klein-Gordon scattering experiments")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in RUN_COMMANDS:
        p = sub.add_parser(name, help=f"probes: {', '.join(sorted(SUBCOMMAND_PROBES.get(name, ['all'])))}")
        p.add_argument("--config", required=True, help="experiment JSON")
        p.add_argument("--out", help="output directory (overrides output.directory)")
        p.add_argument("--threads", type=int, help="FFT worker threads")
        p.add_argument("--seed", type=int, help="root seed")
        p.add_argument("--exploratory", action="store_true", help="permit out-of-window exponents")
        p.add_argument("-v", "--verbose", action="store_true")
    p = sub.add_parser("report", help="render report.json as text")
    p.add_argument("path", help="report.json or the directory holding it")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "report":
        path = args.path
        if os.path.isdir(path):
            path = os.path.join(path, "report.json")
        try:
            sys.stdout.write(render_report_file(path))
        except (OSError, ValueError) as exc:
            print(f"cannot read report: {exc}", file=sys.stderr)
            return 2
        return 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    over = {}
    if args.threads is not None:
        over["threads"] = args.threads
    if args.seed is not None:
        over["seed"] = args.seed
    if args.exploratory:
        over["exploratory"] = True
    try:
        cfg = load_config_file(args.config, over)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return 2
    sub = None if args.command == "run" else args.command
    status, report = run_experiment(cfg, args.out, sub)
    for name in report["failed_required"]:
        print(f"required probe {name}: {report['probes'][name]['status']}", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
