"""
Main entry point for the Anderson-Holstein master-equation simulator.

Usage:
    ahsim run configs/lindblad.json        # One configured run
    ahsim sweep configs/blockade.json      # One run per swept parameter value
    ahsim check                            # Desk-scale acceptance suite
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv

from src.backend.acceptance import CHECKS, run_acceptance
from src.backend.errors import AhsimError
from src.backend.output import print_summary
from src.backend.runner import run, run_sweep
from src.config.run_config import parse_config

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def _configure_logging(verbose: bool) -> None:
    level_name = os.getenv("AHSIM_LOG_LEVEL", "INFO").upper()
    level = logging.DEBUG if verbose else getattr(logging, level_name, logging.INFO)
    logging.basicConfig(level=level, format=LOG_FORMAT)


def _workers() -> Optional[int]:
    value = os.getenv("AHSIM_WORKERS")
    if not value:
        return None
    try:
        workers = int(value)
    except ValueError:
        logger.warning(f"Ignoring AHSIM_WORKERS={value!r}: not an integer")
        return None
    return workers if workers > 0 else None


def cmd_run(args: argparse.Namespace) -> int:
    config = parse_config(args.config)
    out_dir = Path(args.out_dir)
    logger.info(f"Running '{config.name}' ({config.generator}) into {out_dir}")
    state = run(config, out_dir, workers=_workers())
    print_summary(state)
    return 0 if state.succeeded else 1


def cmd_sweep(args: argparse.Namespace) -> int:
    config = parse_config(args.config)
    out_dir = Path(args.out_dir)
    result = run_sweep(config, out_dir, workers=_workers())
    print_summary(result.state)
    for entry in result.entries:
        print(f"  {config.sweep.parameter}={entry['value']}: {entry['status']} ({entry['out_dir']})")
    return 0 if result.succeeded else 1


def cmd_check(args: argparse.Namespace) -> int:
    results = run_acceptance(args.only or None)

    print("\n" + "=" * 60)
    print("ACCEPTANCE CHECKS")
    print("=" * 60)
    for result in results:
        status = "PASS" if result.passed else "FAIL"
        value = "" if result.value is None else f" value={result.value:.3e}"
        print(f"[{status}] {result.name}{value}  {result.detail}")
        for finding in result.findings:
            print(f"        finding: {finding}")
    failed = [r.name for r in results if not r.passed]
    print(f"\n{len(results) - len(failed)}/{len(results)} passed")
    print("=" * 60)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = [
        {"name": r.name, "passed": r.passed, "value": r.value, "threshold": r.threshold,
         "detail": r.detail, "findings": r.findings, "seconds": r.seconds}
        for r in results
    ]
    with open(out_dir / "acceptance.json", "w") as f:
        json.dump(report, f, indent=2)
    return 0 if not failed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ahsim",
        description="Anderson-Holstein master equations: Redfield, Lindblad, rate and phase-space solvers",
    )
    parser.add_argument(
        "--out-dir",
        default=os.getenv("AHSIM_OUT_DIR", "output"),
        help="Directory for CSV files and manifests (default: $AHSIM_OUT_DIR or 'output')",
    )
    parser.add_argument(
        "--verbose",
        action="store_true",
        help="Enable debug logging",
    )

    commands = parser.add_subparsers(dest="command", required=True)

    run_parser = commands.add_parser("run", help="Execute one configured run")
    run_parser.add_argument("config", help="Path to a JSON run configuration")
    run_parser.set_defaults(handler=cmd_run)

    sweep_parser = commands.add_parser("sweep", help="Run a parameter sweep from a config with a 'sweep' section")
    sweep_parser.add_argument("config", help="Path to a JSON run configuration")
    sweep_parser.set_defaults(handler=cmd_sweep)

    check_parser = commands.add_parser("check", help="Run the acceptance suite")
    check_parser.add_argument(
        "--only",
        action="append",
        choices=sorted(CHECKS),
        help="Run only this check (repeatable)",
    )
    check_parser.set_defaults(handler=cmd_check)
    return parser


def main(argv: Optional[list[str]] = None) -> None:
    """Main entry point."""
    # .env may set AHSIM_* defaults
    load_dotenv()

    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.verbose)

    try:
        code = args.handler(args)
    except KeyboardInterrupt:
        print("\n\nInterrupted by user")
        sys.exit(130)
    except AhsimError as e:
        logger.error(f"{type(e).__name__}: {e}")
        sys.exit(2)
    except Exception as e:
        logger.error(f"Fatal error: {e}")
        sys.exit(1)
    sys.exit(code)


if __name__ == "__main__":
    main()
