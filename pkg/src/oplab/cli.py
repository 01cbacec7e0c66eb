"""Command line entry point: list, run, run-all and check."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .errors import OplabError, UnknownScenario
from .lab import PASSING, _clean, list_scenarios, run_all, run_scenario


def _levels(text: str) -> list[int]:
    try:
        out = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"levels must be comma separated integers, got {text!r}")
    if not out or min(out) < 4:
        raise argparse.ArgumentTypeError("levels must be integers >= 4")
    return out


def _threads(args) -> int:
    try:
        env = int(os.environ.get("OPLAB_THREADS", "1"))
    except ValueError:
        env = 1
    return max(1, env)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="oplab", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("list", help="list scenario ids")

    r = sub.add_parser("run", help="run one scenario")
    r.add_argument("--scenario", required=True)
    r.add_argument("--levels", type=_levels)
    r.add_argument("--out", default=None)
    r.add_argument("--config", default=None, help="JSON file with {levels, params}")

    a = sub.add_parser("run-all", help="run every scenario")
    a.add_argument("--out", required=True)
    a.add_argument("--levels", type=_levels)

    c = sub.add_parser("check", help="randomized invariant suite")
    c.add_argument("--suite", choices=["invariants"], required=True)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", default=None)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")

    if args.command == "list":
        for row in list_scenarios():
            print(f"{row['id']:<20} {row['anchor']}")
        return 0

    try:
        if args.command == "run":
            config = None
            if args.config:
                with open(args.config) as fh:
                    config = json.load(fh)
            rep = run_scenario(args.scenario, levels=args.levels, out=args.out or f"out/{args.scenario}", config=config)
            for c in rep["checks"]:
                print(f"{'PASS' if c['passed'] else 'FAIL'}  {c['name']}")
            print(f"verdict: {rep['verdict']}  ({rep['runtime_s']:.1f} s)")
            return 0 if rep["verdict"] in PASSING else 1

        if args.command == "run-all":
            summary = run_all(levels=args.levels, out=args.out, threads=_threads(args))
            for sid, row in summary["scenarios"].items():
                print(f"{sid:<20} {row['verdict']}")
            return 0 if summary["all_passed"] else 1

        if args.command == "check":
            from .suite import run_invariant_suite

            results = run_invariant_suite(seed=args.seed)
            for name, res in results.items():
                print(f"{'PASS' if res['passed'] else 'FAIL'}  {name}: {res['detail']}")
            if args.out:
                with open(args.out, "w") as fh:
                    json.dump(_clean(results), fh, indent=2, sort_keys=True)
            return 0 if all(r["passed"] for r in results.values()) else 1
    except UnknownScenario as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OplabError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
