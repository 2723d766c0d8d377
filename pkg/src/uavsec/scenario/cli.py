"""Command line entry point: run, replay, export, validate.

Exit codes: 0 success, 1 validation error, 2 runtime abort, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from ..errors import BagFormatError, HashMismatch, StorageError, UavSimError, ValidationError
from .config import load
from .export import export_bag
from .runner import replay, run

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_IO = 0, 1, 2, 3
_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="uavsec", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario")
    r.add_argument("--scenario", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--mode", choices=["ideal", "sensor"])
    r.add_argument("--duration", type=float)
    r.add_argument("--record", help="bag output path (JSONL)")
    r.add_argument("--export", help="CSV output directory")
    r.add_argument("--report", help="report JSON output path")

    rp = sub.add_parser("replay", help="replay a bag and rebuild its report")
    rp.add_argument("--bag", required=True)
    rp.add_argument("--scenario", required=True)
    rp.add_argument("--force", action="store_true", help="ignore a scenario hash mismatch")
    rp.add_argument("--export")

    e = sub.add_parser("export", help="export a bag to CSV")
    e.add_argument("--bag", required=True)
    e.add_argument("--out", required=True)

    v = sub.add_parser("validate", help="validate a scenario file")
    v.add_argument("--scenario", required=True)
    return p


def _summary(report) -> str:
    return json.dumps({k: v for k, v in report.to_dict().items()
                       if k in ("scenario", "scenario_hash", "ticks", "terminal_error", "collision_free",
                                "attack_active_ticks", "wall_clock_s", "realtime_factor")}, indent=2)


def main(argv=None) -> int:
    level = os.environ.get("SIM_LOG_LEVEL", "warn").lower()
    logging.basicConfig(level=_LEVELS.get(level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = _parser().parse_args(argv)
    try:
        if args.command == "validate":
            cfg = load(args.scenario)
            print(f"ok {cfg.name} hash={cfg.hash}")
        elif args.command == "run":
            overrides = {"seed": args.seed, "mode": args.mode, "duration": args.duration}
            res = run(args.scenario, record=args.record, export=args.export, report=args.report,
                      overrides=overrides)
            print(_summary(res.report))
        elif args.command == "replay":
            rep = replay(args.bag, args.scenario, force=args.force, export=args.export)
            print(json.dumps(rep.counts(), indent=2, sort_keys=True))
        elif args.command == "export":
            files = export_bag(args.bag, args.out)
            print(f"wrote {len(files)} files to {args.out}")
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except HashMismatch as exc:
        print(f"refusing replay: bag hash {exc.expected} != scenario hash {exc.actual} (use --force)",
              file=sys.stderr)
        return EXIT_VALIDATION
    except BagFormatError as exc:
        print(f"malformed bag: {exc}", file=sys.stderr)
        return EXIT_IO
    except (StorageError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except UavSimError as exc:
        print(f"runtime abort: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
