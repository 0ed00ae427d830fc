"""Command line: ``qdlink simulate | analyze | report``.

Exit codes: 0 success, 2 configuration error, 3 I/O or schema error,
4 analysis precondition failed (no block yields a fidelity).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .analysis import analyze
from .config import load_config
from .errors import ConfigError, NoPeakError, SchemaError, UndefinedFidelityError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_ANALYSIS = 4

log = logging.getLogger("qdlink")


def _simulate(args) -> int:
    from .simulate import run_scenario

    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(scenario={"seed": args.seed})
    result = run_scenario(cfg, out_dir=args.out)
    print(json.dumps(result.summary, indent=2, sort_keys=True))
    if len(result.events) and not result.analysis.records:
        log.error("no analysis block produced a fidelity")
        return EXIT_ANALYSIS
    return EXIT_OK


def _analyze(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out) if args.out else Path(args.log).parent
    result = analyze(args.log, cfg, out_dir=out)
    n_events = sum(int(b.hists[0].counts_total.sum()) for b in result.blocks)
    if not result.records:
        if n_events == 0:
            print("event log holds no coincidences; wrote empty series")
            return EXIT_OK
        log.error("no analysis block produced a fidelity")
        return EXIT_ANALYSIS
    F = result.fidelities()
    print(f"{len(result.records)} of {len(result.blocks)} blocks analyzed; mean F = {F[F == F].mean():.4f}")
    return EXIT_OK


def _report(args) -> int:
    from .report import report

    print(report(args.dir).text, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qdlink", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a scenario and write its artifacts")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_simulate)

    a = sub.add_parser("analyze", help="re-analyze a persisted event log")
    a.add_argument("--log", required=True)
    a.add_argument("--config", required=True)
    a.add_argument("--out", help="output directory (default: next to the log)")
    a.set_defaults(func=_analyze)

    r = sub.add_parser("report", help="write figure CSVs for a run directory")
    r.add_argument("--dir", required=True)
    r.set_defaults(func=_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SchemaError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NoPeakError, UndefinedFidelityError) as exc:
        print(f"analysis error: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS


if __name__ == "__main__":
    sys.exit(main())
