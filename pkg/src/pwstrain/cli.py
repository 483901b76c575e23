"""Command-line entry point ``pw``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

import numba

from .config import ConfigError, load_config
from .pipeline import STAGES, StageError, run_pipeline, run_stage

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3

log = logging.getLogger("pwstrain")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pw", description="Plane-wave compounding strain imaging experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (*STAGES, "pipeline", "sweep"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="TOML experiment file")
        p.add_argument("--out", help="artifact directory (overrides output.directory)")
        p.add_argument("--seed", type=int, help="run seed (overrides run.seed)")
        p.add_argument("--threads", type=int, help="numba worker threads; 1 is the reference path")
        p.add_argument("--force", action="store_true", help="ignore cached stage outputs")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "sweep":
            p.add_argument("--kind", choices=("nvs_theta", "snr", "cr_snr"), help="overrides sweep.kind")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be non-negative")
            cfg = replace(cfg, run=replace(cfg.run, seed=args.seed))
        if args.threads is not None:
            if not 1 <= args.threads <= numba.config.NUMBA_NUM_THREADS:
                raise ConfigError(f"--threads must be in [1, {numba.config.NUMBA_NUM_THREADS}]")
            numba.set_num_threads(args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "pipeline":
            out = run_pipeline(cfg, args.out, args.force)
        elif args.command == "sweep":
            from .sweep import run_sweep

            out = run_sweep(cfg, args.kind, args.out)
        else:
            out = run_stage(cfg, args.command, args.out, args.force)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"stage failed {exc}", file=sys.stderr)
        return EXIT_STAGE
    except Exception as exc:
        print(f"stage failed [{args.command}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_STAGE
    print(out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
