"""Command-line entry point: ``chppi <stage> --config cfg.json``."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from .config import PipelineConfig
from .errors import ChppiError, StageError, ValidationError
from .pipeline import STAGES, run_pipeline, run_stage

EXIT_OK, EXIT_VALIDATION, EXIT_STAGE = 0, 2, 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chppi", description="Chagas potential prevalence index pipeline")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic world with a ready-to-run config")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--blocks", type=int, default=500)
    s.add_argument("--users", type=int, default=10_000)
    s.add_argument("--providers", type=int, default=60)

    for name in STAGES + ("run-all",):
        sp = sub.add_parser(name, help="run every stage in order" if name == "run-all" else f"run the {name} stage")
        sp.add_argument("--config", required=True)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int)
        sp.add_argument("--alpha", type=float)
        sp.add_argument("--beta", type=float)
    return p


def _load(args) -> PipelineConfig:
    cfg = PipelineConfig.from_file(args.config)
    over = {k: getattr(args, k) for k in ("seed", "threads", "alpha", "beta") if getattr(args, k) is not None}
    return dataclasses.replace(cfg, **over) if over else cfg


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth":
            from .synth import WorldScale, generate_synthetic_world, write_world
            world = generate_synthetic_world(args.seed, WorldScale(blocks=args.blocks, users=args.users,
                                                                   providers=args.providers))
            print(write_world(world, args.out))
            return EXIT_OK
        cfg = _load(args)
        if args.command == "run-all":
            run_pipeline(cfg)
        else:
            run_stage(cfg, args.command)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except StageError as exc:
        print(f"stage error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except ChppiError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
