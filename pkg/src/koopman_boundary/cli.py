"""Command-line entry point: ``koopman-boundary --config run.json [--stage fit]``."""
from __future__ import annotations

import argparse
import logging
import sys

from .errors import KoopmanBoundaryError
from .pipeline import OUT_ENV, STAGES, PipelineConfig, resolve_out_dir, run_pipeline


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="koopman-boundary",
        description="Estimate a stability boundary from saddle-point Koopman eigenfunctions.",
        epilog=f"The output directory defaults to ${OUT_ENV}, then ./koopman_out.",
    )
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="JSON pipeline config")
    src.add_argument("--preset", help="builtin config: toggle_switch, speed_control or two_gen_power")
    p.add_argument("--out", help="output directory")
    p.add_argument("--stage", default="all", choices=("all",) + STAGES)
    p.add_argument("--seed", type=int, help="override seed.rng_seed")
    p.add_argument("--quiet", action="store_true", help="only report errors")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig.from_dict({"preset": args.preset})
        if args.seed is not None:
            if args.seed < 0:
                raise ValueError("--seed must be non-negative")
            cfg = cfg.with_overrides(seed={"rng_seed": args.seed})
        out = resolve_out_dir(args.out, cfg)
        man = run_pipeline(cfg, out, args.stage)
    except (KoopmanBoundaryError, ValueError, OSError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    if not args.quiet:
        print(f"wrote {len(man['artifacts'])} artifacts to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
