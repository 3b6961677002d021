"""Command-line entry point: ``mapex <stage> [--config FILE] [--seed N] [--out DIR] [--force]``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys

from . import config as config_mod
from .errors import MapexError
from .pipeline import STAGES, run_all, run_stage

STAGE_HELP = {
    "train-specialists": "train one TD3 specialist per objective",
    "train-critics": "train missing secondary critics offline on the saved buffers",
    "evaluate": "evaluate the specialists and fix the hypervolume reference point",
    "extract": "run front extraction from the specialist artifacts",
    "report": "write the final front, summary metrics and frame accounting",
}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI run configuration (defaults: desk scale)")
    p.add_argument("--seed", type=int, help="root seed, overrides [run] seed")
    p.add_argument("--out", help="run directory, overrides [run] out")
    p.add_argument("--force", action="store_true", help="recompute stages that already completed")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mapex", description="Offline Pareto-front extraction from specialists.")
    sub = parser.add_subparsers(dest="command", required=True)
    for stage in STAGES:
        _common(sub.add_parser(stage, help=STAGE_HELP[stage]))
    _common(sub.add_parser("run", help="run every stage in order"))
    show = sub.add_parser("config", help="print a complete config file")
    show.add_argument("--full-scale", metavar="TASK", help="print full-scale settings for a MuJoCo task instead")
    show.add_argument("--config", help="INI file to normalise and print")
    return parser


def resolve_config(args) -> config_mod.RunConfig:
    cfg = config_mod.load(args.config) if args.config else config_mod.RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.run = dataclasses.replace(cfg.run, seed=args.seed)
    if getattr(args, "out", None) is not None:
        cfg.run = dataclasses.replace(cfg.run, out=args.out)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "config":
        if args.full_scale:
            cfg = config_mod.full_scale(args.full_scale)
        else:
            cfg = resolve_config(args)
        sys.stdout.write(config_mod.serialize(cfg))
        return 0

    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        cfg = resolve_config(args)
        if args.command == "run":
            manifests = run_all(cfg, force=args.force)
        else:
            manifests = {args.command: run_stage(args.command, cfg, force=args.force)}
    except (MapexError, KeyError, ValueError, OSError) as exc:
        print(f"mapex {args.command}: error: {exc}", file=sys.stderr)
        return 1
    for stage, m in manifests.items():
        state = "skipped (already complete)" if m.get("skipped") else f"done in {m['wall_time_s']}s"
        print(f"{stage}: {state}; frames {json.dumps(m['frames'], sort_keys=True)}")
        if stage == "report":
            print(json.dumps(m["details"]["summary"], indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
