"""Command line entry point: ``adpt annotate | evaluate | simulate``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import RunConfig
from .evaluation import load_mapping
from .exceptions import AdptError, ConfigError, EmptyInput, RouterIOError
from .pipeline import run_annotate, run_evaluate, run_simulate

log = logging.getLogger("adpt")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--strategy", choices=["zsr", "fpb", "ensemble"])
    p.add_argument("--vocab", choices=["gl", "et", "tj", "GL", "ET", "TJ"])
    p.add_argument("--sqr", action="store_true", help="enable self-questioning refinement")
    p.add_argument("--provider", help="mock, or a provider preset/section name (gemini, gpt, grok, qwen)")
    p.add_argument("--seed", type=int)
    p.add_argument("--concurrency", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adpt", description="Batch structural-defect annotation with VLMs.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    ann = sub.add_parser("annotate", help="annotate a directory of images")
    ann.add_argument("--input", required=True)
    ann.add_argument("--output", required=True)
    ann.add_argument("--config", required=True)
    ann.add_argument("--move", action="store_true", help="move instead of copy source images")
    _add_run_flags(ann)

    ev = sub.add_parser("evaluate", help="score an annotated output directory")
    ev.add_argument("--output", required=True)
    ev.add_argument("--mapping", help="JSON file mapping codes to labels (default A-D, N)")

    sim = sub.add_parser("simulate", help="run the pipeline on synthetic coded images with the mock")
    sim.add_argument("--config", required=True)
    sim.add_argument("--distribution", required=True, help="e.g. crack=3000,efflorescence=967")
    sim.add_argument("--output", help="overrides output_dir from the config")
    _add_run_flags(sim)
    return parser


def _overrides(args) -> dict:
    return dict(strategy=args.strategy, vocabulary=args.vocab, sqr=args.sqr, provider=args.provider,
                seed=args.seed, concurrency=args.concurrency)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "annotate":
            cfg = RunConfig.load(args.config).with_overrides(
                input_dir=args.input, output_dir=args.output, move=args.move, **_overrides(args))
            summary = run_annotate(cfg)
        elif args.command == "simulate":
            cfg = RunConfig.load(args.config).with_overrides(output_dir=args.output, **_overrides(args))
            summary = run_simulate(cfg, args.distribution)
        else:
            cfg = RunConfig(output_dir=args.output)
            if args.mapping:
                cfg.code_mapping = load_mapping(args.mapping)
            result = run_evaluate(cfg)
            print(json.dumps({"multiclass": result.multiclass.to_dict(), "binary": result.binary.to_dict()},
                             indent=2))
            return 0
    except (ConfigError, EmptyInput, RouterIOError, OSError) as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except AdptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(summary.to_dict(), indent=2))
    return summary.exit_code


if __name__ == "__main__":
    sys.exit(main())
