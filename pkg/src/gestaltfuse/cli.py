"""``gestaltfuse`` command line.

Each command reads a JSON pipeline config (``--config``); ``--seed`` and
``--out`` override its seed and output directory. Logs go to standard error
at the level named by ``GESTALTFUSE_LOG`` (default WARNING). On failure the
last line on standard error is ``error: {"module": ..., "error": ..., "message": ...}``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import pipeline
from .config import ConfigInvalid, load_config
from .errors import GestaltFuseError
from .synth import MediaSpec, SynthSpec, write_dataset

log = logging.getLogger("gestaltfuse")

EXIT_CONFIG = 2
EXIT_FAILURE = 1


def _common(p: argparse.ArgumentParser, config: bool = True) -> None:
    if config:
        p.add_argument("--config", required=True, type=Path, help="pipeline config JSON")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", type=Path, default=None, help="override the output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gestaltfuse", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset and its pipeline config")
    _common(p, config=False)
    p.add_argument("--n-users", type=int, default=SynthSpec.n_users)
    p.add_argument("--n-videos", type=int, default=SynthSpec.n_videos)
    p.add_argument("--latent-rank", type=int, default=SynthSpec.latent_rank)
    p.add_argument("--density", type=float, default=SynthSpec.density)
    p.add_argument("--noise-sd-ms", type=float, default=SynthSpec.noise_sd_ms)

    for name, help_text in [
        ("score-gt", "regenerate ground-truth memorability scores"),
        ("extract-audio", "compute MFCC feature images"),
        ("gestalt", "score audio gestalt and route videos"),
        ("evaluate", "score fused predictions on the test split"),
        ("pipeline", "run every stage in dependency order"),
    ]:
        _common(sub.add_parser(name, help=help_text))
    for name, help_text in [
        ("fuse", "write fused predictions per run"),
        ("calibrate", "grid-search fusion weights and threshold on the train split"),
    ]:
        p = sub.add_parser(name, help=help_text)
        _common(p)
        p.add_argument("--run", default=None, help="run id (run4) or run key (run4_short); default all")
    return parser


def _error_line(module: str, error: str, message: str) -> str:
    return "error: " + json.dumps({"module": module, "error": error, "message": message}, sort_keys=True)


def _dispatch(args) -> None:
    if args.command == "synth":
        out = args.out or Path(".")
        spec = SynthSpec(
            n_users=args.n_users,
            n_videos=args.n_videos,
            latent_rank=args.latent_rank,
            density=args.density,
            noise_sd_ms=args.noise_sd_ms,
            seed=0 if args.seed is None else args.seed,
        )
        for path in write_dataset(out, spec, MediaSpec()):
            print(path)
        return

    cfg = load_config(args.config, seed=args.seed, out=args.out)
    command = args.command
    if command == "score-gt":
        outputs = [pipeline.cmd_score_gt(cfg)]
    elif command == "extract-audio":
        outputs = [pipeline.cmd_extract_audio(cfg)]
    elif command == "gestalt":
        outputs = [pipeline.cmd_gestalt(cfg)]
    elif command == "calibrate":
        outputs = pipeline.cmd_calibrate(cfg, args.run)
    elif command == "fuse":
        outputs = pipeline.cmd_fuse(cfg, args.run)
    elif command == "evaluate":
        outputs = list(pipeline.cmd_evaluate(cfg))
    else:
        outputs = list(pipeline.cmd_pipeline(cfg))
    for path in outputs:
        print(path)


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("GESTALTFUSE_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    logging.captureWarnings(True)
    args = build_parser().parse_args(argv)
    try:
        _dispatch(args)
    except ConfigInvalid as exc:
        print(_error_line(exc.module, exc.code, str(exc)), file=sys.stderr)
        return EXIT_CONFIG
    except GestaltFuseError as exc:
        print(_error_line(exc.module, exc.code, str(exc)), file=sys.stderr)
        return EXIT_FAILURE
    except (ValueError, OSError) as exc:
        print(_error_line("cli", type(exc).__name__, str(exc)), file=sys.stderr)
        return EXIT_FAILURE
    return 0


if __name__ == "__main__":
    sys.exit(main())
