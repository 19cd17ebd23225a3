"""Command-line entry point: ``mbl-dann <command> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys

from . import config as config_mod
from .errors import (
    CapacityError,
    ConfigError,
    DivergenceError,
    FormatError,
    InvalidArgumentError,
    MblDannError,
)
from .pipeline import COMMANDS

EXIT_OK, EXIT_CONFIG, EXIT_CAPACITY, EXIT_IO, EXIT_DIVERGENCE = 0, 2, 3, 4, 5

log = logging.getLogger("mbl_dann")


def _u64(text):
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _positive(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="pipeline config file")
    common.add_argument("--workers", type=_positive, metavar="N", help="worker processes")
    common.add_argument("--seed", type=_u64, metavar="U64", help="master seed")
    common.add_argument("--force", action="store_true", help="recompute existing artifacts")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("-q", "--quiet", action="store_true", help="only log warnings")

    parser = _Parser(prog="mbl-dann", description="Locate the MBL transition with a DANN classifier.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "generate": "build labeled and unlabeled eigenstate sets",
        "baseline": "gap-ratio phase diagram",
        "train": "train one classifier per system size",
        "predict": "disorder-averaged classifier output on the (h, eps) grid",
        "collapse": "finite-size collapse and phase-boundary table",
        "report": "SVG phase diagrams and collapse plots",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def resolve_config(args) -> config_mod.PipelineConfig:
    cfg = config_mod.load(args.config) if args.config else config_mod.PipelineConfig()
    try:
        return cfg.with_overrides(workers=args.workers, master_seed=args.seed, out_dir=args.out)
    except InvalidArgumentError as exc:
        raise ConfigError(str(exc)) from exc


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, (ConfigError, InvalidArgumentError)):
        return EXIT_CONFIG
    if isinstance(exc, CapacityError):
        return EXIT_CAPACITY
    if isinstance(exc, DivergenceError):
        return EXIT_DIVERGENCE
    if isinstance(exc, (OSError, FormatError)):
        return EXIT_IO
    return 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        for path in COMMANDS[args.command](cfg, force=args.force):
            log.info("wrote %s", path)
    except (MblDannError, OSError) as exc:
        log.error("%s", exc)
        return exit_code(exc)
    except KeyboardInterrupt:
        log.error("interrupted")
        return 130
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
