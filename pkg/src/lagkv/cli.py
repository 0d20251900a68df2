"""The ``lagkv`` command-line interface.

Data outputs (KVD files, CSV tables, metrics records) go to files or
standard output; logging and diagnostics go to standard error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import TextIO

from pydantic import ValidationError

from . import __version__
from .cache.kvd import load_kvd, save_kvd
from .cache.layout import (
    compression_ratio,
    partition_layout,
    retained_length,
)
from .compressor import run_compression, select_partition
from .config import CompressorConfig
from .exceptions import (
    ConfigError,
    EmptySequenceError,
    KvdFormatError,
    ShapeError,
    StaleRangeError,
    TopKError,
)
from .factory import Factory
from .scoring import rank_scores
from .sweep import run_sweep, write_csv

__all__ = ["main", "build_parser", "SCORES_COLUMNS"]

SCORES_COLUMNS = (
    "position",
    "key_score",
    "value_score",
    "score",
    "rank",
    "kept",
)
"""Columns of the ``scores`` CSV, in order."""

EXIT_IO = 1
EXIT_CONFIG = 2
EXIT_FORMAT = 3

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    """Create the argument parser of the ``lagkv`` command."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "-c",
        "--config",
        type=Path,
        help="Run configuration file (TOML key = value lines).",
    )
    common.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override a configuration key; may be repeated.",
    )
    common.add_argument(
        "-v",
        "--verbose",
        action="store_true",
        help="Log debug messages to standard error.",
    )

    parser = argparse.ArgumentParser(
        prog="lagkv",
        description="Attention-free KV cache compression with lag-relative "
        "token scoring.",
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {__version__}"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    compress = commands.add_parser(
        "compress", parents=[common], help="Compress a KVD file."
    )
    compress.add_argument("input", nargs="?", type=Path)
    compress.add_argument("output", nargs="?", type=Path)
    compress.add_argument(
        "--metrics",
        type=Path,
        help="Write metrics records here instead of standard output.",
    )
    compress.set_defaults(handler=cmd_compress)

    sweep = commands.add_parser(
        "sweep",
        parents=[common],
        help="Sweep compressor parameters over a KVD file or generated "
        "streams.",
    )
    sweep.add_argument("--input", type=Path, help="Uncompressed KVD file.")
    sweep.add_argument("--output", type=Path, help="CSV output file.")
    sweep.set_defaults(handler=cmd_sweep)

    simulate = commands.add_parser(
        "simulate",
        parents=[common],
        help="Sweep compressor parameters over generated streams.",
    )
    simulate.add_argument("--output", type=Path, help="CSV output file.")
    simulate.set_defaults(handler=cmd_simulate)

    scores = commands.add_parser(
        "scores",
        parents=[common],
        help="List the token scores of one partition of one head.",
    )
    scores.add_argument("input", type=Path)
    scores.add_argument("--layer", type=int, default=0)
    scores.add_argument("--head", type=int, default=0)
    scores.add_argument("--partition", type=int, default=0)
    scores.set_defaults(handler=cmd_scores)

    ratio = commands.add_parser(
        "ratio",
        parents=[common],
        help="Print the retained length and compression ratio.",
    )
    ratio.add_argument("seq_len", type=int, metavar="L_s")
    ratio.add_argument("sink_size", type=int, metavar="S")
    ratio.add_argument("lag_size", type=int, metavar="L")
    ratio.add_argument("retain_ratio", type=float, metavar="r")
    ratio.set_defaults(handler=cmd_ratio)
    return parser


def _open_output(path: Path | None) -> TextIO:
    if path is None:
        return sys.stdout
    return path.open("w", newline="")


def cmd_compress(args: argparse.Namespace, factory: Factory) -> int:
    """Compress a KVD file and emit one metrics record per layer."""
    run = factory.run_config
    source = args.input or run.input
    target = args.output or run.output
    if source is None or target is None:
        raise ConfigError("compress needs an input and an output path")
    config = factory.create_compressor_config()
    caches = load_kvd(source)
    compressed, report = run_compression(
        caches, config, run.mode, jobs=run.jobs
    )
    save_kvd(compressed, target)
    logger.info(f"Compressed {source} into {target}")
    stream = _open_output(args.metrics)
    try:
        stream.write(report.to_jsonl())
    finally:
        if stream is not sys.stdout:
            stream.close()
    return 0


def _write_sweep(
    args: argparse.Namespace, factory: Factory, source_path: Path | None
) -> int:
    source = load_kvd(source_path) if source_path is not None else None
    rows = run_sweep(factory, source)
    stream = _open_output(args.output or factory.run_config.output)
    try:
        write_csv(rows, stream)
    finally:
        if stream is not sys.stdout:
            stream.close()
    return 0


def cmd_sweep(args: argparse.Namespace, factory: Factory) -> int:
    """Write one CSV row per parameter combination."""
    source = args.input or factory.run_config.input
    return _write_sweep(args, factory, source)


def cmd_simulate(args: argparse.Namespace, factory: Factory) -> int:
    """Sweep over generated streams, ignoring any configured input."""
    return _write_sweep(args, factory, None)


def cmd_scores(args: argparse.Namespace, factory: Factory) -> int:
    """List the scores of one partition of one head, by position."""
    config = factory.create_compressor_config()
    caches = load_kvd(args.input)
    if not 0 <= args.layer < len(caches):
        raise ConfigError(f"layer {args.layer} out of range")
    layer = caches[args.layer]
    if not 0 <= args.head < layer.h_kv:
        raise ConfigError(f"head {args.head} out of range")
    head = layer.heads[args.head]
    layout = partition_layout(head.seq_len, config.sink_size, config.lag_size)
    if not 0 <= args.partition < len(layout.partitions):
        raise ConfigError(
            f"partition {args.partition} out of range "
            f"({len(layout.partitions)} compressible partitions)"
        )
    part = layout.partitions[args.partition]
    rows, keep, scores = select_partition(
        head, part, layout.reference_for(args.partition), config
    )
    positions = head.positions[rows]
    ranks = rank_scores(scores.scores)
    kept = set(keep.tolist())
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(SCORES_COLUMNS)
    for i, position in enumerate(positions.tolist()):
        writer.writerow(
            [
                position,
                float(scores.key_scores[i]),
                float(scores.value_scores[i]),
                float(scores.scores[i]),
                float(ranks[i]),
                int(i in kept),
            ]
        )
    return 0


def cmd_ratio(args: argparse.Namespace, factory: Factory) -> int:
    """Print the retained length and compression ratio of a sequence."""
    try:
        config = CompressorConfig(
            sink_size=args.sink_size,
            lag_size=args.lag_size,
            retain_ratio=args.retain_ratio,
        )
    except ValidationError as e:
        raise ConfigError(f"Invalid ratio arguments:\n{e}") from e
    kept = retained_length(
        args.seq_len, config.sink_size, config.lag_size, config.retain_ratio
    )
    ratio = compression_ratio(
        args.seq_len, config.sink_size, config.lag_size, config.retain_ratio
    )
    print(f"L_R={kept} C={ratio:.4f}")
    return 0


def _error(message: object) -> None:
    print(f"lagkv: error: {message}", file=sys.stderr)


def main(argv: Sequence[str] | None = None) -> int:
    """Run the ``lagkv`` command and return its exit code.

    Exit codes are 0 on success, 1 for I/O errors, 2 for configuration,
    argument and index errors, and 3 for malformed KVD input. Other
    exceptions propagate.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    factory = Factory()
    try:
        factory.load_run_config(args.config, args.overrides)
        return args.handler(args, factory)
    except (KvdFormatError, StaleRangeError) as e:
        _error(e)
        return EXIT_FORMAT
    except (ConfigError, EmptySequenceError, ShapeError, TopKError) as e:
        _error(e)
        return EXIT_CONFIG
    except OSError as e:
        _error(e)
        return EXIT_IO
