"""Parameter sweeps over partition width, retention ratio, strategy and
seed, reported as CSV.
"""

from __future__ import annotations

import csv
import io
import itertools
import logging
from collections.abc import Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, TextIO

import numpy as np

from .cache.model import LayerCache
from .compressor import run_compression
from .config import Strategy
from .exceptions import ConfigError
from .factory import Factory
from .sim import (
    evaluated_layers,
    fidelity_between,
    gen_caches,
    needle_eval,
    retained_outlier_fraction,
)

__all__ = [
    "DEFAULT_LAG_SIZES",
    "DEFAULT_RETAIN_RATIOS",
    "SWEEP_COLUMNS",
    "SweepPoint",
    "sweep_grid",
    "run_point",
    "run_sweep",
    "write_csv",
    "format_csv",
]

DEFAULT_LAG_SIZES = (128, 512, 1024)
"""Partition widths swept when ``lag_size`` is not configured."""

DEFAULT_RETAIN_RATIOS = (0.5, 0.25, 0.167, 0.125)
"""Retention ratios swept when ``retain_ratio`` is not configured."""

SWEEP_COLUMNS = (
    "L",
    "r",
    "strategy",
    "seed",
    "kept_per_partition",
    "achieved_ratio",
    "retained",
    "cosine_mean",
    "cosine_min",
    "deviation_mean",
    "deviation_max",
    "outlier_retention",
    "needle_hit_rate",
)
"""Columns of the sweep CSV, in order."""

logger = logging.getLogger(__name__)


@dataclass(frozen=True, kw_only=True)
class SweepPoint:
    """One combination of the sweep grid."""

    lag_size: int

    retain_ratio: float

    strategy: Strategy

    seed: int


def sweep_grid(factory: Factory) -> list[SweepPoint]:
    """Expand the run configuration into grid points, in row order.

    ``lag_size`` and ``retain_ratio`` that were not set explicitly take
    the default grids. The grid is ordered by partition width, then ratio,
    then strategy, then seed.

    Raises
    ------
    ConfigError
        Raised if no compressor parameter is a list.
    """
    run = factory.run_config
    explicit = run.model_fields_set
    lag_sizes = (
        run.lag_sizes if "lag_size" in explicit else list(DEFAULT_LAG_SIZES)
    )
    ratios = (
        run.retain_ratios
        if "retain_ratio" in explicit
        else list(DEFAULT_RETAIN_RATIOS)
    )
    if explicit >= {"lag_size", "retain_ratio"} and not run.is_sweep:
        raise ConfigError(
            "A sweep needs a list for lag_size, retain_ratio or strategy"
        )
    return [
        SweepPoint(lag_size=lag, retain_ratio=r, strategy=s, seed=seed)
        for lag, r, s, seed in itertools.product(
            lag_sizes, ratios, run.strategies, run.seeds
        )
    ]


def run_point(
    factory: Factory,
    point: SweepPoint,
    source: Sequence[LayerCache] | None = None,
) -> dict[str, Any]:
    """Evaluate one grid point and return its CSV row.

    With ``source`` the given uncompressed caches are compressed and only
    fidelity is measured; otherwise a stream is generated from the seed and
    outlier retention and needle retrieval are measured as well.
    """
    run = factory.run_config
    config = factory.create_compressor_config(
        lag_size=point.lag_size,
        retain_ratio=point.retain_ratio,
        strategy=point.strategy,
    )
    spec = None
    if source is None:
        spec = factory.create_stream_spec(config, point.seed)
        caches = gen_caches(spec)
    else:
        caches = list(source)
    compressed, report = run_compression(caches, config, run.mode)
    fidelity = fidelity_between(
        caches, compressed, config, run.n_queries, point.seed
    )
    layers = evaluated_layers(caches, config)
    achieved = (
        float(np.mean([report.layers[i].achieved_ratio for i in layers]))
        if layers
        else 0.0
    )

    outlier_retention: float | str = ""
    needle_hit_rate: float | str = ""
    if spec is not None:
        if spec.outliers:
            outlier_retention = retained_outlier_fraction(
                compressed, spec, config
            )
        if run.needle_depths:
            needle_hit_rate = needle_eval(
                spec, config, run.needle_depths
            ).hit_rate

    logger.info(
        f"L={point.lag_size} r={point.retain_ratio} "
        f"strategy={point.strategy.value} seed={point.seed}: "
        f"C={achieved:.4f} cosine={fidelity.cosine_mean:.4f}"
    )
    return {
        "L": point.lag_size,
        "r": point.retain_ratio,
        "strategy": point.strategy.value,
        "seed": point.seed,
        "kept_per_partition": config.kept_per_partition,
        "achieved_ratio": achieved,
        "retained": (
            report.layers[layers[0]].retained_length if layers else 0
        ),
        "cosine_mean": fidelity.cosine_mean,
        "cosine_min": fidelity.cosine_min,
        "deviation_mean": fidelity.deviation_mean,
        "deviation_max": fidelity.deviation_max,
        "outlier_retention": outlier_retention,
        "needle_hit_rate": needle_hit_rate,
    }


def run_sweep(
    factory: Factory, source: Sequence[LayerCache] | None = None
) -> list[dict[str, Any]]:
    """Run every grid point; rows come back in grid order.

    Points run on up to ``jobs`` threads.
    """
    points = sweep_grid(factory)
    jobs = factory.run_config.jobs
    logger.info(f"Sweeping {len(points)} combinations on {jobs} threads")
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as executor:
            return list(
                executor.map(lambda p: run_point(factory, p, source), points)
            )
    return [run_point(factory, p, source) for p in points]


def write_csv(rows: Iterable[dict[str, Any]], stream: TextIO) -> None:
    """Write sweep rows as CSV, header included."""
    writer = csv.DictWriter(
        stream, fieldnames=SWEEP_COLUMNS, lineterminator="\n"
    )
    writer.writeheader()
    writer.writerows(rows)


def format_csv(rows: Iterable[dict[str, Any]]) -> str:
    """Render sweep rows as CSV text."""
    buffer = io.StringIO()
    write_csv(rows, buffer)
    return buffer.getvalue()
