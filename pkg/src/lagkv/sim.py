"""Synthetic KV streams and a toy attention evaluator.

Streams follow a first-order autoregressive process across tokens, so that
nearby tokens have similar key and value states, with optional per-channel
scales and injected outlier tokens. Compressed caches are compared with the
full cache through single-query attention outputs.
"""

from __future__ import annotations

import math
from collections.abc import Sequence

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    field_validator,
    model_validator,
)

from .cache.layout import partition_layout
from .cache.model import HeadCache, LayerCache
from .compressor import run_compression
from .config import CompressionMode, CompressorConfig
from .exceptions import EmptyCacheError, ShapeError
from .numerics import Matrix, RealVector, as_vector, softmax

__all__ = [
    "StreamSpec",
    "FidelityReport",
    "NeedleReport",
    "gen_stream",
    "gen_caches",
    "place_outliers",
    "toy_attention",
    "cosine_similarity",
    "evaluated_layers",
    "fidelity_between",
    "fidelity_eval",
    "retained_outlier_fraction",
    "outlier_retention_rate",
    "needle_eval",
]


class StreamSpec(BaseModel):
    """Parameters of a synthetic KV stream."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    seed: int = Field(0, description="Seed of the random generator.")

    n_tokens: int = Field(..., ge=0, description="Tokens in the stream.")

    d_h: int = Field(64, ge=1, description="Channels per head.")

    h_kv: int = Field(2, ge=1, description="Number of KV heads.")

    n_layers: int = Field(1, ge=1, description="Number of layers.")

    rho: float = Field(
        0.9,
        ge=0.0,
        lt=1.0,
        description="Correlation between consecutive tokens.",
    )

    channel_scales: tuple[float, ...] | None = Field(
        None,
        description="Positive per-channel multipliers; all ones if unset.",
    )

    outliers: tuple[tuple[int, float], ...] = Field(
        (),
        description=(
            "Outlier tokens as (position, magnitude); the innovation noise "
            "at each position is multiplied by its magnitude."
        ),
    )

    @field_validator("channel_scales")
    @classmethod
    def check_scales(
        cls, v: tuple[float, ...] | None
    ) -> tuple[float, ...] | None:
        """Ensure that every channel scale is positive."""
        if v is not None and any(s <= 0 for s in v):
            raise ValueError("channel_scales must all be > 0")
        return v

    @model_validator(mode="after")
    def check_scale_count(self) -> StreamSpec:
        """Ensure that there is one channel scale per channel."""
        if (
            self.channel_scales is not None
            and len(self.channel_scales) != self.d_h
        ):
            raise ValueError(
                f"{len(self.channel_scales)} channel scales for "
                f"d_h={self.d_h}"
            )
        return self

    @property
    def scales(self) -> RealVector:
        """The channel scales as a vector of length ``d_h``."""
        if self.channel_scales is None:
            return np.ones(self.d_h)
        return as_vector(self.channel_scales)

    @property
    def outlier_positions(self) -> list[int]:
        """Positions of the injected outliers."""
        return [p for p, _ in self.outliers]


class FidelityReport(BaseModel):
    """Attention-output fidelity of a compressed cache."""

    cosines: list[float] = Field(
        default_factory=list,
        description=(
            "Cosine similarity of full and compressed attention outputs, "
            "one entry per query and evaluated head."
        ),
    )

    deviations: list[float] = Field(
        default_factory=list,
        description="Maximum absolute output deviation, same order.",
    )

    retained_fraction: float = Field(
        1.0, description="Retained tokens over raw tokens."
    )

    @property
    def cosine_mean(self) -> float:
        """Mean cosine similarity."""
        return float(np.mean(self.cosines)) if self.cosines else 1.0

    @property
    def cosine_min(self) -> float:
        """Worst cosine similarity."""
        return float(np.min(self.cosines)) if self.cosines else 1.0

    @property
    def deviation_mean(self) -> float:
        """Mean of the per-query maximum deviations."""
        return float(np.mean(self.deviations)) if self.deviations else 0.0

    @property
    def deviation_max(self) -> float:
        """Largest deviation."""
        return float(np.max(self.deviations)) if self.deviations else 0.0


class NeedleReport(BaseModel):
    """Outcome of planting needle tokens at several depths."""

    depths: list[float] = Field(
        default_factory=list, description="Needle depth fractions."
    )

    hit_rates: list[float] = Field(
        default_factory=list,
        description="Fraction of evaluated heads that retrieved the needle.",
    )

    @property
    def hit_rate(self) -> float:
        """Mean hit rate over depths."""
        return float(np.mean(self.hit_rates)) if self.hit_rates else 0.0


def gen_stream(
    spec: StreamSpec, *, layer: int = 0
) -> list[tuple[Matrix, Matrix]]:
    """Generate the key and value states of one layer.

    Each channel follows ``x[t+1] = rho * x[t] + sqrt(1 - rho**2) * e[t+1]``
    with standard normal innovations ``e``, starting from ``x[0] = e[0]``,
    and is then multiplied by its channel scale.

    Returns
    -------
    list of tuple
        One ``(keys, values)`` pair of ``n_tokens × d_h`` matrices per head.
    """
    rng = np.random.default_rng([spec.seed, layer])
    shape = (spec.n_tokens, spec.h_kv, 2, spec.d_h)
    noise = rng.standard_normal(shape)
    for position, magnitude in spec.outliers:
        if 0 <= position < spec.n_tokens:
            noise[position] *= magnitude

    gain = math.sqrt(1.0 - spec.rho**2)
    states = np.empty(shape)
    if spec.n_tokens:
        states[0] = noise[0]
    for t in range(1, spec.n_tokens):
        states[t] = spec.rho * states[t - 1] + gain * noise[t]
    states *= spec.scales
    return [
        (states[:, h, 0, :].copy(), states[:, h, 1, :].copy())
        for h in range(spec.h_kv)
    ]


def gen_caches(spec: StreamSpec) -> list[LayerCache]:
    """Generate uncompressed caches for every layer of ``spec``."""
    return [
        LayerCache(
            layer_index=layer,
            heads=[
                HeadCache.from_states(keys, values)
                for keys, values in gen_stream(spec, layer=layer)
            ],
        )
        for layer in range(spec.n_layers)
    ]


def place_outliers(
    n_tokens: int,
    config: CompressorConfig,
    count: int,
    magnitude: float,
    seed: int,
) -> tuple[tuple[int, float], ...]:
    """Choose distinct outlier positions inside compressible partitions.

    Returns an empty tuple when the sequence has no compressible partition.
    """
    layout = partition_layout(n_tokens, config.sink_size, config.lag_size)
    candidates = np.array(
        [p for part in layout.partitions for p in part], dtype=np.int64
    )
    if candidates.shape[0] == 0 or count <= 0:
        return ()
    rng = np.random.default_rng([seed, 0x0B7])
    chosen = rng.choice(
        candidates, size=min(count, candidates.shape[0]), replace=False
    )
    return tuple((int(p), magnitude) for p in np.sort(chosen))


def toy_attention(cache: HeadCache, query: RealVector) -> RealVector:
    """Single-query scaled dot-product attention over a head cache.

    Raises
    ------
    EmptyCacheError
        Raised if the cache has no rows.
    ShapeError
        Raised if the query length differs from ``d_h``.
    """
    query = as_vector(query)
    if cache.seq_len == 0:
        raise EmptyCacheError("Attention over an empty cache")
    if query.shape[0] != cache.d_h:
        raise ShapeError(
            f"Query of length {query.shape[0]} for d_h={cache.d_h}"
        )
    weights = softmax(cache.keys @ query / math.sqrt(cache.d_h))
    return weights @ cache.values


def cosine_similarity(a: RealVector, b: RealVector) -> float:
    """Cosine similarity, exactly 1 for identical vectors."""
    if np.array_equal(a, b):
        return 1.0
    denom = float(np.linalg.norm(a) * np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(np.clip(np.dot(a, b) / denom, -1.0, 1.0))


def evaluated_layers(
    caches: Sequence[LayerCache], config: CompressorConfig
) -> list[int]:
    """Indices into ``caches`` of layers subject to compression, or of all
    layers when every layer is skipped.
    """
    active = [
        i
        for i, layer in enumerate(caches)
        if not config.is_skipped(layer.layer_index)
    ]
    return active or list(range(len(caches)))


def fidelity_between(
    full: Sequence[LayerCache],
    compressed: Sequence[LayerCache],
    config: CompressorConfig,
    n_queries: int,
    seed: int,
) -> FidelityReport:
    """Compare attention outputs of full and compressed caches under
    seeded random queries.
    """
    layers = evaluated_layers(full, config)
    raw = sum(full[i].seq_len for i in layers)
    kept = sum(compressed[i].seq_len for i in layers)
    report = FidelityReport(retained_fraction=kept / raw if raw else 1.0)
    if not layers or full[layers[0]].d_h == 0:
        return report
    rng = np.random.default_rng([seed, 0xF1D])
    queries = rng.standard_normal((n_queries, full[layers[0]].d_h))
    for query in queries:
        for i in layers:
            for head_full, head_comp in zip(
                full[i].heads, compressed[i].heads, strict=True
            ):
                if head_full.seq_len == 0:
                    continue
                out_full = toy_attention(head_full, query)
                out_comp = toy_attention(head_comp, query)
                report.cosines.append(cosine_similarity(out_full, out_comp))
                report.deviations.append(
                    float(np.max(np.abs(out_full - out_comp)))
                )
    return report


def fidelity_eval(
    spec: StreamSpec,
    config: CompressorConfig,
    n_queries: int,
    mode: CompressionMode = CompressionMode.oneshot,
) -> FidelityReport:
    """Compress a generated stream and measure attention fidelity."""
    caches = gen_caches(spec)
    compressed, _ = run_compression(caches, config, mode)
    return fidelity_between(caches, compressed, config, n_queries, spec.seed)


def retained_outlier_fraction(
    compressed: Sequence[LayerCache],
    spec: StreamSpec,
    config: CompressorConfig,
) -> float:
    """Fraction of (outlier, evaluated head) pairs whose outlier position
    survived compression.
    """
    positions = np.array(spec.outlier_positions, dtype=np.int64)
    if positions.shape[0] == 0:
        raise ValueError("The stream has no injected outliers")
    found = 0
    total = 0
    for i in evaluated_layers(compressed, config):
        for head in compressed[i].heads:
            found += int(np.isin(positions, head.positions).sum())
            total += positions.shape[0]
    return found / total if total else 0.0


def outlier_retention_rate(
    spec: StreamSpec,
    config: CompressorConfig,
    mode: CompressionMode = CompressionMode.oneshot,
) -> float:
    """Compress a generated stream and report the fraction of injected
    outlier positions still present in the kept sets.

    Raises
    ------
    ValueError
        Raised if ``spec`` has no outliers.
    """
    compressed, _ = run_compression(gen_caches(spec), config, mode)
    return retained_outlier_fraction(compressed, spec, config)


def needle_eval(
    spec: StreamSpec,
    config: CompressorConfig,
    depths: Sequence[float],
    *,
    magnitude: float = 10.0,
    threshold: float = 0.9,
) -> NeedleReport:
    """Plant a needle token at each depth and check whether a query aligned
    with its key still retrieves its value after compression.

    For each depth fraction, the token at ``depth * (n_tokens - 1)`` gets a
    key ``magnitude * sqrt(d_h) * u`` and a value ``magnitude * w`` for
    random unit-norm ``u`` and standard normal ``w``, in every head. The
    query is ``u``. A head scores a hit when the cosine similarity
    of its compressed-cache attention output with the needle value is at
    least ``threshold``.
    """
    report = NeedleReport()
    if spec.n_tokens == 0:
        return report
    rng = np.random.default_rng([spec.seed, 0x9EED])
    base = gen_caches(spec)
    for depth in depths:
        position = round(min(max(depth, 0.0), 1.0) * (spec.n_tokens - 1))
        caches = [layer.copy() for layer in base]
        needles: list[list[tuple[RealVector, RealVector]]] = []
        for layer in caches:
            layer_needles = []
            for head in layer.heads:
                u = rng.standard_normal(spec.d_h)
                u /= np.linalg.norm(u)
                w = magnitude * rng.standard_normal(spec.d_h)
                head.keys[position] = magnitude * math.sqrt(spec.d_h) * u
                head.values[position] = w
                layer_needles.append((u, w))
            needles.append(layer_needles)
        compressed, _ = run_compression(caches, config)
        hits = 0
        trials = 0
        for i in evaluated_layers(compressed, config):
            for head, (u, w) in zip(
                compressed[i].heads, needles[i], strict=True
            ):
                output = toy_attention(head, u)
                hits += cosine_similarity(output, w) >= threshold
                trials += 1
        report.depths.append(float(depth))
        report.hit_rates.append(hits / trials if trials else 0.0)
    return report
