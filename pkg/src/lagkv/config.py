"""Compressor configuration model."""

from __future__ import annotations

from enum import Enum
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .cache.layout import kept_per_partition

__all__ = [
    "Strategy",
    "CompressionMode",
    "CompressorConfig",
    "L2NORM_SKIP_LAYERS",
]


L2NORM_SKIP_LAYERS = frozenset({0, 1})
"""Layers left uncompressed by default with the ``l2norm`` strategy."""


class Strategy(str, Enum):
    """Token-importance scoring strategies."""

    lag = "lag"
    """Min-max normalise each partition against the following partition,
    then score tokens by the softmax of their channel spread.
    """

    local = "local"
    """Like `lag`, but the min-max statistics come from the partition
    itself.
    """

    l2norm = "l2norm"
    """Score tokens by the negative Euclidean norm of their key row."""

    window_only = "window-only"
    """Keep the most recent tokens of each partition (a sliding-window
    baseline).
    """


class CompressionMode(str, Enum):
    """How a cache is driven through the compressor."""

    oneshot = "oneshot"
    """Compress the whole prompt cache once, after prefill."""

    incremental = "incremental"
    """Replay the cache token by token through the decode-time trigger."""


class CompressorConfig(BaseModel):
    """Parameters of the recursive partition compressor."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    sink_size: int = Field(
        16, ge=0, description="Number of leading tokens always retained (S)."
    )

    lag_size: int = Field(
        1024, ge=1, description="Partition width in tokens (L)."
    )

    retain_ratio: float = Field(
        0.25,
        gt=0.0,
        le=1.0,
        description="Fraction of each compressible partition kept (r).",
    )

    strategy: Strategy = Field(
        Strategy.lag, description="The token scoring strategy."
    )

    eps: float = Field(
        1e-6,
        gt=0.0,
        description="Lower bound on min-max denominators.",
    )

    skip_layers: frozenset[int] = Field(
        default_factory=frozenset,
        description=(
            "Layer indices exempt from compression. Defaults to layers 0 "
            "and 1 for the l2norm strategy, and to no layers otherwise."
        ),
    )

    @model_validator(mode="before")
    @classmethod
    def default_skip_layers(cls, data: Any) -> Any:
        """Fill in the strategy-dependent default for ``skip_layers``."""
        if isinstance(data, dict) and data.get("skip_layers") is None:
            data = {k: v for k, v in data.items() if k != "skip_layers"}
            strategy = data.get("strategy", Strategy.lag)
            if Strategy(strategy) is Strategy.l2norm:
                data["skip_layers"] = L2NORM_SKIP_LAYERS
        return data

    @property
    def kept_per_partition(self) -> int:
        """Tokens kept per head in each compressed partition, ⌊r·L⌋."""
        return kept_per_partition(self.lag_size, self.retain_ratio)

    def is_skipped(self, layer_index: int) -> bool:
        """Whether a layer is exempt from compression."""
        return layer_index in self.skip_layers
