"""Model for the ``lagkv.toml`` run configuration file."""

# Design note
#
# The run configuration is a flat table. Compressor parameters may be given
# as single values or as lists; lists span the axes of a parameter sweep.
# Per-value constraints are checked here so that a bad grid fails before
# any combination runs.

from __future__ import annotations

import tomllib
from pathlib import Path
from typing import Annotated, Any

from pydantic import BaseModel, ConfigDict, Field, field_validator

from ..config import CompressionMode, Strategy

__all__ = ["RunConfig", "LagSize", "RetainRatio"]

LagSize = Annotated[int, Field(ge=1)]
"""A partition width."""

RetainRatio = Annotated[float, Field(gt=0.0, le=1.0)]
"""A retention ratio."""

Fraction = Annotated[float, Field(ge=0.0, le=1.0)]


class RunConfig(BaseModel):
    """A model of a ``lagkv.toml`` run configuration."""

    model_config = ConfigDict(extra="forbid")

    sink_size: int = Field(
        16, ge=0, description="Leading tokens always retained."
    )

    lag_size: LagSize | list[LagSize] = Field(
        1024, description="Partition width, or a list of widths to sweep."
    )

    retain_ratio: RetainRatio | list[RetainRatio] = Field(
        0.25, description="Retention ratio, or a list of ratios to sweep."
    )

    strategy: Strategy | list[Strategy] = Field(
        Strategy.lag, description="Scoring strategy, or a list to sweep."
    )

    eps: float = Field(1e-6, gt=0.0, description="Min-max denominator floor.")

    skip_layers: list[int] | None = Field(
        None,
        description=(
            "Layers exempt from compression; strategy-dependent default."
        ),
    )

    mode: CompressionMode = Field(
        CompressionMode.oneshot, description="Compression driver mode."
    )

    input: Path | None = Field(None, description="Input KVD file.")

    output: Path | None = Field(None, description="Output file.")

    seeds: list[int] = Field(
        default_factory=lambda: [0], description="Stream seeds to sweep."
    )

    n_tokens: int = Field(8192, ge=0, description="Generated stream length.")

    d_h: int = Field(64, ge=1, description="Generated head dimension.")

    h_kv: int = Field(2, ge=1, description="Generated KV heads per layer.")

    n_layers: int = Field(3, ge=1, description="Generated layers.")

    rho: float = Field(
        0.9, ge=0.0, lt=1.0, description="Token-to-token correlation."
    )

    channel_scales: list[float] | None = Field(
        None, description="Per-channel multipliers of generated streams."
    )

    n_queries: int = Field(
        16, ge=1, description="Random queries per fidelity evaluation."
    )

    n_outliers: int = Field(16, ge=0, description="Injected outlier tokens.")

    outlier_magnitude: float = Field(
        10.0, gt=0.0, description="Innovation multiplier of outliers."
    )

    needle_depths: list[Fraction] = Field(
        default_factory=lambda: [0.1, 0.3, 0.5, 0.7, 0.9],
        description="Depth fractions of planted needles; empty disables them.",
    )

    jobs: int = Field(1, ge=1, description="Worker threads.")

    @field_validator("seeds", mode="before")
    @classmethod
    def listify_seed(cls, v: Any) -> Any:
        """Accept a single integer seed."""
        if isinstance(v, int):
            return [v]
        return v

    @field_validator("lag_size", "retain_ratio", "strategy", "seeds")
    @classmethod
    def check_nonempty(cls, v: Any) -> Any:
        """Reject empty sweep axes."""
        if isinstance(v, list) and not v:
            raise ValueError("must not be an empty list")
        return v

    @property
    def lag_sizes(self) -> list[int]:
        """The partition widths as a list."""
        return _as_list(self.lag_size)

    @property
    def retain_ratios(self) -> list[float]:
        """The retention ratios as a list."""
        return _as_list(self.retain_ratio)

    @property
    def strategies(self) -> list[Strategy]:
        """The strategies as a list."""
        return _as_list(self.strategy)

    @property
    def is_sweep(self) -> bool:
        """Whether any compressor parameter is given as a list."""
        return any(
            isinstance(v, list)
            for v in (self.lag_size, self.retain_ratio, self.strategy)
        )

    @classmethod
    def parse_toml(cls, content: str) -> RunConfig:
        """Parse the content of a ``lagkv.toml`` file.

        Parameters
        ----------
        content
            The string content of a ``lagkv.toml`` file.

        Returns
        -------
        RunConfig
            The parsed `RunConfig`.
        """
        return cls.model_validate(tomllib.loads(content))


def _as_list(v: Any) -> list[Any]:
    return list(v) if isinstance(v, list) else [v]
