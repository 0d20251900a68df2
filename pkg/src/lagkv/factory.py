"""The factory creates classes based on configuration."""

from __future__ import annotations

__all__ = ["Factory", "SEED_ENV_VAR", "parse_override"]

import logging
import os
import tomllib
from collections.abc import Mapping, Sequence
from pathlib import Path
from typing import Any

from pydantic import ValidationError

from .config import CompressorConfig, Strategy
from .exceptions import ConfigError
from .sim import StreamSpec, place_outliers
from .sources.runconfig import RunConfig

SEED_ENV_VAR = "LAGKV_SEED"
"""Environment variable overriding the seed list (comma-separated)."""

logger = logging.getLogger(__name__)


def parse_override(item: str) -> tuple[str, Any]:
    """Parse a ``key=value`` override.

    The value is read as a TOML value; anything that is not valid TOML,
    such as a bare word, is taken as a string.
    """
    key, sep, raw = item.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ConfigError(f"Override {item!r} is not of the form key=value")
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return key, value


class Factory:
    """A factory for creating classes based on configuration."""

    def __init__(self, environ: Mapping[str, str] | None = None) -> None:
        self._environ = os.environ if environ is None else environ
        self._run_config: RunConfig | None = None  # cached run config

    @property
    def run_config(self) -> RunConfig:
        """The run configuration loaded last, or the defaults."""
        if self._run_config is None:
            self._run_config = self.load_run_config()
        return self._run_config

    def load_run_config(
        self, path: Path | None = None, overrides: Sequence[str] = ()
    ) -> RunConfig:
        """Load the run configuration from a file, command-line overrides
        and the environment, in increasing order of precedence.

        Raises
        ------
        OSError
            Raised if the configuration file cannot be read.
        ConfigError
            Raised if the configuration is malformed or invalid.
        """
        data: dict[str, Any] = {}
        if path is not None:
            try:
                data.update(tomllib.loads(Path(path).read_text()))
            except tomllib.TOMLDecodeError as e:
                raise ConfigError(f"Syntax issue in {path}: {e}") from e
        for item in overrides:
            key, value = parse_override(item)
            data[key] = value
        seeds = self._environ.get(SEED_ENV_VAR)
        if seeds:
            try:
                data["seeds"] = [int(s) for s in seeds.split(",")]
            except ValueError as e:
                raise ConfigError(
                    f"{SEED_ENV_VAR} must be comma-separated integers, "
                    f"got {seeds!r}"
                ) from e
        return self.validate(data)

    def validate(self, data: Mapping[str, Any]) -> RunConfig:
        """Validate a run configuration mapping."""
        try:
            run_config = RunConfig.model_validate(dict(data))
        except ValidationError as e:
            message = f"Validation issue in the run configuration:\n{e}"
            raise ConfigError(message) from e
        self._run_config = run_config
        return run_config

    def create_compressor_config(
        self,
        *,
        lag_size: int | None = None,
        retain_ratio: float | None = None,
        strategy: Strategy | None = None,
    ) -> CompressorConfig:
        """Create the compressor configuration.

        Sweep axes must be pinned by the keyword arguments; otherwise the
        run configuration must hold single values.

        Raises
        ------
        ConfigError
            Raised if a parameter is a list and is not pinned.
        """
        run = self.run_config
        values = {
            "lag_size": run.lag_size if lag_size is None else lag_size,
            "retain_ratio": (
                run.retain_ratio if retain_ratio is None else retain_ratio
            ),
            "strategy": run.strategy if strategy is None else strategy,
        }
        for key, value in values.items():
            if isinstance(value, list):
                raise ConfigError(
                    f"{key} is a list; use the sweep command to run a grid"
                )
        try:
            return CompressorConfig(
                sink_size=run.sink_size,
                eps=run.eps,
                skip_layers=(
                    frozenset(run.skip_layers)
                    if run.skip_layers is not None
                    else None
                ),
                **values,
            )
        except ValidationError as e:
            raise ConfigError(f"Invalid compressor parameters:\n{e}") from e

    def create_stream_spec(
        self, config: CompressorConfig, seed: int
    ) -> StreamSpec:
        """Create the synthetic stream for one seed, with outliers placed
        inside the compressible partitions of ``config``.
        """
        run = self.run_config
        outliers = place_outliers(
            run.n_tokens,
            config,
            run.n_outliers,
            run.outlier_magnitude,
            seed,
        )
        try:
            return StreamSpec(
                seed=seed,
                n_tokens=run.n_tokens,
                d_h=run.d_h,
                h_kv=run.h_kv,
                n_layers=run.n_layers,
                rho=run.rho,
                channel_scales=(
                    tuple(run.channel_scales)
                    if run.channel_scales is not None
                    else None
                ),
                outliers=outliers,
            )
        except ValidationError as e:
            raise ConfigError(f"Invalid stream parameters:\n{e}") from e
