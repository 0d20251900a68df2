"""Metrics reported by compression runs."""

from __future__ import annotations

from pydantic import BaseModel, Field

__all__ = ["LayerMetrics", "MetricsReport"]


class LayerMetrics(BaseModel):
    """Outcome of compressing one layer."""

    layer: int = Field(description="Layer index.")

    raw_length: int = Field(description="Tokens before compression.")

    retained_length: int = Field(description="Tokens after compression.")

    achieved_ratio: float = Field(
        description="1 - retained_length / raw_length (0 when empty)."
    )

    events: int = Field(description="Number of compressed partitions.")

    strategy: str = Field(description="Scoring strategy name.")

    skipped: bool = Field(
        False, description="Whether the layer is exempt from compression."
    )

    score_min: float | None = Field(
        None, description="Smallest token score seen in any event."
    )

    score_max: float | None = Field(
        None, description="Largest token score seen in any event."
    )

    score_mean: float | None = Field(
        None, description="Mean token score over all events."
    )

    kept_positions: list[list[int]] = Field(
        default_factory=list,
        exclude=True,
        description="Retained original positions, per head.",
    )


class MetricsReport(BaseModel):
    """Per-layer metrics of one compression run."""

    layers: list[LayerMetrics] = Field(default_factory=list)

    def __len__(self) -> int:
        return len(self.layers)

    @property
    def kept_positions(self) -> list[list[list[int]]]:
        """Retained original positions, per layer and head."""
        return [m.kept_positions for m in self.layers]

    def to_jsonl(self) -> str:
        """Serialise the report as one JSON record per line per layer."""
        return "".join(m.model_dump_json() + "\n" for m in self.layers)
