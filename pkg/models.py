from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from errors import RangeError


class MetricDef(BaseModel):
    """
    Definition of one metric of a performance test.
    Fields:
        - name: Metric identifier (CSV column or graphite leaf)
        - scale: Display multiplier, e.g. 1.0e-6 to show ns as ms
        - direction: 1 = higher is better, -1 = lower is better, 0 = unknown
    """

    model_config = ConfigDict(frozen=True)

    name: str = Field(..., min_length=1)
    scale: float = Field(default=1.0, gt=0)
    direction: int = 0

    @field_validator("direction")
    @classmethod
    def validate_direction(cls, v):
        if v not in (-1, 0, 1):
            raise ValueError("direction must be one of -1, 0, 1")
        return v


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """
    Results of one performance test.
    Fields:
        - test_name: Name of the test the series belongs to
        - timestamps: Epoch seconds, int64
        - metrics: Metric name -> float64 values, one per timestamp
        - attributes: Attribute name -> strings (e.g. commit ids), one per timestamp

    Arrays are made read-only on construction. Construction never checks the
    invariants, use validate() for that.
    """

    test_name: str
    timestamps: np.ndarray
    metrics: dict[str, np.ndarray]
    attributes: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        timestamps = np.floor(np.asarray(self.timestamps, dtype=np.float64)).astype(np.int64)
        timestamps.flags.writeable = False
        object.__setattr__(self, "timestamps", timestamps)

        metrics = {}
        for name, values in self.metrics.items():
            arr = np.array(values, dtype=np.float64)
            arr.flags.writeable = False
            metrics[name] = arr
        object.__setattr__(self, "metrics", metrics)

        attributes = {name: tuple(str(v) for v in values) for name, values in self.attributes.items()}
        object.__setattr__(self, "attributes", attributes)

    def __len__(self) -> int:
        return len(self.timestamps)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TimeSeries):
            return NotImplemented
        return (
            self.test_name == other.test_name
            and np.array_equal(self.timestamps, other.timestamps)
            and self.metrics.keys() == other.metrics.keys()
            and all(np.array_equal(v, other.metrics[k]) for k, v in self.metrics.items())
            and self.attributes == other.attributes
        )

    __hash__ = None

    @property
    def metric_names(self) -> list[str]:
        return list(self.metrics)


class Violation(BaseModel):
    """One broken TimeSeries invariant."""

    kind: str  # 'non_monotonic', 'length_mismatch', 'non_finite'
    name: Optional[str] = None
    index: Optional[int] = None
    message: str


def validate(series: TimeSeries) -> list[Violation]:
    """Return every broken TimeSeries invariant. Never raises."""
    violations = []
    n = len(series.timestamps)

    # 1. Strictly increasing timestamps
    if n > 1:
        bad = np.nonzero(np.diff(series.timestamps) <= 0)[0]
        for i in bad:
            violations.append(Violation(
                kind="non_monotonic",
                name="timestamps",
                index=int(i) + 1,
                message=f"timestamp at index {i + 1} is not greater than its predecessor",
            ))

    # 2. Metric arrays
    for name, values in series.metrics.items():
        if len(values) != n:
            violations.append(Violation(
                kind="length_mismatch",
                name=name,
                message=f"metric '{name}' has {len(values)} values for {n} timestamps",
            ))
        for i in np.nonzero(~np.isfinite(values))[0]:
            violations.append(Violation(
                kind="non_finite",
                name=name,
                index=int(i),
                message=f"metric '{name}' has a non-finite value at index {i}",
            ))

    # 3. Attribute arrays
    for name, values in series.attributes.items():
        if len(values) != n:
            violations.append(Violation(
                kind="length_mismatch",
                name=name,
                message=f"attribute '{name}' has {len(values)} values for {n} timestamps",
            ))

    return violations


def slice_series(series: TimeSeries, start: int, stop: int) -> TimeSeries:
    """Half-open sub-series [start, stop), rebased to index 0."""
    if not 0 <= start <= stop <= len(series):
        raise RangeError(f"invalid slice [{start}, {stop}) of a series of length {len(series)}")
    return TimeSeries(
        test_name=series.test_name,
        timestamps=series.timestamps[start:stop],
        metrics={name: values[start:stop] for name, values in series.metrics.items()},
        attributes={name: values[start:stop] for name, values in series.attributes.items()},
    )


class Effect(str, Enum):
    IMPROVEMENT = "improvement"
    REGRESSION = "regression"
    UNKNOWN = "unknown"


def classify_effect(relative_change: float, direction: int) -> Effect:
    """Improvement or regression given the metric direction."""
    if direction == 0:
        return Effect.UNKNOWN
    if np.sign(relative_change) * direction < 0:
        return Effect.REGRESSION
    return Effect.IMPROVEMENT


class ChangePoint(BaseModel):
    """
    A located shift in one metric.
    Fields:
        - metric: Metric name
        - index: First point of the new regime
        - time: Epoch seconds at index
        - mean_before, mean_after, stddev_before, stddev_after: Segment statistics
        - p_value: Corrected split p-value against the neighbouring segments (stats.split_pvalue)
        - relative_change: (mean_after - mean_before) / |mean_before|
        - direction_effect: improvement / regression / unknown
    """

    model_config = ConfigDict(frozen=True)

    metric: str
    index: int = Field(..., ge=0)
    time: int
    mean_before: float
    mean_after: float
    stddev_before: float = Field(..., ge=0)
    stddev_after: float = Field(..., ge=0)
    p_value: float = Field(..., ge=0, le=1)
    relative_change: float
    direction_effect: Effect


class ChangePointGroup(BaseModel):
    """Change points of several metrics sharing one index."""

    time: int
    index: int
    changes: list[ChangePoint]
