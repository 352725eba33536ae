"""
Validated settings for detection and reporting.
"""
import logging
from enum import Enum
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from errors import ConfigError

logger = logging.getLogger(__name__)

MAX_WINDOW_LEN = 2000


class DetectorConfig(BaseModel):
    """
    Knobs of the windowed E-divisive detector.
    Fields:
        - window_len: Points per analysis window (at most MAX_WINDOW_LEN; q-hat keeps a
          window_len x window_len distance matrix)
        - overlap: Points shared by consecutive windows (default window_len // 2)
        - max_pvalue: Significance a reported change point must reach
        - weak_pvalue: Relaxed threshold used while splitting (default min(1, 10 * max_pvalue))
        - min_magnitude: Minimum |relative change| of a reported change point
        - min_segment: Minimum points on each side of a split
    """

    model_config = ConfigDict(frozen=True)

    window_len: int = Field(default=50, le=MAX_WINDOW_LEN)
    overlap: Optional[int] = None
    max_pvalue: float = Field(default=0.05, gt=0, lt=1)
    weak_pvalue: Optional[float] = None
    min_magnitude: float = Field(default=0.05, ge=0)
    min_segment: int = Field(default=2, ge=2)

    @model_validator(mode="after")
    def fill_defaults(self):
        if self.overlap is None:
            object.__setattr__(self, "overlap", self.window_len // 2)
        if self.weak_pvalue is None:
            object.__setattr__(self, "weak_pvalue", min(1.0, 10 * self.max_pvalue))

        if self.window_len < 2 * self.min_segment:
            raise ValueError(f"window_len must be at least 2 * min_segment ({2 * self.min_segment})")
        if not self.min_segment <= self.overlap <= self.window_len // 2:
            raise ValueError(f"overlap must be in [{self.min_segment}, {self.window_len // 2}]")
        # equal thresholds mean no weak change points
        if not self.max_pvalue <= self.weak_pvalue <= 1:
            raise ValueError("weak_pvalue must be in [max_pvalue, 1]")
        return self

    @classmethod
    def strict(cls, **kwargs) -> "DetectorConfig":
        """Plain t-test splitting: the split threshold equals max_pvalue."""
        max_pvalue = kwargs.get("max_pvalue", cls.model_fields["max_pvalue"].default)
        return cls(**{**kwargs, "weak_pvalue": max_pvalue})


class OutputFormat(str, Enum):
    TEXT = "text"
    CSV = "csv"
    JSON = "json"


class ReportOptions(BaseModel):
    """
    Rendering options.
    Fields:
        - since_days: Only report change points within this many days of the
          newest data point (None = everything; the webhook uses 7)
        - output_format: text, csv or json
    """

    model_config = ConfigDict(frozen=True)

    since_days: Optional[int] = None
    output_format: OutputFormat = OutputFormat.TEXT

    @field_validator("since_days")
    @classmethod
    def validate_since_days(cls, v):
        if v is not None and v <= 0:
            raise ValueError("since_days must be positive")
        return v


WEBHOOK_SINCE_DAYS = 7


def build_detector_config(**settings) -> DetectorConfig:
    """Validate detector settings, dropping unset (None) ones."""
    provided = {k: v for k, v in settings.items() if v is not None}
    try:
        cfg = DetectorConfig(**provided)
        logger.debug(f"Detector config: {cfg.model_dump()}")
        return cfg
    except ValidationError as e:
        logger.warning(f"Invalid detector settings: {e}")
        raise ConfigError(f"Invalid detector settings: {e}") from e


def build_report_options(since_days: Optional[int] = None, output_format: str = "text") -> ReportOptions:
    try:
        return ReportOptions(since_days=since_days, output_format=output_format)
    except ValidationError as e:
        logger.warning(f"Invalid report options: {e}")
        raise ConfigError(f"Invalid report options: {e}") from e
