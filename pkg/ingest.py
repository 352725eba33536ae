"""
Loading series from CSV files and from a graphite server.
"""
import csv
import json
import logging
import math
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np
import requests

from config import GraphiteConfig, SourceKind, TestConfig
from errors import ConfigError, FormatError, SourceError
from models import TimeSeries

logger = logging.getLogger(__name__)

GRAPHITE_ATTEMPTS = 3
GRAPHITE_BACKOFF_SECONDS = 1.0
GRAPHITE_TIMEOUT_SECONDS = 30
GRAPHITE_DEFAULT_FROM = "-30days"


# === CSV === #

def _parse_float(raw: Optional[str]) -> Optional[float]:
    if raw is None or not raw.strip():
        return None
    try:
        value = float(raw)
    except ValueError:
        return None
    return value if math.isfinite(value) else None


def _parse_iso(raw: str) -> int:
    moment = datetime.fromisoformat(raw.strip())
    if moment.tzinfo is None:
        moment = moment.replace(tzinfo=timezone.utc)
    return math.floor(moment.timestamp())


def parse_times(raw_times: list[str]) -> list[int]:
    """
    Epoch seconds when every value is numeric, ISO-8601 otherwise.
    Naive ISO timestamps are taken as UTC; a mix of both is an error.
    """
    numeric = [_parse_float(v) for v in raw_times]
    if all(v is not None for v in numeric):
        return [math.floor(v) for v in numeric]
    if any(v is not None for v in numeric):
        raise FormatError("time column mixes epoch seconds and other values")
    try:
        return [_parse_iso(v) for v in raw_times]
    except ValueError as e:
        raise FormatError(f"time column is neither epoch seconds nor ISO-8601: {e}") from e


def infer_metric_columns(rows: list[dict], header: list[str], time_column: str) -> list[str]:
    """Columns other than the time column whose non-empty values are mostly numbers."""
    metrics = []
    for name in header:
        if name == time_column:
            continue
        values = [row.get(name) for row in rows if (row.get(name) or "").strip()]
        numbers = sum(_parse_float(v) is not None for v in values)
        if values and numbers * 2 > len(values):
            metrics.append(name)
    return metrics


def parse_csv(path, time_column: str = "time", delimiter: str = ",",
              metric_names: Optional[list[str]] = None,
              attribute_names: Optional[list[str]] = None,
              test_name: Optional[str] = None) -> TimeSeries:
    """
    Read a series from a CSV file with a header row.

    Rows with a missing or unparsable metric value are dropped and counted.
    Rows are sorted by time; of several rows with one timestamp the last
    one in the file is kept. Columns that are neither time nor metrics become
    attributes unless attribute_names says otherwise.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f, delimiter=delimiter)
        header = list(reader.fieldnames or [])
        rows = list(reader)
    if not header:
        raise FormatError(f"{path}: missing header row")

    if metric_names is None:
        metric_names = infer_metric_columns(rows, header, time_column)
    missing = [c for c in [time_column, *metric_names] if c not in header]
    if missing:
        raise FormatError(f"{path}: missing columns: {', '.join(missing)}")
    if not metric_names:
        raise FormatError(f"{path}: no metric columns")
    if attribute_names is None:
        attribute_names = [c for c in header if c != time_column and c not in metric_names]
    attribute_names = [c for c in attribute_names if c in header]

    # 1. Drop rows without a time or with a bad metric value
    usable = []
    for row in rows:
        raw_time = (row.get(time_column) or "").strip()
        values = [_parse_float(row.get(m)) for m in metric_names]
        if raw_time and all(v is not None for v in values):
            usable.append((raw_time, values, [row.get(a) or "" for a in attribute_names]))
    dropped = len(rows) - len(usable)
    if dropped:
        logger.warning(json.dumps({"event": "csv_rows_dropped", "path": str(path), "count": dropped}))
    if not usable:
        raise FormatError(f"{path}: no usable rows")

    # 2. Sort by time, keeping the last row per timestamp
    times = parse_times([t for t, _, _ in usable])
    by_time = {}
    for t, (_, values, attrs) in zip(times, usable):
        by_time[t] = (values, attrs)
    duplicates = len(usable) - len(by_time)
    if duplicates:
        logger.warning(json.dumps({"event": "csv_duplicate_timestamps", "path": str(path), "count": duplicates}))
    ordered = sorted(by_time.items())

    return TimeSeries(
        test_name=test_name or path.stem,
        timestamps=np.array([t for t, _ in ordered], dtype=np.int64),
        metrics={m: [values[i] for _, (values, _) in ordered] for i, m in enumerate(metric_names)},
        attributes={a: [attrs[i] for _, (_, attrs) in ordered] for i, a in enumerate(attribute_names)},
    )


def write_csv(series: TimeSeries, path, time_column: str = "time", delimiter: str = ","):
    """Write a series in the layout parse_csv reads back."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, delimiter=delimiter)
        writer.writerow([time_column, *series.metrics, *series.attributes])
        for i, t in enumerate(series.timestamps):
            writer.writerow([
                int(t),
                *[repr(float(values[i])) for values in series.metrics.values()],
                *[values[i] for values in series.attributes.values()],
            ])


# === GRAPHITE === #

def decode_datapoints(entry: dict) -> list[tuple[int, float]]:
    """[[value, timestamp], ...] of one render target, nulls dropped."""
    return [
        (int(ts), float(value))
        for value, ts in entry.get("datapoints", [])
        if value is not None and ts is not None
    ]


class GraphiteClient:
    """Reads series through the graphite render API."""

    def __init__(self, cfg: GraphiteConfig, session: Optional[requests.Session] = None,
                 attempts: int = GRAPHITE_ATTEMPTS, backoff: float = GRAPHITE_BACKOFF_SECONDS):
        if not cfg.url:
            raise ConfigError("graphite url is not configured (set graphite.url or GRAPHITE_URL)")
        self.cfg = cfg
        self.session = session or requests.Session()
        self.attempts = attempts
        self.backoff = backoff

    def targets(self, test: TestConfig) -> list[tuple[str, str]]:
        """(metric, target path) pairs, one per tag, suffix and metric."""
        suffixes = test.suffixes if test.suffixes is not None else self.cfg.suffixes
        result = []
        for tag in test.tags or [None]:
            for suffix in suffixes or [None]:
                for metric in test.metrics:
                    parts = [test.prefix, tag, suffix, metric]
                    result.append((metric, ".".join(p for p in parts if p)))
        return result

    def render(self, target: str, from_: str, until: str) -> list[tuple[int, float]]:
        params = {"target": target, "format": "json", "from": from_, "until": until}
        for attempt in range(self.attempts):
            try:
                response = self.session.get(f"{self.cfg.url}/render", params=params,
                                            timeout=GRAPHITE_TIMEOUT_SECONDS)
                response.raise_for_status()
                points = []
                for entry in response.json():
                    points.extend(decode_datapoints(entry))
                return points
            except (requests.RequestException, ValueError) as e:
                logger.warning(json.dumps({
                    "event": "graphite_fetch_retry",
                    "target": target,
                    "attempt": attempt + 1,
                    "error": str(e),
                }))
                if attempt + 1 < self.attempts:
                    time.sleep(self.backoff * 2 ** attempt)
        raise SourceError(f"graphite request for {target} failed after {self.attempts} attempts")

    def fetch(self, test: TestConfig, from_: str = GRAPHITE_DEFAULT_FROM, until: str = "now") -> TimeSeries:
        # 1. One request per target, merged per metric (later targets win)
        merged: dict[str, dict[int, float]] = {metric: {} for metric in test.metrics}
        for metric, target in self.targets(test):
            merged[metric].update(self.render(target, from_, until))

        # 2. Align the metrics on their common timestamps
        common = set.intersection(*(set(points) for points in merged.values()))
        timestamps = sorted(common)
        if not timestamps:
            logger.warning(json.dumps({"event": "graphite_empty_series", "test": test.name}))
        return TimeSeries(
            test_name=test.name,
            timestamps=np.array(timestamps, dtype=np.int64),
            metrics={metric: [points[t] for t in timestamps] for metric, points in merged.items()},
        )


def fetch_graphite(cfg: GraphiteConfig, test: TestConfig, from_: str = GRAPHITE_DEFAULT_FROM,
                   until: str = "now") -> TimeSeries:
    return GraphiteClient(cfg).fetch(test, from_, until)


def load_test_series(test: TestConfig, graphite: Optional[GraphiteConfig] = None,
                     from_: str = GRAPHITE_DEFAULT_FROM) -> TimeSeries:
    """Series of a configured test from its source."""
    if test.source == SourceKind.CSV:
        return parse_csv(test.path, test.time_column, test.delimiter,
                         metric_names=list(test.metrics), attribute_names=test.attributes,
                         test_name=test.name)
    if graphite is None:
        raise ConfigError(f"test '{test.name}' reads from graphite but no graphite section is configured")
    return fetch_graphite(graphite, test, from_)
