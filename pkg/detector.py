"""
Windowed E-divisive change point detection with weak change points.

Pipeline per metric:
    1. cut the series into end-anchored, overlapping windows
    2. split every window recursively while the split p-value passes weak_pvalue
    3. merge the candidates of all windows (exact duplicates collapse)
    4. prune bottom-up against the whole series until all pass max_pvalue
    5. drop changes smaller than min_magnitude
    6. describe the survivors as ChangePoints

Split p-values come from stats.split_pvalue: pooled t-test on the means, a
spread test once both sides are long enough, times the number of positions
the split was chosen from.
"""
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Optional

import numpy as np

from errors import ConfigError, SizeError
from models import ChangePoint, ChangePointGroup, MetricDef, TimeSeries, classify_effect
from stats import max_qhat_candidate, split_pvalue
from validation import DetectorConfig

logger = logging.getLogger(__name__)


def split_windows(n: int, window_len: int, overlap: int) -> list[tuple[int, int]]:
    """
    Half-open windows covering [0, n), anchored at the end of the series.
    The first window is clipped at 0; consecutive windows share `overlap` points.
    """
    if n < 0 or not window_len > overlap >= 0:
        raise ConfigError(f"invalid window geometry: n={n}, window_len={window_len}, overlap={overlap}")
    if n == 0:
        return []
    if n <= window_len:
        return [(0, n)]

    step = window_len - overlap
    windows = []
    start = n - window_len
    while start > 0:
        windows.append((start, start + window_len))
        start -= step
    windows.append((0, start + window_len))
    windows.reverse()
    return windows


def find_candidates(values, cfg: DetectorConfig) -> list[int]:
    """Recursive splitting of one window, indices relative to the window."""
    values = np.asarray(values, dtype=np.float64)
    found = []
    # explicit stack of [start, stop) segments still to split
    pending = [(0, len(values))]
    while pending:
        start, stop = pending.pop()
        segment = values[start:stop]
        candidate = max_qhat_candidate(segment, cfg.min_segment)
        if candidate is None:
            continue
        tau = candidate.index
        if split_pvalue(segment[:tau], segment[tau:], cfg.min_segment) > cfg.weak_pvalue:
            continue
        found.append(start + tau)
        pending.append((start + tau, stop))
        pending.append((start, start + tau))
    return sorted(found)


def _segment_pvalue(values: np.ndarray, left: int, point: int, right: int, min_segment: int) -> float:
    # too-short neighbour segments cannot be tested and go first
    return split_pvalue(values[left:point], values[point:right], min_segment)


def prune_weak(values, candidates: list[int], max_pvalue: float, min_segment: int = 2) -> list[int]:
    """
    Bottom-up merge: repeatedly drop the candidate with the largest p-value
    (smallest index on ties) until every survivor has p <= max_pvalue against
    its neighbouring segments.
    """
    values = np.asarray(values, dtype=np.float64)
    points = list(candidates)
    if not points:
        return []
    n = len(values)

    def pvalue_at(i: int) -> float:
        left = points[i - 1] if i > 0 else 0
        right = points[i + 1] if i + 1 < len(points) else n
        return _segment_pvalue(values, left, points[i], right, min_segment)

    pvalues = [pvalue_at(i) for i in range(len(points))]
    while points:
        worst = max(range(len(points)), key=lambda i: (pvalues[i], -i))
        if pvalues[worst] <= max_pvalue:
            break
        del points[worst]
        del pvalues[worst]
        # only the two new neighbours see different segments
        for i in (worst - 1, worst):
            if 0 <= i < len(points):
                pvalues[i] = pvalue_at(i)
    return points


def _relative_change(mean_before: float, mean_after: float) -> float:
    if mean_before == 0:
        if mean_after == mean_before:
            return 0.0
        return math.copysign(math.inf, mean_after - mean_before)
    return (mean_after - mean_before) / abs(mean_before)


def filter_magnitude(values, points: list[int], min_magnitude: float) -> list[int]:
    """
    One pass over the points: drop those whose relative change between the
    neighbouring segments is below min_magnitude. Changes from a zero mean
    are always kept.
    """
    if min_magnitude <= 0:
        return list(points)
    values = np.asarray(values, dtype=np.float64)
    bounds = [0, *points, len(values)]
    kept = []
    for i, point in enumerate(points):
        mean_before = values[bounds[i]:point].mean()
        mean_after = values[point:bounds[i + 2]].mean()
        if mean_before == 0 or abs(_relative_change(mean_before, mean_after)) >= min_magnitude:
            kept.append(point)
    return kept


def _describe(series: TimeSeries, metric: MetricDef, values: np.ndarray,
              pruned: list[int], kept: list[int], min_segment: int) -> list[ChangePoint]:
    # statistics use the same neighbouring segments as the pruning p-values
    bounds = [0, *pruned, len(values)]
    position = {point: i for i, point in enumerate(pruned)}
    result = []
    for point in kept:
        i = position[point]
        before = values[bounds[i]:point]
        after = values[point:bounds[i + 2]]
        relative_change = _relative_change(float(before.mean()), float(after.mean()))
        result.append(ChangePoint(
            metric=metric.name,
            index=point,
            time=int(series.timestamps[point]),
            mean_before=float(before.mean()),
            mean_after=float(after.mean()),
            stddev_before=float(before.std(ddof=1)),
            stddev_after=float(after.std(ddof=1)),
            p_value=_segment_pvalue(values, bounds[i], point, bounds[i + 2], min_segment),
            relative_change=relative_change,
            direction_effect=classify_effect(relative_change, metric.direction),
        ))
    return result


def detect_metric(series: TimeSeries, metric: MetricDef, cfg: DetectorConfig) -> list[ChangePoint]:
    """Run the whole pipeline on one metric of the series."""
    values = np.asarray(series.metrics[metric.name], dtype=np.float64)
    n = len(values)
    if n < 2 * cfg.min_segment:
        return []

    candidates = set()
    for start, stop in split_windows(n, cfg.window_len, cfg.overlap):
        candidates.update(start + c for c in find_candidates(values[start:stop], cfg))

    pruned = prune_weak(values, sorted(candidates), cfg.max_pvalue, cfg.min_segment)
    kept = filter_magnitude(values, pruned, cfg.min_magnitude)
    points = _describe(series, metric, values, pruned, kept, cfg.min_segment)

    logger.debug(json.dumps({
        "event": "metric_analysed",
        "test": series.test_name,
        "metric": metric.name,
        "candidates": len(candidates),
        "after_pruning": len(pruned),
        "reported": len(points),
    }))
    return points


def detect(series: TimeSeries, cfg: Optional[DetectorConfig] = None,
           metrics: Optional[dict[str, MetricDef]] = None, workers: int = 1) -> dict[str, list[ChangePoint]]:
    """
    Change points of every metric of the series.

    `metrics` supplies scale/direction per metric name; metrics missing from
    it get direction 0. Output is identical for any worker count.
    """
    cfg = cfg or DetectorConfig()
    metrics = metrics or {}
    if workers < 1:
        raise SizeError("workers must be at least 1")

    defs = [metrics.get(name) or MetricDef(name=name) for name in series.metric_names]
    if workers == 1 or len(defs) < 2:
        found = [detect_metric(series, d, cfg) for d in defs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            found = list(pool.map(lambda d: detect_metric(series, d, cfg), defs))

    result = {d.name: points for d, points in zip(defs, found)}
    logger.info(json.dumps({
        "event": "detection_finished",
        "test": series.test_name,
        "points": len(series),
        "change_points": sum(len(v) for v in result.values()),
    }))
    return result


def group_by_index(results: dict[str, list[ChangePoint]]) -> list[ChangePointGroup]:
    """Bundle change points of different metrics that share an index."""
    by_index: dict[int, list[ChangePoint]] = {}
    for points in results.values():
        for point in points:
            by_index.setdefault(point.index, []).append(point)
    return [
        ChangePointGroup(time=changes[0].time, index=index, changes=changes)
        for index, changes in sorted(by_index.items())
    ]
