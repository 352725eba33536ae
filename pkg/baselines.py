"""
Reference segmentation algorithms under an L2 (mean shift) cost: PELT,
DYNP and an unpruned optimal-partition program used as PELT's oracle.

Change points are reported as the first index of each new segment, so
[0, 10) + [10, 20) is reported as [10].
"""
import logging
import math

import numpy as np

from errors import DomainError, RangeError, SizeError

logger = logging.getLogger(__name__)

MIN_SEGMENT = 2
EXHAUSTIVE_MAX_POINTS = 200


class SegmentCostModel:
    """
    Sum of squared deviations from the segment mean, answered in O(1)
    from prefix sums of the (centred) values and their squares.
    """

    kind = "l2_mean"

    def __init__(self, values):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 1 or not np.all(np.isfinite(values)):
            raise DomainError("values must be a finite one-dimensional array")
        self.n = len(values)
        # centring keeps the prefix-sum differences well conditioned
        centred = values - values.mean() if self.n else values
        self._sums = np.concatenate(([0.0], np.cumsum(centred)))
        self._squares = np.concatenate(([0.0], np.cumsum(centred ** 2)))

    def cost(self, a: int, b: int) -> float:
        if not 0 <= a < b <= self.n:
            raise RangeError(f"segment [{a}, {b}) is empty or outside [0, {self.n}]")
        total = self._sums[b] - self._sums[a]
        squares = self._squares[b] - self._squares[a]
        return max(0.0, float(squares - total * total / (b - a)))


def segment_cost(model: SegmentCostModel, a: int, b: int) -> float:
    return model.cost(a, b)


def default_penalty(values) -> float:
    """BIC-style penalty 2 * variance * log(n)."""
    values = np.asarray(values, dtype=np.float64)
    if len(values) < 2:
        return 0.0
    return 2.0 * float(values.var()) * math.log(len(values))


def _backtrack(last: list[int], n: int) -> list[int]:
    points = []
    t = last[n]
    while t > 0:
        points.append(t)
        t = last[t]
    return sorted(points)


def exhaustive_partition(values, penalty: float, min_segment: int = MIN_SEGMENT) -> list[int]:
    """
    Optimal partition by the full O(n^2) program
        F(t) = min_s F(s) + cost(s, t) + penalty,  F(0) = -penalty
    over every admissible s; the smallest s wins ties.
    """
    model = SegmentCostModel(values)
    n = model.n
    if n > EXHAUSTIVE_MAX_POINTS:
        raise SizeError(f"exhaustive_partition is limited to {EXHAUSTIVE_MAX_POINTS} points, got {n}")
    if n < 2 * min_segment:
        return []

    best = [math.inf] * (n + 1)
    last = [0] * (n + 1)
    best[0] = -penalty
    for t in range(min_segment, n + 1):
        for s in [0, *range(min_segment, t - min_segment + 1)]:
            value = best[s] + model.cost(s, t) + penalty
            if value < best[t]:
                best[t] = value
                last[t] = s
    return _backtrack(last, n)


def pelt(values, penalty: float, min_segment: int = MIN_SEGMENT) -> list[int]:
    """
    Pruned exact linear time segmentation with the same objective and tie
    rule as exhaustive_partition.

    A start s is dropped once F(s) + cost(s, t) > F(t); because t only becomes
    usable as a split min_segment points later, the drop takes effect at
    t + min_segment.
    """
    if penalty < 0:
        raise DomainError("penalty must be non-negative")
    model = SegmentCostModel(values)
    n = model.n
    if n < 2 * min_segment:
        return []

    best = [math.inf] * (n + 1)
    last = [0] * (n + 1)
    best[0] = -penalty
    starts = []
    pending: dict[int, set[int]] = {}

    for t in range(min_segment, n + 1):
        newest = t - min_segment
        if newest == 0 or newest >= min_segment:
            starts.append(newest)
        dropped = pending.pop(t, None)
        if dropped:
            starts = [s for s in starts if s not in dropped]

        totals = []
        for s in starts:
            value = best[s] + model.cost(s, t)
            totals.append(value)
            if value + penalty < best[t]:
                best[t] = value + penalty
                last[t] = s

        doomed = {s for s, value in zip(starts, totals) if value > best[t]}
        if doomed:
            pending.setdefault(t + min_segment, set()).update(doomed)

    points = _backtrack(last, n)
    logger.debug(f"pelt: {len(points)} change points, penalty={penalty:.4g}")
    return points


def dynp(values, k: int, min_segment: int = MIN_SEGMENT) -> list[int]:
    """
    Exactly k change points minimizing the total L2 cost of the k + 1
    segments. Among optimal solutions the lexicographically smallest index
    sequence is returned.
    """
    model = SegmentCostModel(values)
    n = model.n
    if k < 0 or k > n // min_segment - 1:
        raise SizeError(f"cannot place {k} change points in {n} points with min_segment={min_segment}")
    if k == 0:
        return []

    # rest[j][s]: best cost of splitting [s, n) into j segments
    rest = np.full((k + 2, n + 1), math.inf)
    for s in range(n - min_segment + 1):
        rest[1][s] = model.cost(s, n)
    for j in range(2, k + 2):
        for s in range(n - j * min_segment + 1):
            rest[j][s] = min(
                model.cost(s, t) + rest[j - 1][t]
                for t in range(s + min_segment, n - (j - 1) * min_segment + 1)
            )

    # walk forward taking the earliest split that stays optimal
    points = []
    s = 0
    for j in range(k + 1, 1, -1):
        target = rest[j][s]
        for t in range(s + min_segment, n - (j - 1) * min_segment + 1):
            if model.cost(s, t) + rest[j - 1][t] == target:
                points.append(t)
                s = t
                break
    return points
