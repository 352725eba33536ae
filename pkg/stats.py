"""
Numerical primitives: the E-divisive divergence statistic, split search and
the t-tests used to decide whether a split is significant.
"""
import logging
import math
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import special, stats

from errors import DomainError, RangeError, SizeError

logger = logging.getLogger(__name__)

# smaller segments get the location test only
MIN_SPREAD_SEGMENT = 10


class TTestResult(BaseModel):
    """Two-sided t-test outcome."""

    model_config = ConfigDict(frozen=True)

    t_statistic: float
    degrees_of_freedom: float = Field(..., gt=0)
    p_value: float = Field(..., ge=0, le=1)


class SplitCandidate(BaseModel):
    """Split position tau (left = [0, tau), right = [tau, n)) and its q-hat."""

    model_config = ConfigDict(frozen=True)

    index: int
    qhat: float = Field(..., ge=0)


def _as_finite_array(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise DomainError("expected a one-dimensional array")
    if not np.all(np.isfinite(arr)):
        raise DomainError("values must be finite")
    return arr


def _pair_sum(a: np.ndarray, b: np.ndarray, alpha: float) -> float:
    return float(np.sum(np.abs(a[:, None] - b[None, :]) ** alpha))


def qhat(values, tau: int, alpha: float = 1.0) -> float:
    """
    Energy divergence between values[:tau] and values[tau:], weighted by
    m*k/(m+k). Within-sample terms are averaged over unordered pairs and are
    0 for a side with fewer than 2 points.
    """
    x = _as_finite_array(values)
    n = len(x)
    if not 1 <= tau <= n - 1:
        raise RangeError(f"tau={tau} outside [1, {n - 1}]")
    if not 0 < alpha <= 2:
        raise DomainError("alpha must be in (0, 2]")

    left, right = x[:tau], x[tau:]
    m, k = len(left), len(right)

    cross = 2.0 / (m * k) * _pair_sum(left, right, alpha)
    # ordered-pair sums count every unordered pair twice
    within_left = _pair_sum(left, left, alpha) / 2 / math.comb(m, 2) if m >= 2 else 0.0
    within_right = _pair_sum(right, right, alpha) / 2 / math.comb(k, 2) if k >= 2 else 0.0

    return m * k / (m + k) * (cross - within_left - within_right)


def qhat_profile(values, alpha: float = 1.0) -> np.ndarray:
    """
    q-hat for every tau in [1, n-1] at once; entry tau-1 holds qhat(values, tau).

    Builds the distance matrix once and updates the within/cross sums with
    prefix sums, so each tau costs O(1) after the O(n^2) setup.
    """
    x = _as_finite_array(values)
    n = len(x)
    if n < 2:
        return np.empty(0)
    if not 0 < alpha <= 2:
        raise DomainError("alpha must be in (0, 2]")

    upper = np.triu(np.abs(x[:, None] - x[None, :]) ** alpha, k=1)
    total = upper.sum()
    # col_sums[t] = sum_{i<t} d(i, t); row_sums[t] = sum_{j>t} d(t, j)
    col_sums = upper.sum(axis=0)
    row_sums = upper.sum(axis=1)

    tau = np.arange(1, n)
    within_left = np.cumsum(col_sums)[:-1]
    within_right = np.cumsum(row_sums[::-1])[::-1][1:]
    cross = total - within_left - within_right

    m = tau.astype(np.float64)
    k = (n - tau).astype(np.float64)
    pairs_left = m * (m - 1) / 2
    pairs_right = k * (k - 1) / 2
    left_term = np.divide(within_left, pairs_left, out=np.zeros_like(m), where=pairs_left > 0)
    right_term = np.divide(within_right, pairs_right, out=np.zeros_like(k), where=pairs_right > 0)

    return m * k / (m + k) * (2.0 / (m * k) * cross - left_term - right_term)


def max_qhat_candidate(values, min_segment: int = 2) -> Optional[SplitCandidate]:
    """The admissible split maximizing q-hat; smallest tau wins ties."""
    if min_segment < 2:
        raise SizeError("min_segment must be at least 2")
    x = _as_finite_array(values)
    n = len(x)
    if n < 2 * min_segment:
        return None

    profile = qhat_profile(x)
    admissible = profile[min_segment - 1:n - min_segment]
    best = int(np.argmax(admissible))
    return SplitCandidate(index=best + min_segment, qhat=max(0.0, float(admissible[best])))


def student_t_cdf(t: float, df: float) -> float:
    """CDF of Student's t through the regularized incomplete beta function."""
    if not df > 0 or math.isnan(t):
        raise DomainError(f"student_t_cdf needs df > 0 and a number t, got t={t}, df={df}")
    if math.isinf(t):
        return 1.0 if t > 0 else 0.0
    tail = 0.5 * float(special.betainc(df / 2.0, 0.5, df / (df + t * t)))
    return 1.0 - tail if t > 0 else tail


def t_test(a, b, equal_var: bool = False) -> TTestResult:
    """
    Two-sided t-test of a against b: Welch's by default, Student's pooled
    variance form with equal_var=True.

    Two constant samples have no defined t statistic: equal constants give
    p = 1, different constants give p = 0.
    """
    x = _as_finite_array(a)
    y = _as_finite_array(b)
    if len(x) < 2 or len(y) < 2:
        raise SizeError(f"t_test needs at least 2 points per sample, got {len(x)} and {len(y)}")

    var_x = x.var(ddof=1)
    var_y = y.var(ddof=1)
    if var_x == 0 and var_y == 0:
        df = float(len(x) + len(y) - 2)
        mean_x, mean_y = x.mean(), y.mean()
        if mean_x == mean_y:
            return TTestResult(t_statistic=0.0, degrees_of_freedom=df, p_value=1.0)
        return TTestResult(
            t_statistic=math.copysign(math.inf, mean_x - mean_y),
            degrees_of_freedom=df,
            p_value=0.0,
        )

    result = stats.ttest_ind(x, y, equal_var=equal_var)
    p_value = min(1.0, max(0.0, float(result.pvalue)))
    return TTestResult(
        t_statistic=float(result.statistic),
        degrees_of_freedom=float(result.df),
        p_value=p_value,
    )


def spread_test(a, b) -> TTestResult:
    """
    Brown-Forsythe test for a change in spread: a pooled t-test on the
    absolute deviations of each sample from its own median.
    """
    x = _as_finite_array(a)
    y = _as_finite_array(b)
    return t_test(np.abs(x - np.median(x)), np.abs(y - np.median(y)), equal_var=True)


def split_pvalue(left, right, min_segment: int = 2) -> float:
    """
    Significance of a split between two adjacent segments, corrected for
    the number of split positions their union offers.

    The location test is the pooled t-test. When both sides hold at least
    MIN_SPREAD_SEGMENT points the spread test runs too and the smaller of
    the two p-values is doubled.
    """
    x = _as_finite_array(left)
    y = _as_finite_array(right)
    if len(x) < min_segment or len(y) < min_segment:
        return 1.0

    p_value = t_test(x, y, equal_var=True).p_value
    if len(x) >= MIN_SPREAD_SEGMENT and len(y) >= MIN_SPREAD_SEGMENT:
        p_value = 2 * min(p_value, spread_test(x, y).p_value)
    positions = len(x) + len(y) - 2 * min_segment + 1
    return min(1.0, p_value * positions)
