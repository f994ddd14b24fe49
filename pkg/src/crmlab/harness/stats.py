"""Paired t-test with a self-contained Student-t tail."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError, NumericError

_TINY = 1e-300
_MAX_ITER = 10_000


def _beta_continued_fraction(a: float, b: float, x: float, tol: float) -> float:
    # modified Lentz evaluation of the incomplete-beta continued fraction
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > _TINY else _TINY)
    h = d
    for m in range(1, _MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            return h
    raise NumericError("incomplete beta continued fraction did not converge")


def regularized_incomplete_beta(a: float, b: float, x: float, tol: float = 1e-15) -> float:
    """I_x(a, b) for a, b > 0 and 0 <= x <= 1."""
    if a <= 0 or b <= 0:
        raise ConfigurationError("incomplete beta needs a > 0 and b > 0")
    if not 0.0 <= x <= 1.0:
        raise ConfigurationError("incomplete beta needs 0 <= x <= 1")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    # the fraction converges fast only below the mean; use the symmetry otherwise
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_continued_fraction(a, b, x, tol) / a
    return 1.0 - front * _beta_continued_fraction(b, a, 1.0 - x, tol) / b


def student_t_two_sided_p(t: float, df: float) -> float:
    """P(|T| >= |t|) for T ~ Student-t with ``df`` degrees of freedom."""
    if df <= 0:
        raise ConfigurationError("degrees of freedom must be positive")
    if math.isnan(t):
        return float("nan")
    if math.isinf(t):
        return 0.0
    p = regularized_incomplete_beta(0.5 * df, 0.5, df / (df + t * t))
    return min(max(p, 0.0), 1.0)


@dataclass(frozen=True)
class PairedTTestReport:
    t_statistic: float
    degrees_of_freedom: int
    p_value: float
    significant: bool
    mean_difference: float = 0.0
    alpha: float = 0.05

    def to_dict(self) -> dict:
        return {
            "t_statistic": self.t_statistic,
            "degrees_of_freedom": self.degrees_of_freedom,
            "p_value": self.p_value,
            "significant": self.significant,
            "mean_difference": self.mean_difference,
            "alpha": self.alpha,
        }


def paired_t_test(scores_a, scores_b, alpha: float = 0.05) -> PairedTTestReport:
    """Two-sided paired t-test of ``scores_a - scores_b``.

    All-zero differences give ``t = 0, p = 1``. Constant non-zero differences
    give an infinite statistic and ``p = 0``.
    """
    a = np.asarray(scores_a, dtype=np.float64).ravel()
    b = np.asarray(scores_b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ConfigurationError(f"paired samples differ in length: {a.size} vs {b.size}")
    if a.size < 2:
        raise ConfigurationError("a paired t-test needs at least two pairs")
    if not 0.0 < alpha < 1.0:
        raise ConfigurationError("alpha must lie in (0, 1)")
    diff = a - b
    n = diff.size
    df = n - 1
    mean = float(diff.mean())
    sd = float(diff.std(ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return PairedTTestReport(0.0, df, 1.0, False, 0.0, alpha)
        t = math.copysign(math.inf, mean)
    else:
        t = mean / (sd / math.sqrt(n))
    p = student_t_two_sided_p(t, df)
    return PairedTTestReport(t, df, p, bool(p < alpha), mean, alpha)
