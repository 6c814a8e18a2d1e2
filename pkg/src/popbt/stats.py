"""Welch's unequal-variance t-test with a one-sided upper-tail p-value."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import betainc


@dataclass(frozen=True)
class WelchResult:
    t: float
    df: float
    p_one_sided: float


def student_t_upper_tail(t: float, df: float) -> float:
    """P(T > t) for a Student-t variable with ``df`` degrees of freedom.

    Uses the regularized incomplete beta identity
    P(|T| > |t|) = I_{df/(df+t^2)}(df/2, 1/2).
    """
    if not df > 0:
        raise ValueError(f"degrees of freedom must be positive, got {df}")
    if math.isnan(t):
        raise ValueError("t is NaN")
    if t == 0:
        return 0.5
    if math.isinf(t):
        return 0.0 if t > 0 else 1.0
    # df/(df+t^2) loses precision for huge df; use t^2/(df+t^2) on the
    # complementary side instead when it is the smaller argument.
    t2 = t * t
    x = df / (df + t2)
    if x > 0.5:
        two_tail = 1.0 - betainc(0.5, 0.5 * df, t2 / (df + t2))
    else:
        two_tail = betainc(0.5 * df, 0.5, x)
    half = 0.5 * float(two_tail)
    return half if t > 0 else 1.0 - half


def welch_t(x: Sequence[float], y: Sequence[float]) -> WelchResult:
    """Test whether ``y`` has a larger mean than ``x``.

    Returns the statistic (mean(y) - mean(x)) / se, the Welch-Satterthwaite
    degrees of freedom and the upper-tail probability of the statistic.
    Zero variance in both samples is handled as a degenerate case: equal
    means give t=0, p=0.5; different means give t=+/-inf and p=0 or 1.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    nx, ny = len(x), len(y)
    if nx < 2 or ny < 2:
        raise ValueError("welch_t needs at least two samples on each side")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("welch_t samples must be finite")

    # t and df are invariant to a common rescaling; a power-of-two scale is
    # exact and keeps squared deviations away from overflow and underflow
    peak = float(max(np.max(np.abs(x)), np.max(np.abs(y))))
    if peak > 0.0:
        scale = math.ldexp(1.0, -math.frexp(peak)[1])
        x, y = x * scale, y * scale

    mx, my = float(np.mean(x)), float(np.mean(y))
    vx = float(np.var(x, ddof=1)) / nx
    vy = float(np.var(y, ddof=1)) / ny
    diff = my - mx
    se2 = vx + vy
    if se2 == 0.0:
        df = float(nx + ny - 2)
        if diff == 0.0:
            return WelchResult(0.0, df, 0.5)
        t = math.copysign(math.inf, diff)
        return WelchResult(t, df, 0.0 if diff > 0 else 1.0)

    t = diff / math.sqrt(se2)
    fx, fy = vx / se2, vy / se2
    df = 1.0 / (fx * fx / (nx - 1) + fy * fy / (ny - 1))
    return WelchResult(t, df, student_t_upper_tail(t, df))
