"""Welch's unequal-variance t-test with a self-contained t distribution."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

TAILS = ("left", "right", "two")

_EPS = 1e-16
_TINY = 1e-300


@dataclass(frozen=True)
class WelchResult:
    t: float
    df: float
    p: float
    tail: str

    def to_dict(self) -> dict:
        return {"t": _jsonable(self.t), "df": self.df, "p": self.p, "tail": self.tail}


def _jsonable(x: float) -> float | str:
    # canonical JSON forbids infinities; keep them readable instead
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta, modified Lentz method."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, 10000):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("betainc needs a > 0 and b > 0")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    front = math.exp(log_front)
    # use the expansion that converges fastest, mirror the other side
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_cdf(t: float, df: float) -> float:
    """P(T <= t) for Student's t with ``df`` degrees of freedom (df may be fractional)."""
    if df <= 0:
        raise ValueError("degrees of freedom must be positive")
    if math.isinf(t):
        return 1.0 if t > 0 else 0.0
    if t == 0.0:
        return 0.5
    x = df / (df + t * t)
    tail = 0.5 * betainc(df / 2.0, 0.5, x)
    return 1.0 - tail if t > 0 else tail


def _mean_var(xs: Sequence[float]) -> tuple[float, float]:
    n = len(xs)
    mean = math.fsum(xs) / n
    var = math.fsum((x - mean) ** 2 for x in xs) / (n - 1)
    return mean, var


def _p_from_t(t: float, df: float, tail: str) -> float:
    left = t_cdf(t, df)
    right = t_cdf(-t, df)
    if tail == "left":
        return left
    if tail == "right":
        return right
    return min(1.0, 2.0 * min(left, right))


def welch_t_test(a: Sequence[float], b: Sequence[float], tail: str = "left") -> WelchResult:
    """Test mean(a) against mean(b). ``left`` is the alternative mean(a) < mean(b)."""
    if tail not in TAILS:
        raise ValueError(f"tail must be one of {TAILS}")
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each sample needs at least two values")
    if not all(math.isfinite(x) for x in list(a) + list(b)):
        raise ValueError("samples must be finite")
    na, nb = len(a), len(b)
    ma, va = _mean_var(a)
    mb, vb = _mean_var(b)
    sa, sb = va / na, vb / nb
    se2 = sa + sb
    if se2 == 0.0:
        # degenerate: no spread in either arm; df falls back to the pooled count
        df = float(na + nb - 2)
        if ma == mb:
            return WelchResult(0.0, df, 1.0 if tail == "two" else 0.5, tail)
        t = math.inf if ma > mb else -math.inf
        return WelchResult(t, df, _p_from_t(t, df, tail), tail)
    t = (ma - mb) / math.sqrt(se2)
    # written in ratios so tiny variances do not underflow
    fa, fb = sa / se2, sb / se2
    df = 1.0 / (fa * fa / (na - 1) + fb * fb / (nb - 1))
    return WelchResult(t, df, _p_from_t(t, df, tail), tail)
