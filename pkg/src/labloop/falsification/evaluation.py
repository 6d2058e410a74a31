"""Scoring schema for judged discoveries and its summary statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .stats import welch_t_test

DIMENSIONS = ("importance", "consistency", "correctness")


@dataclass(frozen=True)
class FalsificationEvalRecord:
    importance: int
    consistency: int
    correctness: int

    def __post_init__(self) -> None:
        for name in DIMENSIONS:
            v = getattr(self, name)
            if isinstance(v, bool) or v not in (0, 1, 2):
                raise ValueError(f"{name} must be 0, 1 or 2, got {v!r}")

    @property
    def overall(self) -> float:
        return (self.importance + self.consistency + self.correctness) / 3


@dataclass(frozen=True)
class DimensionStats:
    avg: float
    std: float
    min: float
    max: float
    p: float

    def to_dict(self) -> dict:
        return {"AVG": self.avg, "STD": self.std, "MIN": self.min, "MAX": self.max, "p": self.p}


def _stats(values: Sequence[float], baseline: float) -> DimensionStats:
    n = len(values)
    mean = math.fsum(values) / n
    std = math.sqrt(math.fsum((v - mean) ** 2 for v in values) / (n - 1))
    p = welch_t_test(list(values), [baseline] * n, "left").p
    return DimensionStats(mean, std, min(values), max(values), p)


def aggregate_eval(records: Sequence[FalsificationEvalRecord], baseline: float = 2.0) -> dict[str, DimensionStats]:
    """Per-dimension AVG/STD/MIN/MAX plus a left-tailed Welch p against a constant baseline sample."""
    if len(records) < 2:
        raise ValueError("aggregate_eval needs at least two records")
    out = {name: _stats([float(getattr(r, name)) for r in records], baseline) for name in DIMENSIONS}
    out["overall"] = _stats([r.overall for r in records], baseline)
    return out
