"""Flag adjacent turns on a lineage whose scores moved by at least a threshold."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from ..record import TurnRecord


class ScreeningError(ValueError):
    pass


@dataclass(frozen=True)
class FlaggedPair:
    before: tuple[int, int]
    after: tuple[int, int]
    deltas: Mapping[str, float]
    magnitude: float

    def to_dict(self) -> dict:
        return {
            "before": list(self.before),
            "after": list(self.after),
            "deltas": dict(sorted(self.deltas.items())),
            "magnitude": self.magnitude,
        }


def scan(values: Sequence[Mapping[str, float] | None], thresholds: Mapping[str, float]) -> list[tuple[int, dict[str, float]]]:
    """Positions k where some benchmark moved by >= its threshold between k and k+1.

    ``None`` marks a failed turn; pairs touching one are skipped.
    """
    out = []
    for k in range(len(values) - 1):
        a, b = values[k], values[k + 1]
        if a is None or b is None:
            continue
        deltas = {}
        for name, thr in thresholds.items():
            if name in a and name in b:
                d = b[name] - a[name]
                if abs(d) >= thr:
                    deltas[name] = d
        if deltas:
            out.append((k, deltas))
    return out


def screen(lineage: Sequence[TurnRecord], thresholds: Mapping[str, float]) -> list[FlaggedPair]:
    """Flagged pairs ordered by largest absolute change, then by position."""
    if not thresholds:
        raise ScreeningError("no screening thresholds configured")
    if any(t <= 0 for t in thresholds.values()):
        raise ScreeningError("screening thresholds must be positive")
    ok = [t for t in lineage if t.result.ok]
    if len(ok) < 2:
        raise ScreeningError("screening needs at least two successful turns on the lineage")
    values = [
        {n: s.value for n, s in t.result.benchmark_scores.items()} if t.result.ok else None for t in lineage
    ]
    pairs = []
    for k, deltas in scan(values, thresholds):
        mag = max(abs(d) for d in deltas.values())
        pairs.append((k, FlaggedPair(lineage[k].key, lineage[k + 1].key, deltas, mag)))
    pairs.sort(key=lambda kp: (-kp[1].magnitude, kp[0]))
    return [p for _, p in pairs]
