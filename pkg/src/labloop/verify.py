"""Re-derive every computed field of a run log from its raw records and compare."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from .falsification.agent import decide, gate, outcome_from_records
from .falsification.screening import ScreeningError, screen
from .metrics import rerank_score
from .orchestrator import selection_event
from .record import MANIFEST_NAME, Event, ExperimentResult, RunState, replay


@dataclass(frozen=True)
class Divergence:
    seq: int
    path: str
    stored: Any
    derived: Any
    source: tuple[int, int] | None = None

    def __str__(self) -> str:
        where = f" (raw data in turn {self.source[0]}.{self.source[1]})" if self.source else ""
        return f"record {self.seq}: {self.path}: stored {self.stored!r}, re-derived {self.derived!r}{where}"


def first_difference(stored: Any, derived: Any, path: str = "") -> tuple[str, Any, Any] | None:
    """Path of the first differing field, walking keys in sorted order."""
    if isinstance(stored, Mapping) and isinstance(derived, Mapping):
        for k in sorted(set(stored) | set(derived), key=str):
            sub = f"{path}.{k}" if path else str(k)
            if k not in stored or k not in derived:
                return sub, stored.get(k), derived.get(k)
            hit = first_difference(stored[k], derived[k], sub)
            if hit:
                return hit
        return None
    if isinstance(stored, (list, tuple)) and isinstance(derived, (list, tuple)):
        for k, (a, b) in enumerate(zip(stored, derived)):
            hit = first_difference(a, b, f"{path}[{k}]")
            if hit:
                return hit
        if len(stored) != len(derived):
            return f"{path}.length", len(stored), len(derived)
        return None
    if isinstance(stored, float) and isinstance(derived, float) and math.isnan(stored) and math.isnan(derived):
        return None
    if stored != derived or type(stored) is not type(derived) and not _same_number(stored, derived):
        return path or "(root)", stored, derived
    return None


def _same_number(a: Any, b: Any) -> bool:
    nums = (int, float)
    return isinstance(a, nums) and isinstance(b, nums) and not isinstance(a, bool) and not isinstance(b, bool) and a == b


def _check(ev: Event, stored: Any, derived: Any, prefix: str) -> Divergence | None:
    hit = first_difference(stored, derived)
    if hit is None:
        return None
    path, a, b = hit
    return Divergence(ev.seq, f"{ev.kind}.{prefix}{path}" if prefix else f"{ev.kind}.{path}", a, b)


def _trial_score(data: Mapping[str, Any]) -> float | None:
    result = ExperimentResult.from_dict(data["result"]) if data["result"].get("benchmark_scores") is not None else None
    return rerank_score(result) if result is not None and result.ok else None


def rederive(state: RunState, manifest: Mapping[str, Any]) -> list[Divergence]:
    """Recompute reranking, lineage, screening, trial scores and verdict statistics."""
    cfg = manifest["config"]
    n, n_s, m = cfg["N"], cfg["N_s"], cfg["M"]
    out: list[Divergence] = []

    def note(d: Divergence | None) -> None:
        if d is not None:
            out.append(d)

    selections: dict[int, dict] = {}
    trials: dict[str, list[dict]] = {}
    for ev in state.events:
        d = ev.data
        if ev.kind == "selection":
            i = d["iteration"]
            records = {j: state.turns[(i, j)] for j in range(1, n + 1) if (i, j) in state.turns}
            if len(records) != n:
                out.append(Divergence(ev.seq, "selection.iteration", i, f"{len(records)} of {n} turns recorded"))
                continue
            derived = selection_event(i, n, n_s, records)
            # raw inputs first, so an edited score is reported where it entered
            hit = _check(ev, d["rerank_inputs"], derived["rerank_inputs"], "rerank_inputs.")
            if hit is not None:
                thread = int(hit.path.split(".")[2])
                out.append(Divergence(hit.seq, hit.path, hit.stored, hit.derived, (i, thread)))
            else:
                note(_check(ev, d, derived, ""))
            selections[i] = d
        elif ev.kind == "lineage":
            final = selections.get(m)
            if final is None:
                out.append(Divergence(ev.seq, "lineage.best", d["best"], None))
                continue
            best = final["retained"][0]
            chain = [[m, best]]
            while chain[-1][0] > 0:
                parent = state.turns[tuple(chain[-1])].parent
                chain.append(list(parent) if parent else [0, 1])
            note(_check(ev, d, {"best": [m, best], "turns": chain[::-1]}, ""))
        elif ev.kind == "screening":
            lineage = [state.turns[tuple(k)] for k in d["lineage"]]
            try:
                pairs, error = [p.to_dict() for p in screen(lineage, d["thresholds"])], None
            except ScreeningError as exc:
                pairs, error = [], str(exc)
            note(_check(ev, {"pairs": d["pairs"], "error": d["error"]}, {"pairs": pairs, "error": error}, ""))
        elif ev.kind == "trial":
            note(_check(ev, d["score"], _trial_score(d), "score"))
            trials.setdefault(d["candidate_id"], []).append(d)
        elif ev.kind == "verdict":
            records = trials.get(d["candidate_id"], [])
            gates = []
            for g in d["gates"]:
                o = outcome_from_records([r for r in records if r["plan"] == g["plan"]])
                gates.append(gate(g["plan"], o.ablation, o.baseline, d["direction"]))
            usable = [g for g in gates if g.usable]
            binding = max(usable, key=lambda g: (g.p, g.plan)) if usable else None
            derived = {
                "gates": [g.to_dict() for g in gates],
                "t": binding.to_dict()["t"] if binding else None,
                "df": binding.df if binding else None,
                "p": binding.p if binding else None,
                "status": decide(gates, d["judge"], d["alpha"]),
            }
            note(_check(ev, {k: d[k] for k in derived}, derived, ""))
    return out


@dataclass
class ReplayResult:
    state: RunState
    divergences: list[Divergence]

    @property
    def verified(self) -> bool:
        return not self.divergences


def verify_run(run_dir: str | Path, manifest: Mapping[str, Any] | None = None) -> ReplayResult:
    """Checksum and digest verification, then re-derivation. Corruption raises LogCorruptionError."""
    run_dir = Path(run_dir)
    if manifest is None:
        manifest = json.loads((run_dir / MANIFEST_NAME).read_text("utf-8"))
    state = replay(run_dir, manifest)
    return ReplayResult(state, rederive(state, manifest))
