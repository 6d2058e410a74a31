"""Run reports: per-phase cost table, score trajectory, flagged pairs and verdicts."""

from __future__ import annotations

import json
from importlib import resources
from typing import Any, Mapping

from .llm import CostLedger, PriceTable
from .metrics import rerank_score
from .record import RunStore

PRE = "pre_falsification"
FALS = "falsification"
ROW_LABELS = {PRE: "Pre-Falsification (per iter.)", FALS: "Falsification (per disc. cand.)"}
NOT_REACHED = "not reached"


def per_unit(input_tokens: float, output_tokens: float, units: int, prices: PriceTable) -> dict:
    """Average tokens per unit of work and the dollar cost of that average."""
    if units <= 0:
        return {"input_tokens": None, "output_tokens": None, "cost": None}
    avg_in, avg_out = input_tokens / units, output_tokens / units
    return {"input_tokens": avg_in, "output_tokens": avg_out, "cost": prices.cost(avg_in, avg_out)}


def cost_report(ledger: CostLedger, prices: PriceTable, iterations: int, candidates: int) -> dict:
    phases = {}
    for phase in (PRE, FALS):
        t = ledger.totals(phase)
        phases[phase] = {**t.to_dict(), "cost": prices.cost(t.input_tokens, t.output_tokens)}
    units = {PRE: iterations, FALS: candidates}
    rows = [
        {"label": ROW_LABELS[p], "phase": p, "units": units[p],
         **per_unit(phases[p]["input_tokens"], phases[p]["output_tokens"], units[p], prices)}
        for p in (PRE, FALS)
    ]
    return {
        "prices": {"input_per_million": prices.input_per_million, "output_per_million": prices.output_per_million},
        "phases": phases,
        "iterations": iterations,
        "candidates": candidates,
        "rows": rows,
    }


def _trajectory(store: RunStore) -> list[dict]:
    retained = {(e.data["iteration"], j) for e in store.events_of("selection") for j in e.data["retained"]}
    out = []
    for (i, j), t in sorted(store.turns.items()):
        r = t.result
        out.append({
            "iteration": i,
            "thread": j,
            "status": r.status,
            "scores": {n: s.value for n, s in sorted(r.benchmark_scores.items())},
            "rerank_score": rerank_score(r) if r.ok else None,
            "retained": (i, j) in retained,
        })
    return out


def _falsification(store: RunStore) -> dict:
    end = store.events_of("falsification_end")
    screening = store.events_of("screening")
    if end:
        status = end[-1].data["status"]
    elif screening:
        status = "interrupted"
    else:
        status = NOT_REACHED
    section: dict[str, Any] = {"status": status, "flagged_pairs": [], "candidates": [], "screening_error": None}
    if screening:
        section["flagged_pairs"] = screening[-1].data["pairs"]
        section["screening_error"] = screening[-1].data.get("error")
    cands = store.events_of("candidates")
    if not cands:
        return section
    section["candidate_warnings"] = cands[-1].data["warnings"]
    by_id = {c["id"]: {**c, "plans": [], "plan_warnings": [], "trials": [], "verdict": None}
             for c in cands[-1].data["candidates"]}
    for e in store.events_of("plans"):
        by_id[e.data["candidate_id"]]["plans"] = e.data["plans"]
        by_id[e.data["candidate_id"]]["plan_warnings"] = e.data["warnings"]
    for e in store.events_of("trial"):
        by_id[e.data["candidate_id"]]["trials"].append(
            {k: e.data[k] for k in ("plan", "arm", "trial", "seed", "score")})
    for e in store.events_of("verdict"):
        by_id[e.data["candidate_id"]]["verdict"] = e.data
    section["candidates"] = [by_id[c["id"]] for c in cands[-1].data["candidates"]]
    return section


def discovery_report(store: RunStore) -> dict:
    lineage = store.events_of("lineage")
    return {"best_lineage": lineage[-1].data["turns"] if lineage else None, **_falsification(store)}


def build_report(store: RunStore, cost: Mapping[str, Any] | None = None) -> dict:
    manifest = store.manifest
    lineage = store.events_of("lineage")
    return {
        "topic": manifest.get("topic"),
        "status": manifest.get("status"),
        "run_digest": store.digest(),
        "cost": dict(cost) if cost is not None else None,
        "trajectory": _trajectory(store),
        "best_lineage": lineage[-1].data["turns"] if lineage else None,
        "falsification": _falsification(store),
    }


def _num(x: float | None, fmt: str) -> str:
    return "-" if x is None else format(x, fmt)


def render_text(report: Mapping[str, Any]) -> str:
    lines = [f"Run: topic {report['topic']}, status {report['status']}", f"Digest: {report['run_digest']}", ""]
    cost = report.get("cost")
    lines.append("Cost per unit of work")
    if cost is None:
        lines.append("  (no cost report)")
    else:
        lines.append(f"  {'':34}{'input tokens':>14}{'output tokens':>15}{'cost ($)':>10}")
        for row in cost["rows"]:
            lines.append(f"  {row['label']:34}{_num(row['input_tokens'], '.1f'):>14}"
                         f"{_num(row['output_tokens'], '.1f'):>15}{_num(row['cost'], '.3f'):>10}")
    lines += ["", "Score trajectory (rerank score; * = retained)"]
    for t in report["trajectory"]:
        mark = "*" if t["retained"] else " "
        scores = ", ".join(f"{n}={v:.4f}" for n, v in t["scores"].items()) or t["status"]
        lines.append(f"  {mark} turn {t['iteration']}.{t['thread']}: {_num(t['rerank_score'], '.4f')}  ({scores})")
    if report["best_lineage"]:
        lines.append("  best lineage: " + " -> ".join(f"{i}.{j}" for i, j in report["best_lineage"]))
    fals = report["falsification"]
    lines += ["", f"Falsification: {fals['status']}"]
    if fals["status"] == NOT_REACHED:
        return "\n".join(lines) + "\n"
    if fals.get("screening_error"):
        lines.append(f"  screening: {fals['screening_error']}")
    for p in fals["flagged_pairs"]:
        deltas = ", ".join(f"{n} {d:+.4f}" for n, d in p["deltas"].items())
        lines.append(f"  flagged turn {p['before'][0]} -> turn {p['after'][0]}: {deltas}")
    for c in fals["candidates"]:
        lines.append(f"  [{c['id']}] {c['key_factor']} (expected effect {c['direction']})")
        for plan in c["plans"]:
            lines.append(f"    plan {plan['index']}: {plan['plan']} (baseline turn {plan['baseline_turn'][0]},"
                         f" ablate {', '.join(plan['ablate']) or '-'})")
            for arm in ("ablation", "baseline"):
                vals = [t["score"] for t in c["trials"] if t["plan"] == plan["index"] and t["arm"] == arm]
                lines.append(f"      {arm:9} " + ", ".join(_num(v, ".4f") for v in vals))
        v = c["verdict"]
        if v is None:
            lines.append("    verdict: not reached")
            continue
        stats = "no test" if v["p"] is None else f"t={v['t'] if isinstance(v['t'], str) else format(v['t'], '.4f')}, df={v['df']:.2f}, p={v['p']:.4g}"
        judge = {True: "affirmed", False: "denied", None: "no judgment"}[v["judge"]]
        lines.append(f"    verdict: {v['status']} ({stats}; judge {judge})")
        if v["discovery"]:
            lines.append(f"    discovery: {v['discovery']}")
    return "\n".join(lines) + "\n"


def report_schema() -> dict:
    """JSON schema that ``--format json`` output conforms to."""
    return json.loads(resources.files("labloop").joinpath("data", "report.schema.json").read_text("utf-8"))
