"""Regenerate the bundled planted-factor scenario (run manually).

Iteration 2, thread 1 introduces the driver principle [P1] together with the
harmful decoy [P3]; iteration 3, thread 1 adds a neutral principle. Every other
thread rates records against one neutral principle. Falsification names the
driver and the decoy as candidate factors and ablates each from the final turn.
"""
import json
from pathlib import Path

OUT = Path(__file__).resolve().parents[2] / "src/labloop/fixtures/scenarios/planted.json"

PRINCIPLES = {
    "P1": "[P1] The response answers the instruction completely.",
    "P2": "[P2] The response is free of factual errors.",
    "P3": "[P3] The response uses a formal register.",
    "P4": "[P4] The instruction is self-contained.",
    "P5": "[P5] The response cites its sources.",
    "P6": "[P6] The instruction asks a single question.",
    "P7": "[P7] The response is under two hundred words.",
}
STYLES = (
    "Rate each record against the principles below and keep those passing at least the threshold.",
    "Score the corpus with a short rubric, then retain records that satisfy enough rubric items.",
    "Apply a checklist filter: count satisfied checklist items per pair and drop low-count pairs.",
)


def envelope(iteration, ids, threshold, style, idea):
    doc = {
        "topic_id": "data_engineering",
        "paradigm": "principled_filtering",
        "params": {"principles": [PRINCIPLES[p] for p in ids], "threshold": threshold},
    }
    parts = [
        "### Idea", idea,
        "### Methodology", f"{style} Principles: {', '.join(ids)}; threshold {threshold}.",
        "### DSL", "```json\n" + json.dumps(doc, indent=1) + "\n```",
        "### Experiment Settings", json.dumps({"baseline_turn": iteration - 1}),
        "### Hypothesis", "Filtering on these principles raises quality_val above ${prev_quality_val}.",
        "### Related Feature", "Instruction-response quality signals.",
    ]
    if iteration > 1:
        parts += ["### Rebuttal", "The previous turn scored ${prev_quality_val}; this revision addresses its review."]
    return "\n".join(parts) + "\n"


def proposal(iteration, thread, ids, threshold, idea):
    out = {}
    for k, style in enumerate(STYLES, start=1):
        text = envelope(iteration, ids, threshold, style, idea)
        out[f"proposal/{iteration}/{thread}/candidate-{k}"] = text
    return out


scenario = {}
neutral = {1: ["P4"], 2: ["P5"], 3: ["P6"], 4: ["P7"]}
for j, ids in neutral.items():
    scenario.update(proposal(1, j, ids, 1, "Keep records that satisfy one simple quality principle."))
scenario.update(proposal(2, 1, ["P1", "P3", "P2"], 3, "Require completeness, formality and accuracy at once."))
for j in (2, 3, 4):
    scenario.update(proposal(2, j, neutral[j], 1, "Keep records that satisfy one simple quality principle."))
scenario.update(proposal(3, 1, ["P1", "P3", "P2", "P4"], 3, "Add self-containedness to the three-way rubric."))
for j in (2, 3, 4):
    scenario.update(proposal(3, j, neutral[j], 1, "Keep records that satisfy one simple quality principle."))

scenario.update({
    "review/*/*/metrics": json.dumps({"metrics": [{"name": "length"}, {"name": "keyword_overlap"}]}),
    "review/*/*/metric-*": "The metric is in line with a filtered corpus at iteration ${iteration}.",
    "review/*/*/merge": "Turn ${iteration}.${thread} reached quality_val ${quality_val}; the subset stays coherent.",
    "review/*/*/proposal-review": "The principles are specific; consider which one carries the gain.",
    "falsification/2/1/candidates": json.dumps({"candidates": [
        {"key_factor": "Requiring complete answers", "elements": ["principles:[P1]"], "direction": "positive",
         "evidence": "quality_val rose sharply when the completeness principle entered the rubric."},
        {"key_factor": "Requiring a formal register", "elements": ["principles:[P3]"], "direction": "positive",
         "evidence": "The formality principle entered the rubric in the same turn."},
    ]}),
    "falsification/1/0/plan": json.dumps({"baseline_turn": 3, "plans": [
        {"plan": "Remove the completeness principle and keep everything else.", "ablate": ["principles:[P1]"]},
    ]}),
    "falsification/2/0/plan": json.dumps({"baseline_turn": 3, "plans": [
        {"plan": "Remove the formality principle and keep everything else.", "ablate": ["principles:[P3]"]},
    ]}),
    "falsification/1/0/verdict": json.dumps({"affirmed": True, "discovery":
        "Keeping only records whose responses answer the instruction completely drives the quality gain."}),
    "falsification/2/0/verdict": json.dumps({"affirmed": False, "discovery":
        "A formal register does not explain the gain; removing it raised quality."}),
})

OUT.write_text(json.dumps(scenario, indent=1) + "\n")
