import json
import statistics

import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from labloop.agents import topic_context
from labloop.dsl import default_registry, validate_in
from labloop.envs import PlantedFilterEnv
from labloop.falsification import (
    Chat,
    DiscoveryCandidate,
    FalsificationEvalRecord,
    FlaggedPair,
    ScreeningError,
    ablate_params,
    aggregate_eval,
    decide,
    gate,
    generate_candidates,
    plan_ablations,
    run_trials,
    screen,
    touches,
    verdict,
)
from labloop.llm import Gateway, ScriptedBackend
from labloop.record import BenchmarkScore, ExperimentResult, ExpSettings, Proposal, Review, TurnRecord

REG = default_registry()
ENV = PlantedFilterEnv.generate(n=1000, sigma=0.02, seed=0)
TOPIC = topic_context(REG.get("data_engineering"), ENV.benchmarks)
TRIVIAL = validate_in(ENV.trivial_method(), REG)


def doc(principles, threshold):
    return validate_in({"topic_id": "data_engineering", "paradigm": "principled_filtering",
                        "params": {"principles": principles, "threshold": threshold}}, REG)


def turn(i, scores, d=None):
    if scores is None:
        result = ExperimentResult.failure("x")
    else:
        result = ExperimentResult({n: BenchmarkScore(n, v, "validation") for n, v in scores.items()})
    if i == 0:
        return TurnRecord(0, 1, result)
    prop = Proposal("idea", f"method {i}", d or doc([f"[P{i % 8 + 1}] x"], 1), ExpSettings(i - 1), "h", "f",
                    None if i == 1 else "r")
    return TurnRecord(i, 1, result, None if i == 1 else (i - 1, 1), prop, Review("a", "b") if scores else None)


def lineage(values, name="score"):
    return [turn(i, None if v is None else {name: v}) for i, v in enumerate(values)]


def chat(scenario):
    backend = ScriptedBackend(scenario)
    return Chat(Gateway(backend)), backend


# -- screening -----------------------------------------------------------------------

def pairs_of(flags):
    return [(p.before[0], p.after[0]) for p in flags]


def test_screen_flags_single_jump():
    assert pairs_of(screen(lineage([6.0, 6.2, 7.9, 7.8]), {"score": 1.5})) == [(1, 2)]


def test_screen_constant_sequence():
    assert screen(lineage([6.0, 6.0, 6.0]), {"score": 0.1}) == []


def test_screen_counts_decreases():
    flags = screen(lineage([7.9, 6.0]), {"score": 1.5})
    assert pairs_of(flags) == [(0, 1)]
    assert flags[0].deltas["score"] == pytest.approx(-1.9)


def test_screen_any_benchmark():
    lin = [turn(0, {"a": 0.0, "b": 0.0}), turn(1, {"a": 0.05, "b": 1.0})]
    assert pairs_of(screen(lin, {"a": 0.5, "b": 0.5})) == [(0, 1)]


def test_screen_orders_by_magnitude():
    flags = screen(lineage([0.0, 1.0, 3.0, 3.0]), {"score": 0.5})
    assert pairs_of(flags) == [(1, 2), (0, 1)]


def test_screen_preconditions():
    with pytest.raises(ScreeningError):
        screen(lineage([1.0]), {"score": 0.1})
    with pytest.raises(ScreeningError):
        screen(lineage([1.0, None]), {"score": 0.1})
    with pytest.raises(ScreeningError):
        screen(lineage([1.0, 2.0]), {})


def naive_flags(values, thresholds):
    out = set()
    for k in range(len(values) - 1):
        a, b = values[k], values[k + 1]
        if a is None or b is None:
            continue
        for name in thresholds:
            if abs(b[name] - a[name]) >= thresholds[name]:
                out.add((k, k + 1))
    return out


@settings(max_examples=200)
@given(st.lists(st.one_of(st.none(), st.fixed_dictionaries({"a": st.floats(-10, 10), "b": st.floats(-10, 10)})),
                min_size=2, max_size=12),
       st.fixed_dictionaries({"a": st.floats(0.01, 5)}, optional={"b": st.floats(0.01, 5)}))
def test_screen_equals_naive_scan(values, thresholds):
    assume(sum(v is not None for v in values) >= 2)
    lin = [turn(i, v) for i, v in enumerate(values)]
    assert set(pairs_of(screen(lin, thresholds))) == naive_flags(values, thresholds)


# -- candidates ----------------------------------------------------------------------

LIN = lineage([0.5, 0.52, 0.80, 0.78, 0.55], "quality_val")


def cand_response(*factors):
    return json.dumps({"candidates": [{"key_factor": f, "elements": [f"principles:[{f}]"],
                                       "direction": "positive", "evidence": "jump"} for f in factors]})


def test_one_pair_one_candidate():
    pairs = screen(LIN[:3], {"quality_val": 0.15})
    c, _ = chat({"falsification/2/1/candidates": cand_response("P1")})
    found, warnings = generate_candidates(pairs, LIN[:3], TOPIC, c, 2)
    assert [x.key_factor for x in found] == ["P1"] and warnings == []
    assert found[0].pair == pairs[0] and found[0].id == "c1"


def test_limit_takes_largest_change_first():
    pairs = screen(LIN, {"quality_val": 0.15})
    assert pairs_of(pairs) == [(1, 2), (3, 4)]
    c, backend = chat({"falsification/2/1/candidates": cand_response("P1"),
                       "falsification/4/1/candidates": cand_response("P9")})
    found, _ = generate_candidates(pairs, LIN, TOPIC, c, 1)
    assert [x.key_factor for x in found] == ["P1"]
    assert backend.calls == ["falsification/2/1/candidates"]


def test_candidates_from_several_pairs():
    pairs = screen(LIN, {"quality_val": 0.15})
    c, _ = chat({"falsification/2/1/candidates": cand_response("P1"),
                 "falsification/4/1/candidates": cand_response("P9")})
    found, _ = generate_candidates(pairs, LIN, TOPIC, c, 3)
    assert [(x.id, x.pair.after[0]) for x in found] == [("c1", 2), ("c2", 4)]


def test_no_pairs_is_an_error():
    with pytest.raises(ValueError):
        generate_candidates([], LIN, TOPIC, chat({})[0], 2)


def test_unparseable_candidates_give_warning():
    pairs = screen(LIN[:3], {"quality_val": 0.15})
    found, warnings = generate_candidates(pairs, LIN[:3], TOPIC, chat({"falsification/*": "nope"})[0], 2)
    assert found == [] and warnings


# -- ablation plans ------------------------------------------------------------------

PRINCIPLES13 = [f"[P{k}] principle {k}" for k in range(1, 14)]


def plan_lineage(d):
    return [turn(0, {"quality_val": 0.5}), turn(1, {"quality_val": 0.8}, d)]


def candidate(*elements, direction="positive"):
    pair = FlaggedPair((0, 1), (1, 1), {"quality_val": 0.3}, 0.3)
    return DiscoveryCandidate("c1", "factor", tuple(elements), direction, "", pair)


def plans_response(*plans, baseline=1):
    return json.dumps({"baseline_turn": baseline, "plans": list(plans)})


def test_removes_tagged_principles():
    d = doc(PRINCIPLES13, 5)
    cand = candidate("principles:[P8]", "principles:[P12]", "principles:[P13]")
    c, _ = chat({"falsification/1/0/plan": plans_response({"plan": "drop", "ablate": list(cand.elements)})})
    plans, warnings = plan_ablations(cand, 1, plan_lineage(d), TRIVIAL, TOPIC, c, REG, 2, 2)
    assert len(plans) == 1 and warnings == []
    assert len(plans[0].ablated_dsl.params["principles"]) == 10
    assert plans[0].baseline_turn == (1, 1)


def test_vacuous_factor_gives_no_plans_and_no_call():
    c, backend = chat({})
    plans, warnings = plan_ablations(candidate("principles:[P99]"), 1, plan_lineage(doc(PRINCIPLES13, 5)),
                                     TRIVIAL, TOPIC, c, REG, 2, 2)
    assert plans == [] and warnings and backend.calls == []


def test_plans_truncated_to_limit():
    d = doc(PRINCIPLES13, 5)
    cand = candidate("principles:[P1]", "principles:[P2]")
    scen = {"falsification/1/0/plan": plans_response(
        {"plan": "a", "ablate": ["principles:[P1]"]},
        {"plan": "b", "ablate": ["principles:[P2]"]},
        {"plan": "c", "ablate": ["principles:[P1]", "principles:[P2]"]})}
    plans, warnings = plan_ablations(cand, 1, plan_lineage(d), TRIVIAL, TOPIC, chat(scen)[0], REG, 2, 2)
    assert [p.plan for p in plans] == ["a", "b"]
    assert any("keeping the first 2" in w for w in warnings)


def test_invalid_ablation_dropped_with_diagnostic():
    d = doc(["[P1] a", "[P2] b"], 2)
    scen = {"falsification/1/0/plan": plans_response({"plan": "drop", "ablate": ["principles:[P1]"]})}
    plans, warnings = plan_ablations(candidate("principles:[P1]"), 1, plan_lineage(d), TRIVIAL, TOPIC,
                                     chat(scen)[0], REG, 2, 2)
    assert plans == [] and "threshold" in warnings[0]


def test_foreign_element_rejected():
    d = doc(PRINCIPLES13, 5)
    scen = {"falsification/1/0/plan": plans_response({"plan": "drop", "ablate": ["principles:[P2]"]})}
    plans, warnings = plan_ablations(candidate("principles:[P1]"), 1, plan_lineage(d), TRIVIAL, TOPIC,
                                     chat(scen)[0], REG, 2, 2)
    assert plans == [] and warnings


def test_set_only_on_tagged_parameters():
    d = doc(PRINCIPLES13, 5)
    scen = {"falsification/1/0/plan": plans_response({"plan": "loosen", "set": {"threshold": 1}})}
    plans, _ = plan_ablations(candidate("principles:[P1]"), 1, plan_lineage(d), TRIVIAL, TOPIC,
                              chat(scen)[0], REG, 2, 2)
    assert plans == []
    plans, _ = plan_ablations(candidate("threshold"), 1, plan_lineage(d), TRIVIAL, TOPIC, chat(scen)[0], REG, 2, 2)
    assert plans[0].ablated_dsl.params["threshold"] == 1


def test_unknown_baseline_turn():
    d = doc(PRINCIPLES13, 5)
    scen = {"falsification/1/0/plan": plans_response({"plan": "x", "ablate": ["principles:[P1]"]}, baseline=7)}
    plans, warnings = plan_ablations(candidate("principles:[P1]"), 1, plan_lineage(d), TRIVIAL, TOPIC,
                                     chat(scen)[0], REG, 2, 2)
    assert plans == [] and "baseline" in warnings[0]


@settings(max_examples=200)
@given(st.lists(st.integers(1, 9), min_size=1, max_size=8, unique=True), st.integers(1, 9))
def test_ablation_touches_only_tagged_elements(ids, tagged):
    params = {"principles": [f"[P{k}] text" for k in ids], "threshold": 1}
    out = ablate_params(params, [f"principles:[P{tagged}]"])
    assert out["threshold"] == 1
    assert out["principles"] == [p for p in params["principles"] if f"[P{tagged}]" not in p]
    assert not touches(out, f"principles:[P{tagged}]")


# -- trials and verdicts -------------------------------------------------------------

def test_trials_use_distinct_seeds_and_persist_each_run():
    d = doc(["[P1] a", "[P4] b"], 1)
    scen = {"falsification/1/0/plan": plans_response({"plan": "drop", "ablate": ["principles:[P1]"]})}
    plans, _ = plan_ablations(candidate("principles:[P1]"), 1, plan_lineage(d), TRIVIAL, TOPIC,
                              chat(scen)[0], REG, 2, 3)
    out = run_trials(plans[0], ENV, REG, 11)
    assert len(out.records) == 6 and len(out.ablation) == 3 and len(out.baseline) == 3
    assert len({r["seed"] for r in out.records}) == 6
    assert out == run_trials(plans[0], ENV, REG, 11, parallelism=1)


def test_gate_direction():
    low, high = [1.0, 1.1, 0.9], [2.0, 2.1, 1.9]
    assert gate(1, low, high, "positive").p < 0.05
    assert gate(1, low, high, "negative").p_opposite < 0.05
    assert not gate(1, [1.0], high, "positive").usable


def test_decision_rule():
    ok = gate(1, [1.0, 1.1, 0.9], [2.0, 2.1, 1.9], "positive")
    weak = gate(2, [1.0, 2.0, 3.0], [1.1, 2.1, 2.9], "positive")
    reversed_ = gate(3, [2.0, 2.1, 1.9], [1.0, 1.1, 0.9], "positive")
    assert decide([ok], True) == "verified"
    assert decide([ok], False) == "falsified"
    assert decide([ok], None) == "inconclusive"
    assert decide([ok, weak], True) == "inconclusive"
    assert decide([ok, reversed_], True) == "falsified"
    assert decide([], True) == "inconclusive"


@settings(max_examples=200)
@given(st.lists(st.floats(-1, 1), min_size=2, max_size=4), st.lists(st.floats(-1, 1), min_size=2, max_size=4),
       st.floats(0.0, 5.0), st.floats(0.0, 5.0), st.booleans())
def test_stronger_effect_never_turns_verified_into_falsified(a, b, s1, s2, judge):
    assume(statistics.pvariance(a) + statistics.pvariance(b) > 1e-6)
    lo, hi = sorted((s1, s2))
    weak = decide([gate(1, [x - lo for x in a], b, "positive")], judge)
    strong = decide([gate(1, [x - hi for x in a], b, "positive")], judge)
    assert not (weak == "verified" and strong == "falsified")


def verdict_setup(response):
    c, backend = chat({"falsification/1/0/verdict": response} if response is not None else {})
    g = gate(1, [0.49, 0.50], [0.68, 0.66], "positive")
    return verdict(candidate("principles:[P1]"), 1, [g], [], TOPIC, c), backend


def test_verdict_verified():
    (v, warnings), _ = verdict_setup(json.dumps({"affirmed": True, "discovery": "P1 drives quality"}))
    assert v.status == "verified" and v.discovery == "P1 drives quality" and v.p < 0.05
    assert v.to_dict()["judge"] is True


def test_verdict_judge_unparseable_is_inconclusive():
    (v, warnings), _ = verdict_setup("maybe")
    assert v.status == "inconclusive" and v.judge is None and warnings
    assert v.p is not None


def test_verdict_judge_backend_failure_is_inconclusive():
    (v, warnings), _ = verdict_setup(None)
    assert v.status == "inconclusive" and "judge call failed" in warnings[0]


def test_verdict_without_plans_skips_judge():
    c, backend = chat({})
    v, warnings = verdict(candidate("principles:[P1]"), 1, [], [], TOPIC, c)
    assert v.status == "inconclusive" and backend.calls == []


def test_judged_ablation_table_example():
    # ablation raised the score; the judge denies the factor
    g = gate(1, [7.1625, 6.75], [6.475, 6.5375], "positive")
    assert decide([g], False) == "falsified"
    assert g.p > 0.5


# -- evaluation statistics ---------------------------------------------------------

def test_overall_is_dimension_mean():
    r = FalsificationEvalRecord(2, 1, 1)
    assert r.overall == 4 / 3


def test_eval_rejects_out_of_range():
    with pytest.raises(ValueError):
        FalsificationEvalRecord(3, 0, 0)


def test_aggregate_eval_mean_and_significance():
    scores = [2] * 16 + [1] * 4  # mean 1.80
    recs = [FalsificationEvalRecord(s, s, s) for s in scores]
    stats = aggregate_eval(recs)
    assert stats["importance"].avg == pytest.approx(1.8, abs=1e-12)
    assert stats["importance"].p < 0.05
    assert stats["overall"].avg == pytest.approx(1.8, abs=1e-12)
    assert set(stats["importance"].to_dict()) == {"AVG", "STD", "MIN", "MAX", "p"}


def test_aggregate_eval_at_baseline():
    stats = aggregate_eval([FalsificationEvalRecord(2, 2, 2)] * 3)
    assert stats["importance"].p == 0.5
