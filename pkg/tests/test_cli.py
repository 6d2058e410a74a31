import hashlib
import json
from pathlib import Path

import jsonschema
import pytest

from helpers import FIXTURE_SCENARIO, config
from labloop.cli import main
from labloop.report import report_schema


def canonical(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True, allow_nan=False)


def reseal(path, edit):
    """Apply ``edit`` to the decoded events and rewrite the log with fresh checksums."""
    prev = "0" * 16
    out = []
    for line in path.read_text().splitlines():
        ev = json.loads(line)
        edit(ev)
        body = canonical({"seq": ev["seq"], "kind": ev["kind"], "data": ev["data"]})
        ev["checksum"] = hashlib.sha256((prev + body).encode("ascii")).hexdigest()[:16]
        prev = ev["checksum"]
        out.append(canonical(ev))
    path.write_text("\n".join(out) + "\n")


@pytest.fixture(scope="module")
def fixture_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "run"
    assert main(["run", "--config", "planted", "--out", str(out)]) == 0
    return out


def test_run_writes_layout(fixture_run):
    names = {p.name for p in fixture_run.iterdir()}
    assert names == {"manifest.json", "history.jsonl", "discovery_report.json", "cost_report.json", "report.txt"}
    manifest = json.loads((fixture_run / "manifest.json").read_text())
    assert manifest["status"] == "completed"
    assert manifest["grammar_version"] == 1 and manifest["seeds"] == {"run": 7}
    assert manifest["run_digest"] == hashlib.sha256((fixture_run / "history.jsonl").read_bytes()).hexdigest()


def test_report_names_verified_factor(fixture_run):
    disc = json.loads((fixture_run / "discovery_report.json").read_text())
    status = {c["elements"][0]: c["verdict"]["status"] for c in disc["candidates"]}
    assert status == {"principles:[P1]": "verified", "principles:[P3]": "falsified"}


def test_report_text_has_cost_rows(fixture_run, capsys):
    assert main(["report", str(fixture_run)]) == 0
    text = capsys.readouterr().out
    assert "Pre-Falsification (per iter.)" in text
    assert "Falsification (per disc. cand.)" in text
    assert "verified" in text
    assert text == (fixture_run / "report.txt").read_text()


def test_report_json_matches_schema(fixture_run, capsys):
    assert main(["report", str(fixture_run), "--format", "json"]) == 0
    out = capsys.readouterr().out
    data = json.loads(out)
    jsonschema.validate(data, report_schema())
    assert out.strip() == canonical(data)


def test_report_is_deterministic(fixture_run, capsys):
    main(["report", str(fixture_run), "--format", "json"])
    a = capsys.readouterr().out
    main(["report", str(fixture_run), "--format", "json"])
    assert capsys.readouterr().out == a


def test_replay_clean_run(fixture_run, capsys):
    assert main(["replay", str(fixture_run)]) == 0
    assert "verified" in capsys.readouterr().out


def test_replay_detects_edited_score(fixture_run, tmp_path, capsys):
    run = tmp_path / "edited"
    run.mkdir()
    for p in fixture_run.iterdir():
        (run / p.name).write_bytes(p.read_bytes())
    target = {}

    def edit(ev):
        if ev["kind"] == "turn" and ev["data"]["iteration"] == 2 and ev["data"]["thread"] == 3:
            ev["data"]["result"]["benchmark_scores"]["quality_val"]["value"] = 0.99
            target["seq"] = ev["seq"]

    reseal(run / "history.jsonl", edit)
    manifest = json.loads((run / "manifest.json").read_text())
    manifest["run_digest"] = hashlib.sha256((run / "history.jsonl").read_bytes()).hexdigest()
    (run / "manifest.json").write_text(canonical(manifest))
    assert main(["replay", str(run)]) == 6
    out = capsys.readouterr().out
    assert "selection.rerank_inputs.3.quality_val" in out


def test_replay_detects_byte_flip(fixture_run, tmp_path, capsys):
    run = tmp_path / "flipped"
    run.mkdir()
    for p in fixture_run.iterdir():
        (run / p.name).write_bytes(p.read_bytes())
    raw = bytearray((run / "history.jsonl").read_bytes())
    raw[len(raw) // 2] ^= 0x01
    (run / "history.jsonl").write_bytes(bytes(raw))
    assert main(["replay", str(run)]) == 6


def test_replay_missing_log(tmp_path):
    assert main(["replay", str(tmp_path / "none")]) == 7
    assert main(["report", str(tmp_path / "none")]) == 7


def test_partial_run_report_not_reached(tmp_path, capsys):
    scen = tmp_path / "partial.json"
    scen.write_text(json.dumps({k: v for k, v in FIXTURE_SCENARIO.items() if not k.startswith("proposal/3/")}))
    out = tmp_path / "run"
    assert main(["run", "--config", "planted", "--backend", f"scripted:{scen}", "--out", str(out)]) == 3
    capsys.readouterr()
    assert main(["report", str(out)]) == 0
    text = capsys.readouterr().out
    assert "Falsification: not reached" in text
    assert main(["replay", str(out)]) == 0


def test_resume_completes_partial_run(tmp_path, capsys):
    scen = tmp_path / "partial.json"
    scen.write_text(json.dumps({k: v for k, v in FIXTURE_SCENARIO.items() if not k.startswith("proposal/3/")}))
    out = tmp_path / "run"
    main(["run", "--config", "planted", "--backend", f"scripted:{scen}", "--out", str(out)])
    assert main(["run", "--config", "planted", "--out", str(out), "--resume"]) == 0
    assert main(["replay", str(out)]) == 0


def test_existing_run_needs_resume(fixture_run):
    assert main(["run", "--config", "planted", "--out", str(fixture_run)]) == 2


def test_unknown_topic_is_config_error(tmp_path, capsys):
    assert main(["run", "--config", "planted", "--set", "topic=astrology", "--out", str(tmp_path / "r")]) == 2
    assert "astrology" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["run", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "r")]) == 2


def test_bad_environment_exit_code(tmp_path):
    assert main(["run", "--config", "planted", "--set", "environment.driver=P99",
                 "--out", str(tmp_path / "r")]) == 4


def test_aborted_run_exit_code(tmp_path):
    cfg = config()
    cfg["trivial_method"] = {"topic_id": "data_engineering", "paradigm": "principled_filtering",
                             "params": {"principles": ["nothing"], "threshold": 1}}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "r")]) == 5
    assert main(["replay", str(tmp_path / "r")]) == 0


def test_degenerate_minimal_run(tmp_path, capsys):
    assert main(["run", "--config", "planted", "--set", "M=1", "--set", "N=1", "--set", "N_s=1",
                 "--out", str(tmp_path / "r"), "--format", "json"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert [(t["iteration"], t["thread"]) for t in data["trajectory"]] == [(0, 1), (1, 1)]


def test_seed_flag_recorded(tmp_path):
    assert main(["run", "--config", "planted", "--seed", "11", "--set", "M=1", "--out", str(tmp_path / "r")]) == 0
    assert json.loads((tmp_path / "r" / "manifest.json").read_text())["seeds"] == {"run": 11}


def test_replay_frozen_run_from_earlier_version(capsys):
    # a run recorded by an earlier build must keep replaying cleanly
    frozen = Path(__file__).parent / "data" / "frozen_run"
    assert main(["replay", str(frozen)]) == 0
    assert "verified" in capsys.readouterr().out
