"""Shared builders for runs over the bundled planted-factor fixture."""

import copy
import json

from labloop.config import RunConfig
from labloop.llm import ScriptedBackend, load_scenario
from labloop.pipeline import build_services, bundled, run_pipeline

FIXTURE_CONFIG = json.loads(bundled("planted.json").read_text())
FIXTURE_SCENARIO = load_scenario(bundled("scenarios", "planted.json"))


def config(**top):
    data = copy.deepcopy(FIXTURE_CONFIG)
    data.update(top)
    return data


def services(run_dir, data=None, scenario=None, **kwargs):
    cfg = RunConfig.from_dict(data or config())
    backend = ScriptedBackend(FIXTURE_SCENARIO if scenario is None else scenario)
    return build_services(cfg, run_dir, backend, **kwargs)


def run(run_dir, data=None, scenario=None, **kwargs):
    svc = services(run_dir, data, scenario, **kwargs)
    return svc, run_pipeline(svc)
