import json

import jsonschema
import pytest

from conftest import GOLDEN, ROOT

SCHEMAS = ROOT / "docs" / "schemas"


def schema(name):
    return json.loads((SCHEMAS / name).read_text(encoding="utf-8"))


@pytest.mark.parametrize("golden", ["mumug_report.json", "mumug_patched_report.json"])
def test_report_schema(golden):
    jsonschema.validate(json.loads((GOLDEN / golden).read_text(encoding="utf-8")), schema("report.schema.json"))


def test_graph_schema():
    jsonschema.validate(json.loads((GOLDEN / "mumug_tfg.json").read_text(encoding="utf-8")), schema("graph.schema.json"))


def test_report_with_timing(mumug, mumug_state, fixture_session):
    from foray.synth import synthesize

    report = synthesize(mumug, mumug_state, session=fixture_session).to_dict()
    jsonschema.validate(report, schema("report.schema.json"))
    assert set(report["timing"]) >= {"wall_s", "solver_s"}

