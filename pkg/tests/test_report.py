import dataclasses
import json

import pytest

from idmcov.dataset import DbSnapshot
from idmcov.engine import COVERED, connect, evaluate_coverage, materialize
from idmcov.lang import RULE_KINDS
from idmcov.report import build_report, percent


@pytest.fixture()
def fixture_report(schema, snapshot, rules, coverage):
    conn = materialize(schema, snapshot, connect(":memory:"))
    return build_report(evaluate_coverage(coverage, conn), coverage, rules, schema, snapshot)


@pytest.mark.parametrize("covered, total, want", [
    (0, 0, "n/a"), (0, 3, 0.0), (1, 3, 33.3), (2, 3, 66.7), (1, 8, 12.5), (1, 16, 6.3),
    (20, 20, 100.0),
])
def test_percent_rounds_half_up(covered, total, want):
    assert percent(covered, total) == want


def test_fixture_report_totals(fixture_report):
    (a,) = fixture_report.assignments
    assert a.name == "NewOrder"
    assert (a.business_rules, a.coverage_rules, a.covered, a.percent) == (5, 20, 20, 100.0)
    assert a.rules_by_kind == {k: 1 for k in RULE_KINDS}
    assert a.tuples == {"testcase": 3, "ui": 26, "database": 15}
    assert a.test_cases == 3
    assert fixture_report.complete


def test_json_shape(fixture_report):
    data = json.loads(fixture_report.to_json())
    (a,) = data["assignments"]
    assert set(a) == {"name", "business_rules", "rules_by_kind", "coverage_rules", "covered",
                      "percent", "tuples", "test_cases", "rules"}
    first = a["rules"][0]
    assert set(first) == {"id", "class", "description", "status", "witness"}
    assert first["id"] == "Ex1.AllTrue.1" and first["status"] == COVERED
    assert all(isinstance(v, (int, float, str, type(None))) for r in a["rules"]
               for v in r["witness"].values())


def test_text_table(fixture_report):
    text = fixture_report.to_text()
    header, row = text.splitlines()[:2]
    assert header.split()[:2] == ["Assignment", "Business"]
    assert row.split() == ["NewOrder", "5", "20", "20", "100.0", "3/26/15", "3"]
    assert "Ex3.JoinViolation.1  covered" in text


def test_empty_database_report(schema, rules, coverage):
    conn = materialize(schema, DbSnapshot(), connect(":memory:"))
    report = build_report(evaluate_coverage(coverage, conn), coverage, rules, schema)
    (a,) = report.assignments
    assert (a.covered, a.percent, a.test_cases) == (0, 0.0, 0)
    assert not report.complete


def test_no_rules_still_lists_the_assignment(schema):
    report = build_report([], [], [], schema)
    (a,) = report.assignments
    assert (a.name, a.coverage_rules, a.percent) == ("NewOrder", 0, "n/a")
    assert report.complete
    assert "n/a" in report.to_text()


def test_error_rules_appear_with_message(schema, rules, coverage, snapshot):
    conn = materialize(schema, snapshot, connect(":memory:"))
    results = evaluate_coverage(coverage, conn)
    results[0] = dataclasses.replace(results[0], status="error", witness=None, error="boom")
    report = build_report(results, coverage, rules, schema, snapshot)
    line = report.to_dict()["assignments"][0]["rules"][0]
    assert (line["status"], line["error"]) == ("error", "boom")
    assert not report.complete
