import random
import sqlite3

import pytest

import toys
from idmcov.dataset import DbSnapshot
from idmcov.engine import (
    COVERED, ENV_VAR, ERROR, UNCOVERED, connect, evaluate_coverage, materialize, read_snapshot,
    resolve_target, rule_order_key,
)
from idmcov.errors import IdmcovError, MaterializeError
from idmcov.mcdc import ALL_TRUE, BOUNDARY, CONDITION_FLIP, NULL_VALUE, derive_all
from idmcov.reference import reference_covers

MONOTONE = {ALL_TRUE, CONDITION_FLIP, NULL_VALUE, BOUNDARY}


class FakeRule:
    def __init__(self, id, sql):
        self.id, self.sql = id, sql


@pytest.fixture()
def fixture_db(schema, snapshot):
    conn = materialize(schema, snapshot, connect(":memory:"))
    yield conn
    conn.close()


def test_round_trip(schema, snapshot, fixture_db):
    assert read_snapshot(schema, fixture_db).canonical() == snapshot.canonical()


def test_empty_snapshot_creates_tables(schema):
    conn = materialize(schema, DbSnapshot(), connect(":memory:"))
    tables = {r[0] for r in conn.execute("SELECT name FROM sqlite_master WHERE type='table'")}
    assert len(tables) == 7
    assert read_snapshot(schema, conn).total() == 0


def test_existing_tables_need_replace(schema, snapshot, tmp_path):
    db = str(tmp_path / "idm.db")
    materialize(schema, snapshot, db).close()
    with pytest.raises(MaterializeError, match="--replace"):
        materialize(schema, snapshot, db)
    conn = materialize(schema, DbSnapshot(), db, replace=True)
    assert read_snapshot(schema, conn).total() == 0


def test_duplicate_key_names_the_tuple(schema):
    snap = DbSnapshot({"Item": [{"i_id": 1, "i_name": "a", "i_price": None, "i_data": None},
                                {"i_id": 1, "i_name": "b", "i_price": None, "i_data": None}]})
    with pytest.raises(MaterializeError) as err:
        materialize(schema, snap, connect(":memory:"))
    assert "Item tuple" in str(err.value) and "'i_name': 'b'" in str(err.value)


def test_empty_database_covers_nothing(schema, coverage):
    conn = materialize(schema, DbSnapshot(), connect(":memory:"))
    results = evaluate_coverage(coverage, conn)
    assert len(results) == len(coverage)
    assert {r.status for r in results} == {UNCOVERED}


def test_fixture_dataset_covers_everything(coverage, fixture_db):
    results = evaluate_coverage(coverage, fixture_db)
    assert all(r.status == COVERED for r in results)
    assert all(isinstance(r.witness, dict) and r.witness for r in results)


def test_results_are_ordered_by_id(coverage, fixture_db):
    ids = [r.id for r in evaluate_coverage(list(reversed(coverage)), fixture_db)]
    assert ids == sorted(ids, key=rule_order_key)
    assert ids.index("Ex1.AllTrue.1") < ids.index("Ex1.ConditionFlip.1")


def test_rule_order_key_is_numeric():
    ids = ["R.ConditionFlip.10", "R.ConditionFlip.2", "R.AllTrue.1"]
    assert sorted(ids, key=rule_order_key) == [
        "R.AllTrue.1", "R.ConditionFlip.2", "R.ConditionFlip.10"]


def test_errors_do_not_abort(fixture_db):
    results = evaluate_coverage([FakeRule("a.1", "SELECT * FROM Nope"),
                                 FakeRule("a.2", "SELECT * FROM Item")], fixture_db)
    assert [r.status for r in results] == [ERROR, COVERED]
    assert "no such table" in results[0].error


def test_rules_run_read_only(fixture_db):
    (res,) = evaluate_coverage([FakeRule("w.1", "DELETE FROM Item")], fixture_db)
    assert res.status == ERROR
    assert fixture_db.execute("SELECT COUNT(*) FROM Item").fetchone()[0] == 5


def test_file_database_with_workers(schema, snapshot, coverage, tmp_path):
    db = str(tmp_path / "idm.db")
    materialize(schema, snapshot, db).close()
    serial = evaluate_coverage(coverage, db)
    parallel = evaluate_coverage(coverage, db, workers=4)
    assert serial == parallel
    assert all(r.status == COVERED for r in serial)


def test_read_only_connection_refuses_writes(schema, tmp_path):
    db = str(tmp_path / "idm.db")
    materialize(schema, DbSnapshot(), db).close()
    conn = connect(db, read_only=True)
    with pytest.raises(sqlite3.OperationalError):
        conn.execute("INSERT INTO TestCase (tc_id) VALUES (1)")


def test_idempotent_evaluation(coverage, fixture_db):
    assert evaluate_coverage(coverage, fixture_db) == evaluate_coverage(coverage, fixture_db)


def test_duplicate_column_names_in_witness(fixture_db):
    (res,) = evaluate_coverage([FakeRule("d.1", "SELECT 1 AS x, 2 AS x")], fixture_db)
    assert res.witness == {"x": 1, "x_2": 2}


def test_resolve_target(monkeypatch):
    monkeypatch.delenv(ENV_VAR, raising=False)
    with pytest.raises(IdmcovError, match=ENV_VAR):
        resolve_target(None)
    monkeypatch.setenv(ENV_VAR, "sqlite:///tmp/x.db")
    assert resolve_target(None) == "tmp/x.db"
    assert resolve_target("sqlite://") == ":memory:"
    assert resolve_target("plain.db") == "plain.db"


def test_like_is_case_sensitive(schema):
    snap = DbSnapshot({"Item": [{"i_id": 1, "i_name": None, "i_price": None,
                                 "i_data": "original"}]})
    conn = materialize(schema, snap, connect(":memory:"))
    assert conn.execute("SELECT * FROM Item WHERE i_data LIKE '%ORIGINAL%'").fetchall() == []


def _subset(rng, snap):
    return DbSnapshot({name: [r for r in rows if rng.random() < 0.8]
                       for name, rows in snap.tables.items()})


def test_restricted_monotonicity():
    rng = random.Random(17)
    checked = 0
    for trial in range(150):
        schema, _, rules, _ = toys.random_rules(rng, 3, prefix=f"M{trial}_")
        cov = [c for c in derive_all(rules, schema)
               if c.kind in MONOTONE and " LEFT JOIN " not in c.sql and "GROUP BY" not in c.sql]
        big = toys.random_snapshot(rng)
        small = _subset(rng, big)
        before = evaluate_coverage(cov, materialize(schema, small, connect(":memory:")))
        after = {r.id: r.status for r in
                 evaluate_coverage(cov, materialize(schema, big, connect(":memory:")))}
        for r in before:
            if r.status == COVERED:
                assert after[r.id] == COVERED
                checked += 1
    assert checked > 20


def _restrict(schema, snap, witness):
    """Keep only the tuples named by the witness's key values."""
    tables = {}
    for name, rows in snap.tables.items():
        key = schema.entity(name).primary_key
        if all(k in witness and witness[k] is not None for k in key):
            rows = [r for r in rows if all(r[k] == witness[k] for k in key)]
        tables[name] = rows
    return DbSnapshot(tables)


def test_witness_rows_replay_through_reference(schema, snapshot, coverage, fixture_db):
    rows_rules = [c for c in coverage if "GROUP BY" not in c.sql]
    results = {r.id: r for r in evaluate_coverage(rows_rules, fixture_db)}
    for rule in rows_rules:
        witness = results[rule.id].witness
        assert reference_covers(rule, _restrict(schema, snapshot, witness), schema)


def test_random_witnesses_replay():
    rng = random.Random(23)
    checked = 0
    for trial in range(40):
        schema, _, rules, _ = toys.random_rules(rng, 3, prefix=f"W{trial}_")
        cov = [c for c in derive_all(rules, schema) if "GROUP BY" not in c.sql]
        snap = toys.random_snapshot(rng)
        conn = materialize(schema, snap, connect(":memory:"))
        for res, rule in zip(evaluate_coverage(cov, conn), sorted(
                cov, key=lambda c: rule_order_key(c.id))):
            if res.status == COVERED:
                assert reference_covers(rule, _restrict(schema, snap, res.witness), schema)
                checked += 1
    assert checked > 20
