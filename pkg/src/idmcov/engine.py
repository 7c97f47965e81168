"""SQLite-backed IDM database: materialization, read-back and rule execution."""
from __future__ import annotations

import os
import sqlite3
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from decimal import Decimal
from pathlib import Path

from .dataset import DbSnapshot
from .errors import IdmcovError, MaterializeError
from .model import IdmSchema, ddl_order, emit_ddl
from .sql import quote_ident

ENV_VAR = "IDMCOV_DB"
MEMORY = ":memory:"

sqlite3.register_adapter(Decimal, float)


def resolve_target(target: str | None) -> str:
    """Connection string from the argument or ``IDMCOV_DB``; ``sqlite:///`` is stripped."""
    target = target or os.environ.get(ENV_VAR)
    if not target:
        raise IdmcovError(f"no database given: pass --db or set {ENV_VAR}")
    if target.startswith("sqlite:///"):
        target = target[len("sqlite:///"):]
    elif target.startswith("sqlite://"):
        target = target[len("sqlite://"):] or MEMORY
    return target


def connect(target: str, *, read_only: bool = False) -> sqlite3.Connection:
    path = resolve_target(target)
    try:
        if read_only and path != MEMORY:
            if not Path(path).exists():
                raise IdmcovError(f"database {path} does not exist")
            uri = Path(path).resolve().as_uri() + "?mode=ro"
            conn = sqlite3.connect(uri, uri=True, check_same_thread=False)
        else:
            conn = sqlite3.connect(path, check_same_thread=False)
    except sqlite3.Error as exc:
        raise IdmcovError(f"cannot open database {path}: {exc}") from None
    # LIKE is case-sensitive in the rule language
    conn.execute("PRAGMA case_sensitive_like = ON")
    return conn


def _user_tables(conn: sqlite3.Connection) -> list[str]:
    rows = conn.execute("SELECT name FROM sqlite_master WHERE type = 'table' "
                        "AND name NOT LIKE 'sqlite_%' ORDER BY name").fetchall()
    return [r[0] for r in rows]


def materialize(schema: IdmSchema, snapshot: DbSnapshot, target: str | sqlite3.Connection, *,
                replace: bool = False) -> sqlite3.Connection:
    """Create the schema's tables and insert every snapshot tuple.

    Returns the open connection (needed for in-memory databases).
    """
    conn = target if isinstance(target, sqlite3.Connection) else connect(target)
    existing = _user_tables(conn)
    if existing and not replace:
        raise MaterializeError(f"database already has tables ({', '.join(existing)}); "
                               "use --replace to rebuild it")
    try:
        for name in existing:
            conn.execute(f"DROP TABLE {quote_ident(name)}")
        for stmt in emit_ddl(schema).splitlines():
            conn.execute(stmt)
        for ent in ddl_order(schema):
            rows = snapshot.rows(ent.name)
            if not rows:
                continue
            cols = [a.name for a in ent.attributes]
            sql = (f"INSERT INTO {quote_ident(ent.name)} "
                   f"({', '.join(quote_ident(c) for c in cols)}) "
                   f"VALUES ({', '.join('?' for _ in cols)})")
            for row in rows:
                try:
                    conn.execute(sql, [row.get(c) for c in cols])
                except sqlite3.Error as exc:
                    raise MaterializeError(f"{ent.name} tuple {row}: {exc}") from None
        conn.commit()
    except sqlite3.Error as exc:
        conn.rollback()
        raise MaterializeError(str(exc)) from None
    except MaterializeError:
        conn.rollback()
        raise
    return conn


def read_snapshot(schema: IdmSchema, conn: sqlite3.Connection) -> DbSnapshot:
    snap = DbSnapshot()
    for ent in ddl_order(schema):
        cols = [a.name for a in ent.attributes]
        cur = conn.execute(f"SELECT {', '.join(quote_ident(c) for c in cols)} "
                           f"FROM {quote_ident(ent.name)}")
        snap.tables[ent.name] = [dict(zip(cols, r)) for r in cur.fetchall()]
    return snap


COVERED = "covered"
UNCOVERED = "uncovered"
ERROR = "error"


@dataclass(frozen=True)
class RuleResult:
    id: str
    status: str
    witness: dict | None = None
    error: str | None = None


def _witness(cursor: sqlite3.Cursor, row) -> dict:
    out: dict = {}
    for desc, value in zip(cursor.description, row):
        name = desc[0]
        key, n = name, 1
        while key in out:
            n += 1
            key = f"{name}_{n}"
        out[key] = value
    return out


def run_rule(conn: sqlite3.Connection, rule_id: str, sql: str) -> RuleResult:
    try:
        cur = conn.execute(sql)
        row = cur.fetchone()
    except sqlite3.Error as exc:
        return RuleResult(rule_id, ERROR, error=str(exc))
    if row is None:
        return RuleResult(rule_id, UNCOVERED)
    return RuleResult(rule_id, COVERED, _witness(cur, row))


def evaluate_coverage(rules, db: str | sqlite3.Connection, *, workers: int = 1
                      ) -> list[RuleResult]:
    """Execute every coverage rule; covered iff it returns at least one row.

    ``rules`` are CoverageRule objects (or anything with ``id`` and ``sql``).
    Results come back ordered by rule id.
    """
    items = [(r.id, r.sql) for r in rules]
    if isinstance(db, sqlite3.Connection):
        db.execute("PRAGMA query_only = ON")
        try:
            results = [run_rule(db, i, s) for i, s in items]
        finally:
            db.execute("PRAGMA query_only = OFF")
    elif workers > 1 and resolve_target(db) != MEMORY:
        def task(item):
            conn = connect(db, read_only=True)
            try:
                return run_rule(conn, *item)
            finally:
                conn.close()
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(task, items))
    else:
        conn = connect(db, read_only=True)
        try:
            results = [run_rule(conn, i, s) for i, s in items]
        finally:
            conn.close()
    return sorted(results, key=lambda r: rule_order_key(r.id))


def rule_order_key(rule_id: str):
    """Sort key for ids like ``Ex3.ConditionFlip.2`` (numeric parts compare as numbers)."""
    return tuple((0, int(p), "") if p.isdigit() else (1, 0, p) for p in rule_id.split("."))
