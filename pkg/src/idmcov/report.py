"""Coverage reports: per-assignment aggregates as JSON and as a plain table."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from decimal import ROUND_HALF_UP, Decimal

from .dataset import DbSnapshot
from .engine import COVERED, RuleResult, rule_order_key
from .lang.ast import RULE_KINDS
from .lang.binder import classify_rule
from .model import TESTCASE, IdmSchema

DEFAULT_ASSIGNMENT = "default"


def percent(covered: int, total: int):
    """covered/total as a percentage rounded half-up to one decimal, or "n/a"."""
    if total == 0:
        return "n/a"
    value = (Decimal(covered) * 100 / Decimal(total)).quantize(Decimal("0.1"), ROUND_HALF_UP)
    return float(value)


@dataclass
class RuleLine:
    id: str
    rule: str
    req_class: str
    description: str
    status: str
    witness: dict | None = None
    error: str | None = None


@dataclass
class AssignmentReport:
    name: str
    business_rules: int
    rules_by_kind: dict[str, int]
    coverage_rules: int
    covered: int
    percent: object
    tuples: dict[str, int]
    test_cases: int
    rules: list[RuleLine] = field(default_factory=list)


@dataclass
class CoverageReport:
    assignments: list[AssignmentReport]

    @property
    def complete(self) -> bool:
        return all(a.covered == a.coverage_rules for a in self.assignments)

    def to_dict(self) -> dict:
        out = []
        for a in self.assignments:
            d = asdict(a)
            d["rules"] = [{"id": r.id, "class": r.req_class, "description": r.description,
                           "status": r.status, "witness": _jsonable(r.witness),
                           **({"error": r.error} if r.error else {})} for r in a.rules]
            out.append(d)
        return {"assignments": out}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_text(self) -> str:
        header = ("Assignment", "Business Rules", "Coverage Rules", "Covered", "%",
                  "Tuples TC/UI/DB", "Test Cases")
        rows = [header]
        for a in self.assignments:
            t = a.tuples
            rows.append((a.name, str(a.business_rules), str(a.coverage_rules), str(a.covered),
                         _pct(a.percent), f"{t['testcase']}/{t['ui']}/{t['database']}",
                         str(a.test_cases)))
        widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
        lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
        for a in self.assignments:
            if not a.rules:
                continue
            lines.append("")
            lines.append(f"{a.name}:")
            idw = max(len(r.id) for r in a.rules)
            stw = max(len(r.status) for r in a.rules)
            for r in a.rules:
                lines.append(f"  {r.id.ljust(idw)}  {r.status.ljust(stw)}  {r.description}")
        return "\n".join(lines) + "\n"


def _pct(p) -> str:
    return p if isinstance(p, str) else f"{p:.1f}"


def _jsonable(value):
    if value is None:
        return None
    out = {}
    for k, v in value.items():
        if isinstance(v, Decimal):
            v = float(v)
        elif isinstance(v, bytes):
            v = v.hex()
        out[k] = v
    return out


def _assignment_tuples(schema: IdmSchema, snapshot: DbSnapshot, name: str
                       ) -> tuple[dict[str, int], int]:
    tally = snapshot.tally(schema)
    assignment = schema.assignment(name)
    if assignment is None:
        return tally, tally["testcase"]
    ui_entities = schema.ui_entities_of(assignment)
    ui = sum(len(snapshot.rows(e.name)) for e in ui_entities)
    root = schema.entity(assignment.root)
    tc_link = None
    for rel in schema.relationships:
        if rel.declared_as_fk and rel.from_entity.lower() == root.name.lower() \
                and schema.level_of(rel.to_entity) == TESTCASE:
            tc_link = rel
    if tc_link is None:
        cases = tally["testcase"]
    else:
        ids = {tuple(r.get(f) for f, _ in tc_link.join_pairs) for r in snapshot.rows(root.name)}
        tc = schema.entity(tc_link.to_entity)
        cases = sum(1 for r in snapshot.rows(tc.name)
                    if tuple(r.get(t) for _, t in tc_link.join_pairs) in ids)
    return {"testcase": cases, "ui": ui, "database": tally["database"]}, cases


def build_report(results: list[RuleResult], coverage_rules, business_rules,
                 schema: IdmSchema, snapshot: DbSnapshot | None = None) -> CoverageReport:
    """Aggregate rule results per test assignment.

    Tuple counts per assignment cover its test cases and UI entities; the
    Database level is shared by every assignment and reported in full.
    """
    snapshot = snapshot or DbSnapshot()
    by_id = {r.id: r for r in results}
    names: list[str] = [a.name for a in schema.assignments]
    for br in business_rules:
        n = _assignment_of(br, schema)
        if n not in names:
            names.append(n)
    out = []
    for name in names or [DEFAULT_ASSIGNMENT]:
        brs = [b for b in business_rules if _assignment_of(b, schema) == name]
        kinds = {k: 0 for k in RULE_KINDS}
        for b in brs:
            kinds[classify_rule(b)] += 1
        src = {b.name for b in brs}
        lines = []
        for cr in coverage_rules:
            if cr.source_rule.name not in src:
                continue
            res = by_id.get(cr.id)
            status = res.status if res else "uncovered"
            lines.append(RuleLine(cr.id, cr.source_rule.name, cr.req_class, cr.description,
                                  status, res.witness if res else None,
                                  res.error if res else None))
        lines.sort(key=lambda r: rule_order_key(r.id))
        covered = sum(1 for r in lines if r.status == COVERED)
        tuples, cases = _assignment_tuples(schema, snapshot, name)
        out.append(AssignmentReport(name, len(brs), kinds, len(lines), covered,
                                    percent(covered, len(lines)), tuples, cases, lines))
    return CoverageReport(out)


def _single_assignment(schema: IdmSchema) -> str:
    if len(schema.assignments) == 1:
        return schema.assignments[0].name
    return DEFAULT_ASSIGNMENT


def _assignment_of(rule, schema: IdmSchema) -> str:
    if rule.assignment is None:
        return _single_assignment(schema)
    found = schema.assignment(rule.assignment)
    return found.name if found else rule.assignment
