"""Minimal SQL text model: conditions with static facts, join chains, queries.

Everything emitted stays inside a conservative subset (INNER/LEFT JOIN,
GROUP BY, HAVING, COUNT, SUM, CASE, LIKE, IS NULL, plain comparisons) so the
same text runs on any embedded engine.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from decimal import Decimal

RESERVED = frozenset("""
add all alter analyze and any as asc between by case cast check collate column commit
constraint create cross current date default delete desc distinct drop else end escape
except exists foreign from full glob group having if in index inner insert intersect into
is join key left like limit match natural not null of offset on or order outer pragma
primary raise references regexp replace right rollback row rows select set table then
time timestamp to transaction trigger union unique update user using values view when
where with
""".split())

_PLAIN = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


def quote_ident(name: str) -> str:
    if _PLAIN.match(name) and name.lower() not in RESERVED:
        return name
    return '"' + name.replace('"', '""') + '"'


def column(alias: str, attribute: str) -> str:
    return f"{quote_ident(alias)}.{quote_ident(attribute)}"


def literal(value) -> str:
    if value is None:
        return "NULL"
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (int, Decimal)):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    return "'" + str(value).replace("'", "''") + "'"


@dataclass(frozen=True)
class Cond:
    """One top-level conjunct.

    ``facts`` are simple consequences of the conjunct being TRUE, used for
    static unsatisfiability checks: ("cmp", col, op, value), ("null", col),
    ("notnull", col) or ("const", bool).
    """

    sql: str
    facts: tuple = ()

    def __str__(self) -> str:
        return self.sql


@dataclass(frozen=True)
class Join:
    kind: str  # FROM | INNER | LEFT
    entity: str
    alias: str
    on: tuple[Cond, ...] = ()

    def render(self) -> str:
        table = quote_ident(self.entity)
        if self.alias != self.entity:
            table += f" AS {quote_ident(self.alias)}"
        if self.kind == "FROM":
            return f"FROM {table}"
        word = "INNER JOIN" if self.kind == "INNER" else "LEFT JOIN"
        return f"{word} {table} ON ({' AND '.join(c.sql for c in self.on)})"


@dataclass(frozen=True)
class Query:
    joins: tuple[Join, ...]
    where: tuple[Cond, ...] = ()
    group_by: tuple[str, ...] = ()
    having: tuple[Cond, ...] = ()
    select: tuple[str, ...] = field(default=())

    @property
    def conjuncts(self) -> tuple[Cond, ...]:
        return self.where + self.having

    def render(self) -> str:
        parts = ["SELECT " + (", ".join(self.select) if self.select else "*")]
        parts.extend(j.render() for j in self.joins)
        if self.where:
            parts.append("WHERE " + " AND ".join(c.sql for c in self.where))
        if self.group_by:
            parts.append("GROUP BY " + ", ".join(self.group_by))
        if self.having:
            parts.append("HAVING " + " AND ".join(c.sql for c in self.having))
        return " ".join(parts)

    def __str__(self) -> str:
        return self.render()


def normalize(sql: str) -> str:
    """Whitespace- and case-canonical form of ``sql`` (string literals untouched)."""
    out = []
    for i, chunk in enumerate(re.split(r"('(?:[^']|'')*')", sql)):
        if i % 2:
            out.append(chunk)
        else:
            chunk = re.sub(r"\s+", " ", chunk.lower())
            chunk = re.sub(r"\s*([(),=<>])\s*", r"\1", chunk)
            out.append(chunk)
    return "".join(out).strip()
