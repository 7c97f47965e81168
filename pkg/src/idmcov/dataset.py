"""Test-input datasets: one ``<Entity>.csv`` per populated entity.

An unquoted empty field is NULL; a quoted empty field ("") is empty text.
The stdlib csv module cannot tell the two apart on Python 3.10, hence the
small reader below.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from datetime import datetime
from decimal import Decimal, InvalidOperation
from pathlib import Path

from .errors import DatasetError
from .model import DATABASE, TESTCASE, UI, AttributeDef, EntityDef, IdmSchema, ddl_order


@dataclass(frozen=True)
class Field:
    text: str
    quoted: bool

    @property
    def is_null(self) -> bool:
        return not self.quoted and self.text == ""


def read_csv(text: str, source: str = "<csv>") -> list[tuple[int, list[Field]]]:
    """(line number, fields) per record; quoted fields may span lines."""
    records: list[tuple[int, list[Field]]] = []
    i, n, line = 0, len(text), 1
    while i < n:
        start_line = line
        fields: list[Field] = []
        while True:
            if i < n and text[i] == '"':
                i += 1
                buf = []
                while True:
                    if i >= n:
                        raise DatasetError(f"{source}:{start_line}: unterminated quoted field")
                    ch = text[i]
                    if ch == '"':
                        if i + 1 < n and text[i + 1] == '"':
                            buf.append('"')
                            i += 2
                            continue
                        i += 1
                        break
                    if ch == "\n":
                        line += 1
                    buf.append(ch)
                    i += 1
                if i < n and text[i] not in ",\r\n":
                    raise DatasetError(f"{source}:{line}: text after closing quote")
                fields.append(Field("".join(buf), True))
            else:
                j = i
                while j < n and text[j] not in ",\r\n":
                    j += 1
                fields.append(Field(text[i:j], False))
                i = j
            if i < n and text[i] == ",":
                i += 1
                continue
            break
        if i < n and text[i] == "\r":
            i += 1
        if i < n and text[i] == "\n":
            i += 1
            line += 1
        if len(fields) == 1 and fields[0].is_null:
            continue  # blank line
        records.append((start_line, fields))
    return records


@dataclass
class DbSnapshot:
    """Rows per entity, keyed by the entity's declared name, in load order."""

    tables: dict[str, list[dict]] = field(default_factory=dict)

    def rows(self, entity: str) -> list[dict]:
        for name, rows in self.tables.items():
            if name.lower() == entity.lower():
                return rows
        return []

    def total(self) -> int:
        return sum(len(r) for r in self.tables.values())

    def tally(self, schema: IdmSchema) -> dict[str, int]:
        out = {"testcase": 0, "ui": 0, "database": 0}
        key = {TESTCASE: "testcase", UI: "ui", DATABASE: "database"}
        for name, rows in self.tables.items():
            level = schema.level_of(name)
            if level in key:
                out[key[level]] += len(rows)
        return out

    def canonical(self) -> dict[str, list[tuple]]:
        """Order-insensitive comparable form (used by round-trip checks)."""
        out = {}
        for name, rows in self.tables.items():
            if rows:
                out[name.lower()] = sorted(
                    (tuple(sorted((k.lower(), _canon(v)) for k, v in r.items())) for r in rows),
                    key=repr)
        return out


def _canon(v):
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, Decimal):
        return float(v)
    return v


_INT = re.compile(r"^[+-]?\d+$")


def coerce(attr: AttributeDef, raw: str):
    """Typed value for ``raw``; raises ValueError with a short reason."""
    kind = attr.kind
    s = raw.strip() if kind != "text" else raw
    if kind == "integer":
        if not _INT.match(s):
            raise ValueError(f"not an integer: {raw!r}")
        return int(s)
    if kind == "decimal":
        try:
            value = Decimal(s)
        except InvalidOperation:
            raise ValueError(f"not a decimal: {raw!r}") from None
        if not value.is_finite():
            raise ValueError(f"not a finite decimal: {raw!r}")
        if attr.scale is not None and -value.as_tuple().exponent > attr.scale:
            raise ValueError(f"more than {attr.scale} decimal places: {raw!r}")
        if attr.precision is not None:
            digits = len(value.quantize(Decimal(1).scaleb(-(attr.scale or 0))).as_tuple().digits)
            if digits > attr.precision:
                raise ValueError(f"more than {attr.precision} digits: {raw!r}")
        return value
    if kind == "boolean":
        low = s.lower()
        if low in ("1", "true", "t", "yes"):
            return 1
        if low in ("0", "false", "f", "no"):
            return 0
        raise ValueError(f"not a boolean: {raw!r}")
    if kind == "datetime":
        try:
            datetime.fromisoformat(s)
        except ValueError:
            raise ValueError(f"not an ISO date/time: {raw!r}") from None
        return s
    if attr.maxlen is not None and len(raw) > attr.maxlen:
        raise ValueError(f"longer than {attr.maxlen} characters")
    return raw


def _load_file(ent: EntityDef, path: Path) -> list[dict]:
    records = read_csv(path.read_text(encoding="utf-8"), str(path))
    if not records:
        return []
    _, header = records[0]
    attrs: list[AttributeDef] = []
    for col, f in enumerate(header, 1):
        attr = ent.attribute(f.text.strip())
        if attr is None:
            raise DatasetError(f"{path}:1:{col}: {ent.name} has no attribute {f.text!r}")
        if attr in attrs:
            raise DatasetError(f"{path}:1:{col}: duplicate column {f.text!r}")
        attrs.append(attr)
    missing = [a.name for a in ent.attributes if a not in attrs and not a.nullable]
    if missing:
        raise DatasetError(f"{path}:1: missing non-nullable columns {', '.join(missing)}")
    rows = []
    for line, fields in records[1:]:
        if len(fields) != len(attrs):
            raise DatasetError(f"{path}:{line}: expected {len(attrs)} fields, got {len(fields)}")
        row = {a.name: None for a in ent.attributes}
        for col, (attr, f) in enumerate(zip(attrs, fields), 1):
            if f.is_null:
                if not attr.nullable:
                    raise DatasetError(f"{path}:{line}:{col}: {ent.name}.{attr.name} "
                                       "must not be null")
                continue
            try:
                row[attr.name] = coerce(attr, f.text)
            except ValueError as exc:
                raise DatasetError(f"{path}:{line}:{col}: {ent.name}.{attr.name}: {exc}") from None
        rows.append(row)
    return rows


def structural_links(schema: IdmSchema):
    """Foreign keys whose references must resolve in every dataset.

    Only links among UI/TestCase entities are enforced; links that touch the
    Database level are what join-violation requirements exercise, so they may
    dangle, and output links (filled in by the application) always may.
    """
    for rel in schema.relationships:
        if not rel.declared_as_fk or rel.output:
            continue
        levels = {schema.level_of(rel.from_entity), schema.level_of(rel.to_entity)}
        if levels <= {UI, TESTCASE}:
            yield rel


def validate_snapshot(schema: IdmSchema, snapshot: DbSnapshot) -> None:
    """Raise DatasetError on key, nullability or structural-reference violations."""
    for name, rows in snapshot.tables.items():
        ent = schema.entity(name)
        if ent is None:
            raise DatasetError(f"unknown entity {name}")
        seen = {}
        for row in rows:
            for a in ent.attributes:
                if row.get(a.name) is None and not a.nullable:
                    raise DatasetError(f"{ent.name} tuple {row}: {a.name} must not be null")
            key = tuple(row.get(k) for k in ent.primary_key)
            if key in seen:
                raise DatasetError(f"{ent.name}: duplicate primary key {key} in tuple {row}")
            seen[key] = row
    for rel in structural_links(schema):
        target = schema.entity(rel.to_entity)
        keys = {tuple(r.get(t) for _, t in rel.join_pairs)
                for r in snapshot.rows(target.name)}
        for row in snapshot.rows(rel.from_entity):
            ref = tuple(row.get(f) for f, _ in rel.join_pairs)
            if any(v is None for v in ref):
                continue
            if ref not in keys:
                raise DatasetError(f"{rel.from_entity} tuple {row} references a missing "
                                   f"{rel.to_entity} through {rel.name}")


def load_dataset(schema: IdmSchema, directory) -> DbSnapshot:
    """Read every ``<Entity>.csv`` of ``directory`` into a validated snapshot."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DatasetError(f"dataset directory {directory} does not exist")
    files: dict[str, Path] = {}
    for path in sorted(directory.glob("*.csv")):
        ent = schema.entity(path.stem)
        if ent is None:
            raise DatasetError(f"{path}: no entity named {path.stem} in the schema")
        if ent.name in files:
            raise DatasetError(f"{path}: second file for entity {ent.name}")
        files[ent.name] = path
    snapshot = DbSnapshot()
    for ent in ddl_order(schema):
        if ent.name in files:
            snapshot.tables[ent.name] = _load_file(ent, files[ent.name])
    validate_snapshot(schema, snapshot)
    return snapshot
