"""The Integrated Data Model: Database, UI and TestCase levels in one relational schema.

The textual schema format is block structured::

    entity UI_Order level UI {
        o_tc_id : integer;
        o_ui_id : integer;
        o_c_id  : integer input;
        o_id    : integer null output;
        key(o_tc_id, o_ui_id)
    }
    relationship OrderOfTest fk from UI_Order(o_tc_id) to TestCase(tc_id)
    assignment NewOrder root UI_Order

Identifiers keep their declared spelling for output but every lookup is
case-insensitive.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

from .errors import DdlCycleError, ResolveError, SchemaError, SchemaValidationError, SyntaxError_
from .lexing import TokenStream, tokenize
from .sql import column, quote_ident

DATABASE, UI, TESTCASE = "Database", "UI", "TestCase"
LEVELS = (DATABASE, UI, TESTCASE)
KINDS = ("integer", "decimal", "text", "boolean", "datetime")
NUMERIC_KINDS = frozenset({"integer", "decimal", "boolean"})
UI_PREFIX = "ui_"
DEFAULT_TEXT_LENGTH = 255


@dataclass(frozen=True)
class AttributeDef:
    name: str
    kind: str
    nullable: bool = False
    io_role: str = "stored"
    precision: int | None = None
    scale: int | None = None
    maxlen: int | None = None

    @property
    def numeric(self) -> bool:
        return self.kind in NUMERIC_KINDS

    def type_text(self) -> str:
        if self.kind == "decimal" and self.precision is not None:
            return f"decimal({self.precision},{self.scale or 0})"
        if self.kind == "text" and self.maxlen is not None:
            return f"text({self.maxlen})"
        return self.kind

    def sql_type(self) -> str:
        if self.kind == "integer":
            return "INTEGER"
        if self.kind == "decimal":
            if self.precision is None:
                return "DECIMAL"
            return f"DECIMAL({self.precision},{self.scale or 0})"
        if self.kind == "text":
            return f"VARCHAR({self.maxlen or DEFAULT_TEXT_LENGTH})"
        if self.kind == "boolean":
            return "BOOLEAN"
        return "TIMESTAMP"


@dataclass(frozen=True)
class EntityDef:
    name: str
    level: str
    attributes: tuple[AttributeDef, ...]
    primary_key: tuple[str, ...]

    @cached_property
    def _by_name(self) -> dict[str, AttributeDef]:
        out: dict[str, AttributeDef] = {}
        for attr in self.attributes:
            out.setdefault(attr.name.lower(), attr)
        return out

    def attribute(self, name: str) -> AttributeDef | None:
        return self._by_name.get(name.lower())

    def has(self, name: str) -> bool:
        return name.lower() in self._by_name

    @property
    def key_attributes(self) -> tuple[AttributeDef, ...]:
        return tuple(a for a in (self.attribute(k) for k in self.primary_key) if a is not None)


@dataclass(frozen=True)
class RelationshipDef:
    """A link between two entities; ``from_entity`` is the referencing side."""

    name: str
    kind: str
    from_entity: str
    to_entity: str
    join_pairs: tuple[tuple[str, str], ...]
    declared_as_fk: bool = False
    output: bool = False

    def connects(self, a: str, b: str) -> bool:
        ends = {self.from_entity.lower(), self.to_entity.lower()}
        return ends == {a.lower(), b.lower()}

    def oriented(self, left: str) -> tuple[tuple[str, str], ...]:
        """Join pairs as (attribute of ``left``, attribute of the other end)."""
        if left.lower() == self.from_entity.lower():
            return self.join_pairs
        return tuple((t, f) for f, t in self.join_pairs)


@dataclass(frozen=True)
class Assignment:
    name: str
    root: str


@dataclass(frozen=True)
class IdmSchema:
    entities: tuple[EntityDef, ...]
    relationships: tuple[RelationshipDef, ...] = ()
    assignments: tuple[Assignment, ...] = ()

    @cached_property
    def _by_name(self) -> dict[str, EntityDef]:
        out: dict[str, EntityDef] = {}
        for ent in self.entities:
            out.setdefault(ent.name.lower(), ent)
        return out

    def entity(self, name: str) -> EntityDef | None:
        return self._by_name.get(name.lower())

    def level_of(self, name: str) -> str | None:
        ent = self.entity(name)
        return ent.level if ent else None

    def fk_between(self, a: str, b: str) -> list[RelationshipDef]:
        return [r for r in self.relationships if r.declared_as_fk and r.connects(a, b)]

    def assignment(self, name: str) -> Assignment | None:
        for a in self.assignments:
            if a.name.lower() == name.lower():
                return a
        return None

    def ui_entities_of(self, assignment: Assignment) -> list[EntityDef]:
        """The assignment's root UI entity plus every UI entity hanging off it."""
        root = self.entity(assignment.root)
        if root is None:
            return []
        seen = [root]
        frontier = [root]
        while frontier:
            cur = frontier.pop()
            for rel in self.relationships:
                if not rel.declared_as_fk or rel.output:
                    continue
                if rel.to_entity.lower() != cur.name.lower():
                    continue
                child = self.entity(rel.from_entity)
                if child and child.level == UI and child not in seen:
                    seen.append(child)
                    frontier.append(child)
        return seen


@dataclass(frozen=True)
class AttrRef:
    """An attribute bound to one occurrence (alias) of an entity on a path."""

    alias: str
    entity: str
    attribute: str
    definition: AttributeDef = field(compare=False, repr=False)

    @property
    def sql(self) -> str:
        return column(self.alias, self.attribute)

    @property
    def nullable(self) -> bool:
        return self.definition.nullable

    @property
    def kind(self) -> str:
        return self.definition.kind

    def __str__(self) -> str:
        return f"{self.alias}.{self.attribute}"


@dataclass(frozen=True)
class Diagnostic:
    code: str
    element: str
    message: str

    def __str__(self) -> str:
        return f"[{self.code}] {self.element}: {self.message}"


# ---------------------------------------------------------------------------
# parsing and rendering

_SCHEMA_TOKENS = [
    ("WS", r"\s+"),
    ("COMMENT", r"--[^\n]*"),
    ("NAME", r"[A-Za-z_][A-Za-z0-9_]*"),
    ("INT", r"\d+"),
    ("PUNCT", r"[{}();:,]"),
]


class _SchemaParser:
    def __init__(self, text: str, source: str | None):
        self.ts = TokenStream(tokenize(text, _SCHEMA_TOKENS, source=source), source,
                              SyntaxError_)
        self.source = source

    def punct(self, ch: str):
        tok = self.ts.peek()
        if tok.kind != "PUNCT" or tok.text != ch:
            self.ts.fail(f"unexpected {tok.text!r}" if tok.kind != "EOF" else "unexpected end",
                         [repr(ch)])
        return self.ts.next()

    def at_punct(self, ch: str) -> bool:
        tok = self.ts.peek()
        return tok.kind == "PUNCT" and tok.text == ch

    def name(self, what: str = "identifier") -> str:
        return self.ts.expect("NAME", what).text

    def name_list(self) -> tuple[str, ...]:
        self.punct("(")
        names = [self.name("attribute name")]
        while self.at_punct(","):
            self.ts.next()
            names.append(self.name("attribute name"))
        self.punct(")")
        return tuple(names)

    def parse(self):
        entities, rels, assigns = [], [], []
        seen: dict[str, int] = {}
        while not self.ts.at("EOF"):
            tok = self.ts.peek()
            if self.ts.at_word("entity"):
                ent = self.entity()
                if ent.name.lower() in seen:
                    raise SchemaError(f"duplicate entity {ent.name}", tok.line, tok.column,
                                      self.source)
                seen[ent.name.lower()] = 1
                entities.append(ent)
            elif self.ts.at_word("relationship"):
                rels.append(self.relationship())
            elif self.ts.at_word("assignment"):
                self.ts.next()
                name = self.name("assignment name")
                self.ts.expect_word("root")
                assigns.append(Assignment(name, self.name("entity name")))
            else:
                self.ts.fail(f"unexpected {tok.text!r}",
                             ["'entity'", "'relationship'", "'assignment'"])
        if not entities:
            raise SchemaError("no entities declared", None, None, self.source)
        levels = {e.name.lower(): e.level for e in entities}
        resolved = []
        for r in rels:
            a, b = levels.get(r.from_entity.lower()), levels.get(r.to_entity.lower())
            kind = "inter_level" if a and b and a != b else "intra_level"
            resolved.append(RelationshipDef(r.name, kind, r.from_entity, r.to_entity,
                                            r.join_pairs, r.declared_as_fk, r.output))
        return IdmSchema(tuple(entities), tuple(resolved), tuple(assigns))

    def entity(self) -> EntityDef:
        self.ts.expect_word("entity")
        name = self.name("entity name")
        self.ts.expect_word("level")
        tok = self.ts.expect("NAME", "level")
        level = next((lv for lv in LEVELS if lv.lower() == tok.lower), None)
        if level is None:
            raise SchemaError(f"unknown level {tok.text!r}", tok.line, tok.column, self.source,
                              tuple(LEVELS))
        self.punct("{")
        attrs: list[AttributeDef] = []
        key: tuple[str, ...] = ()
        while not self.at_punct("}"):
            if self.ts.at_word("key") and self.ts.peek(1).text == "(":
                self.ts.next()
                key = self.name_list()
                if self.at_punct(";"):
                    self.ts.next()
                continue
            attrs.append(self.attribute(level))
        self.punct("}")
        return EntityDef(name, level, tuple(attrs), key)

    def attribute(self, level: str) -> AttributeDef:
        name = self.name("attribute name")
        self.punct(":")
        tok = self.ts.expect("NAME", "type")
        kind = tok.lower
        precision = scale = maxlen = None
        if kind not in KINDS:
            self.ts.fail(f"unknown type {tok.text!r}", [repr(k) for k in KINDS], tok)
        if kind == "decimal" and self.at_punct("("):
            self.ts.next()
            precision = int(self.ts.expect("INT", "precision").text)
            scale = 0
            if self.at_punct(","):
                self.ts.next()
                scale = int(self.ts.expect("INT", "scale").text)
            self.punct(")")
        elif kind == "text" and self.at_punct("("):
            self.ts.next()
            maxlen = int(self.ts.expect("INT", "length").text)
            self.punct(")")
        nullable = False
        role = "input" if level == UI else "stored"
        while self.ts.at("NAME"):
            word = self.ts.next().lower
            if word == "null":
                nullable = True
            elif word in ("input", "output", "stored"):
                role = word
            else:
                self.ts.pos -= 1
                self.ts.fail(f"unexpected {self.ts.peek().text!r}",
                             ["'null'", "'input'", "'output'", "';'"])
        self.punct(";")
        return AttributeDef(name, kind, nullable, role, precision, scale, maxlen)

    def relationship(self) -> RelationshipDef:
        self.ts.expect_word("relationship")
        name = self.name("relationship name")
        fk = output = False
        while self.ts.at_word("fk", "output"):
            if self.ts.next().lower == "fk":
                fk = True
            else:
                output = True
        self.ts.expect_word("from")
        src = self.name("entity name")
        src_attrs = self.name_list()
        self.ts.expect_word("to")
        dst = self.name("entity name")
        dst_attrs = self.name_list()
        if len(src_attrs) != len(dst_attrs):
            tok = self.ts.tokens[self.ts.pos - 1]
            raise SchemaError(f"relationship {name}: attribute lists differ in length",
                              tok.line, tok.column, self.source)
        return RelationshipDef(name, "intra_level", src, dst, tuple(zip(src_attrs, dst_attrs)),
                               fk, output)


def parse_schema(source_text: str, *, source: str | None = None,
                 validate: bool = True) -> IdmSchema:
    """Parse the schema format; by default also reject schemas that fail validation."""
    schema = _SchemaParser(source_text, source).parse()
    if validate:
        problems = validate_schema(schema)
        if problems:
            raise SchemaValidationError(problems)
    return schema


def render_schema(schema: IdmSchema) -> str:
    lines: list[str] = []
    for a in schema.assignments:
        lines.append(f"assignment {a.name} root {a.root}")
    if schema.assignments:
        lines.append("")
    for ent in schema.entities:
        lines.append(f"entity {ent.name} level {ent.level} {{")
        for attr in ent.attributes:
            extra = " null" if attr.nullable else ""
            if attr.io_role != "stored":
                extra += f" {attr.io_role}"
            lines.append(f"    {attr.name} : {attr.type_text()}{extra};")
        lines.append(f"    key({', '.join(ent.primary_key)})")
        lines.append("}")
    for rel in schema.relationships:
        flags = (" fk" if rel.declared_as_fk else "") + (" output" if rel.output else "")
        src = ", ".join(f for f, _ in rel.join_pairs)
        dst = ", ".join(t for _, t in rel.join_pairs)
        lines.append(f"relationship {rel.name}{flags} from {rel.from_entity}({src}) "
                     f"to {rel.to_entity}({dst})")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# validation

def _is_tc_attr(name: str) -> bool:
    n = name.lower()
    return n == "tc_id" or n.endswith("_tc_id")


def _is_ui_attr(name: str) -> bool:
    n = name.lower()
    return n == "ui_id" or n.endswith("_ui_id")


def _compatible(a: AttributeDef, b: AttributeDef) -> bool:
    if a.numeric and b.numeric:
        return True
    return a.kind == b.kind


def validate_schema(schema: IdmSchema) -> list[Diagnostic]:
    """Check every structural invariant; returns one diagnostic per violation."""
    out: list[Diagnostic] = []
    add = lambda code, elem, msg: out.append(Diagnostic(code, elem, msg))  # noqa: E731

    names: set[str] = set()
    for ent in schema.entities:
        if ent.name.lower() in names:
            add("duplicate-entity", ent.name, "entity declared more than once")
        names.add(ent.name.lower())
        if ent.level not in LEVELS:
            add("unknown-level", ent.name, f"unknown level {ent.level!r}")
        seen: set[str] = set()
        for attr in ent.attributes:
            if attr.name.lower() in seen:
                add("duplicate-attribute", f"{ent.name}.{attr.name}",
                    "attribute declared more than once")
            seen.add(attr.name.lower())
            if attr.kind not in KINDS:
                add("attribute-kind", f"{ent.name}.{attr.name}", f"unknown kind {attr.kind!r}")
            if ent.level == UI and attr.io_role not in ("input", "output"):
                add("io-role", f"{ent.name}.{attr.name}",
                    "UI-level attributes must be input or output")
            if ent.level != UI and attr.io_role != "stored":
                add("io-role", f"{ent.name}.{attr.name}",
                    "input/output roles are only allowed at the UI level")
        prefixed = ent.name.lower().startswith(UI_PREFIX)
        if ent.level == UI and not prefixed:
            add("ui-prefix", ent.name, "UI-level entity names must start with UI_")
        if ent.level != UI and prefixed:
            add("ui-prefix", ent.name, "only UI-level entity names may start with UI_")
        if not ent.primary_key:
            add("key", ent.name, "primary key is empty")
        for k in ent.primary_key:
            attr = ent.attribute(k)
            if attr is None:
                add("key", ent.name, f"key attribute {k} does not exist")
            elif attr.nullable:
                add("key", ent.name, f"key attribute {k} is nullable")

    testcases = [e for e in schema.entities if e.level == TESTCASE]
    if len(testcases) != 1 or testcases[0].name.lower() != "testcase":
        add("testcase-level", "TestCase",
            "the TestCase level must contain exactly one entity named TestCase")
    for tc in testcases:
        if [k.lower() for k in tc.primary_key] != ["tc_id"]:
            add("testcase-key", tc.name, "TestCase key must be tc_id")

    rel_names: set[str] = set()
    for rel in schema.relationships:
        if rel.name.lower() in rel_names:
            add("duplicate-relationship", rel.name, "relationship declared more than once")
        rel_names.add(rel.name.lower())
        a, b = schema.entity(rel.from_entity), schema.entity(rel.to_entity)
        for end, ent in ((rel.from_entity, a), (rel.to_entity, b)):
            if ent is None:
                add("relationship-endpoint", rel.name, f"unknown entity {end}")
        if a is None or b is None:
            continue
        expected = "inter_level" if a.level != b.level else "intra_level"
        if rel.kind != expected:
            add("relationship-kind", rel.name, f"relationship must be {expected}")
        if not rel.join_pairs:
            add("relationship-attribute", rel.name, "no join attributes")
        for f, t in rel.join_pairs:
            fa, ta = a.attribute(f), b.attribute(t)
            if fa is None:
                add("relationship-attribute", rel.name, f"{a.name} has no attribute {f}")
            if ta is None:
                add("relationship-attribute", rel.name, f"{b.name} has no attribute {t}")
            if fa and ta and not _compatible(fa, ta):
                add("relationship-attribute", rel.name,
                    f"{a.name}.{f} ({fa.kind}) is not comparable with {b.name}.{t} ({ta.kind})")
        if rel.declared_as_fk:
            targets = {t.lower() for _, t in rel.join_pairs}
            if targets != {k.lower() for k in b.primary_key}:
                add("fk-target", rel.name, f"foreign key must reference the key of {b.name}")

    for ent in schema.entities:
        if ent.level != UI:
            continue
        tc = next((x for x in ent.attributes if _is_tc_attr(x.name)), None)
        ui = next((x for x in ent.attributes if _is_ui_attr(x.name)), None)
        if tc is None or ui is None:
            add("ui-key", ent.name, "UI entities need a tc_id and a ui_id attribute")
        else:
            head = [k.lower() for k in ent.primary_key[:2]]
            if head != [tc.name.lower(), ui.name.lower()]:
                add("ui-key", ent.name, f"key must begin ({tc.name}, {ui.name})")
            parent = _ui_parent(schema, ent)
            if parent is not None and len(ent.primary_key) <= len(parent.primary_key):
                add("ui-key", ent.name,
                    f"child of {parent.name} must extend its key with a line ordinal")
        routes = anchor_routes(schema, ent.name)
        if len(routes) != 1:
            add("anchor", ent.name,
                "no foreign-key route to TestCase" if not routes else
                "more than one foreign-key route to TestCase")

    for a in schema.assignments:
        root = schema.entity(a.root)
        if root is None or root.level != UI:
            add("assignment-root", a.name, f"root {a.root} is not a UI-level entity")
    return out


def _ui_parent(schema: IdmSchema, ent: EntityDef) -> EntityDef | None:
    for rel in schema.relationships:
        if rel.declared_as_fk and not rel.output and rel.from_entity.lower() == ent.name.lower():
            tgt = schema.entity(rel.to_entity)
            if tgt is not None and tgt.level == UI:
                return tgt
    return None


# ---------------------------------------------------------------------------
# anchoring

@dataclass(frozen=True)
class AnchorEdge:
    parent: str
    child: str
    relationship: RelationshipDef

    def pairs(self) -> tuple[tuple[str, str], ...]:
        """(parent attribute, child attribute) pairs."""
        return self.relationship.oriented(self.parent)


def anchor_routes(schema: IdmSchema, entity: str) -> list[list[AnchorEdge]]:
    """All simple declared-FK routes from TestCase down to a UI entity.

    Only UI/TestCase entities and non-output relationships take part.
    """
    start = schema.entity(entity)
    if start is None or start.level != UI:
        return []
    edges = [r for r in schema.relationships if r.declared_as_fk and not r.output
             and schema.level_of(r.from_entity) in (UI, TESTCASE)
             and schema.level_of(r.to_entity) in (UI, TESTCASE)]
    routes: list[list[AnchorEdge]] = []

    def walk(cur: str, visited: list[str], acc: list[AnchorEdge]):
        if schema.level_of(cur) == TESTCASE:
            routes.append(list(reversed(acc)))
            return
        for rel in edges:
            if rel.from_entity.lower() == cur.lower():
                nxt = rel.to_entity
            elif rel.to_entity.lower() == cur.lower():
                nxt = rel.from_entity
            else:
                continue
            nxt_ent = schema.entity(nxt)
            if nxt_ent is None or nxt_ent.name.lower() in visited:
                continue
            walk(nxt_ent.name, visited + [nxt_ent.name.lower()],
                 acc + [AnchorEdge(nxt_ent.name, schema.entity(cur).name, rel)])

    walk(start.name, [start.name.lower()], [])
    return routes


def anchor_route(schema: IdmSchema, entity: str) -> list[AnchorEdge] | None:
    """The unique TestCase→entity route, or None for non-UI entities."""
    routes = anchor_routes(schema, entity)
    if not routes:
        return None
    return routes[0]


# ---------------------------------------------------------------------------
# DDL

def ddl_order(schema: IdmSchema) -> list[EntityDef]:
    """Entities in foreign-key dependency order (referenced tables first)."""
    deps: dict[str, set[str]] = {e.name.lower(): set() for e in schema.entities}
    for rel in schema.relationships:
        if rel.declared_as_fk and not rel.output:
            src, dst = rel.from_entity.lower(), rel.to_entity.lower()
            if src != dst and src in deps and dst in deps:
                deps[src].add(dst)
    order: list[EntityDef] = []
    done: set[str] = set()
    remaining = list(schema.entities)
    while remaining:
        ready = [e for e in remaining if deps[e.name.lower()] <= done]
        if not ready:
            raise DdlCycleError(_find_cycle(deps, [e.name.lower() for e in remaining], schema))
        ent = ready[0]
        order.append(ent)
        done.add(ent.name.lower())
        remaining.remove(ent)
    return order


def _find_cycle(deps: dict[str, set[str]], pending: list[str], schema: IdmSchema) -> list[str]:
    start = pending[0]
    path = [start]
    cur = start
    while True:
        cur = sorted(d for d in deps[cur] if d in pending)[0]
        if cur in path:
            cyc = path[path.index(cur):]
            return [schema.entity(n).name for n in cyc]
        path.append(cur)


def emit_ddl(schema: IdmSchema) -> str:
    """One CREATE TABLE statement per line, in dependency order.

    Foreign keys are emitted for declared-FK relationships that are not
    output links (output tuples only exist after the system under test runs).
    """
    lines = []
    for ent in ddl_order(schema):
        cols = [f"{quote_ident(a.name)} {a.sql_type()}" + ("" if a.nullable else " NOT NULL")
                for a in ent.attributes]
        cols.append("PRIMARY KEY (" + ", ".join(quote_ident(k) for k in ent.primary_key) + ")")
        for rel in schema.relationships:
            if not rel.declared_as_fk or rel.output:
                continue
            if rel.from_entity.lower() != ent.name.lower():
                continue
            target = schema.entity(rel.to_entity)
            src = ", ".join(quote_ident(f) for f, _ in rel.join_pairs)
            dst = ", ".join(quote_ident(t) for _, t in rel.join_pairs)
            cols.append(f"FOREIGN KEY ({src}) REFERENCES {quote_ident(target.name)} ({dst})")
        lines.append(f"CREATE TABLE {quote_ident(ent.name)} ({', '.join(cols)});")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# attribute resolution

def resolve_attribute(schema: IdmSchema, path, name: str) -> AttrRef:
    """Resolve ``A`` or ``R.A`` against the entities of ``path``.

    ``path`` needs a ``steps`` sequence whose items carry ``alias`` and
    ``entity``. An unqualified name must occur in exactly one step.
    """
    parts = name.split(".")
    steps: Sequence = path.steps
    if len(parts) == 1:
        attr = parts[0]
        hits = [s for s in steps if schema.entity(s.entity).has(attr)]
        if not hits:
            raise ResolveError(f"unknown attribute {attr} on path {path.name}")
        if len(hits) > 1:
            cands = tuple(s.alias for s in hits)
            raise ResolveError(f"ambiguous attribute {attr} on path {path.name}: "
                               f"found in {', '.join(cands)}", cands)
        return _ref(schema, hits[0], attr)
    if len(parts) != 2:
        raise ResolveError(f"malformed attribute reference {name}")
    qual, attr = parts
    hits = [s for s in steps if s.alias.lower() == qual.lower()]
    if not hits:
        hits = [s for s in steps if s.entity.lower() == qual.lower()]
    if not hits:
        raise ResolveError(f"entity {qual} is not on path {path.name}")
    if len(hits) > 1:
        cands = tuple(s.alias for s in hits)
        raise ResolveError(f"entity {qual} occurs more than once on path {path.name}; "
                           f"use one of {', '.join(cands)}", cands)
    if not schema.entity(hits[0].entity).has(attr):
        raise ResolveError(f"unknown attribute {qual}.{attr}")
    return _ref(schema, hits[0], attr)


def _ref(schema: IdmSchema, step, attr: str) -> AttrRef:
    definition = schema.entity(step.entity).attribute(attr)
    return AttrRef(step.alias, step.entity, definition.name, definition)

