"""Compile bound business rules into SQL context queries and condition fragments.

A rule's context is its path joined as INNER JOINs, anchored to the
TestCase entity through the foreign-key route of every UI entity on the
path. Three query shapes exist:

``rows``   plain path context, conditions in WHERE (value conditions)
``quant``  first path entity grouped, the rest LEFT JOINed and counted
``frame``  path context grouped by the frame attributes, conditions aggregated
"""
from __future__ import annotations

from dataclasses import dataclass
from decimal import Decimal

from .errors import CompileError
from .lang.ast import (And, BinOp, BusinessRule, FrameExpr, JoinPredicate, Neg, Num, Or,
                       PathExpr, QuantCondition, Str, ValueCondition, arith_refs, fold_constant)
from .model import TESTCASE, UI, AttrRef, IdmSchema, anchor_route
from .sql import Cond, Join, Query, column, literal

SQL_OP = {"ge": ">=", "le": "<=", "eq": "=", "ne": "<>", "like": "LIKE"}
NEGATED = {"ge": "<", "le": ">", "eq": "<>", "ne": "="}
_SIMPLE = {"at_least": "ge", "at_most": "le", "exactly": "eq", "different_to": "ne",
           "like": "like"}
_PHRASE = {"ge": "at least", "le": "at most", "eq": "exactly", "ne": "different to",
           "like": "like"}
COUNT_ALIAS = "related_count"
FRAME_COUNT_ALIAS = "frame_tuples"


@dataclass(frozen=True)
class Atom:
    """One atomic relational condition; ranges contribute two atoms."""

    index: int
    condition: object
    op: str
    bound: object
    text: str

    @property
    def quantified(self) -> bool:
        return isinstance(self.condition, QuantCondition)

    @property
    def operand(self):
        return None if self.quantified else self.condition.operand

    @property
    def refs(self) -> tuple[AttrRef, ...]:
        refs = [] if self.quantified else [self.condition.operand]
        for r in arith_refs(self.bound):
            if r not in refs:
                refs.append(r)
        return tuple(refs)

    def nullable_refs(self) -> tuple[AttrRef, ...]:
        return tuple(r for r in self.refs if r.nullable)


@dataclass(frozen=True)
class AtomFragments:
    true: tuple[Cond, ...]
    false: tuple[Cond, ...]
    nulls: tuple[tuple[AttrRef, Cond], ...]
    true_expr: str
    false_expr: str


@dataclass(frozen=True)
class Situation:
    """What a coverage rule asks for, independent of SQL.

    ``truth`` fixes the truth value of listed atoms (unlisted atoms are
    unconstrained), ``nulls`` requires attributes to be missing, ``pins``
    sets an atom's operand to a value and ``broken`` names a path predicate
    that must fail.
    """

    truth: tuple[tuple[int, bool], ...] = ()
    nulls: tuple[AttrRef, ...] = ()
    pins: tuple[tuple[int, object], ...] = ()
    broken: int | None = None


@dataclass(frozen=True)
class ContextQuery:
    rule: BusinessRule
    shape: str
    from_chain: tuple[Join, ...]
    structural: tuple[Cond, ...]
    atoms: tuple[Atom, ...]
    tree: object
    fragments: tuple[AtomFragments, ...]
    grouping: tuple[str, ...]
    select: tuple[str, ...]
    anchored: frozenset[str]
    variable_predicates: tuple[int, ...]
    schema: IdmSchema
    count_sql: str | None = None

    @property
    def path(self) -> PathExpr:
        return self.rule.path


# -- arithmetic / atoms -------------------------------------------------------

def arith_sql(expr) -> str:
    if isinstance(expr, (Num, Str)):
        return literal(expr.value)
    if isinstance(expr, AttrRef):
        return expr.sql
    if isinstance(expr, Neg):
        return f"(-{arith_sql(expr.operand)})"
    if isinstance(expr, BinOp):
        return f"({arith_sql(expr.left)} {expr.op} {arith_sql(expr.right)})"
    raise CompileError(f"cannot compile {expr!r}")


def describe_arith(expr, ctx_name: str) -> str:
    if isinstance(expr, Num):
        return str(expr.value)
    if isinstance(expr, Str):
        return "'" + expr.value.replace("'", "''") + "'"
    if isinstance(expr, AttrRef):
        return f"{ctx_name}.{expr.attribute}"
    if isinstance(expr, Neg):
        return "-" + describe_arith(expr.operand, ctx_name)
    return f"({describe_arith(expr.left, ctx_name)} {expr.op} " \
           f"{describe_arith(expr.right, ctx_name)})"


def split_atoms(rule: BusinessRule) -> tuple[object, tuple[Atom, ...]]:
    """The rule's condition with ranges decomposed into two atoms each."""
    atoms: list[Atom] = []
    name = rule.context_name

    def make(cond, op, bound) -> Atom:
        if isinstance(cond, QuantCondition):
            text = (f"{name}.{cond.r_entity.alias} has {_PHRASE[op]} "
                    f"{describe_arith(bound, name)} {name}.{cond.s_entity.alias}")
        else:
            verb = "each " if cond.universal else ""
            text = (f"{verb}{name}.{cond.operand.attribute} is {_PHRASE[op]} "
                    f"{describe_arith(bound, name)}")
        atom = Atom(len(atoms), cond, op, bound, text)
        atoms.append(atom)
        return atom

    def walk(expr):
        if isinstance(expr, (And, Or)):
            return type(expr)(tuple(walk(i) for i in expr.items))
        if expr.comparator == "range":
            return And((make(expr, "ge", expr.bound_p), make(expr, "le", expr.bound_q)))
        return make(expr, _SIMPLE[expr.comparator], expr.bound_p)

    tree = walk(rule.condition)
    return tree, tuple(atoms)


def evaluate_tree(tree, values) -> bool:
    """Two-valued evaluation of an And/Or tree of atoms under ``values[index]``."""
    if isinstance(tree, And):
        return all(evaluate_tree(i, values) for i in tree.items)
    if isinstance(tree, Or):
        return any(evaluate_tree(i, values) for i in tree.items)
    return bool(values[tree.index])


def _facts_for(operand_sql: str, op: str, bound, nullable: tuple[AttrRef, ...]) -> tuple:
    facts = [("notnull", r.sql) for r in nullable]
    value = fold_constant(bound)
    if value is not None and op != "like":
        facts.append(("cmp", operand_sql, op, value))
    return tuple(facts)


def atom_fragments(atom: Atom, operand_sql: str | None = None) -> AtomFragments:
    """True/false/null forms for one atom.

    The false form is ``NOT(true form)`` with every nullable attribute of the
    atom additionally required to be present.
    """
    cond = atom.condition
    if atom.op == "like" and not atom.quantified and cond.operand.kind != "text":
        raise CompileError(f"like on non-text attribute {cond.operand}")
    operand = operand_sql or (cond.operand.sql if not atom.quantified else None)
    if operand is None:
        raise CompileError("quantification atoms need a count expression")
    bound = arith_sql(atom.bound)
    true_sql = f"{operand} {SQL_OP[atom.op]} {bound}"
    nullable = atom.nullable_refs()
    true = (Cond(true_sql, _facts_for(operand, atom.op, atom.bound, nullable)),)
    false_facts = [("notnull", r.sql) for r in nullable]
    value = fold_constant(atom.bound)
    if value is not None and atom.op in NEGATED:
        false_facts.append(("cmp", operand, _NEG_OP[atom.op], value))
    false = (Cond(f"NOT({true_sql})", tuple(false_facts)),) + tuple(
        Cond(f"{r.sql} IS NOT NULL", (("notnull", r.sql),)) for r in nullable)
    nulls = tuple((r, Cond(f"{r.sql} IS NULL", (("null", r.sql),))) for r in nullable)
    return AtomFragments(true, false, nulls, true_sql, f"NOT({true_sql})")


_NEG_OP = {"ge": "lt", "le": "gt", "eq": "ne", "ne": "eq"}


@dataclass(frozen=True)
class ConditionForms:
    true: str
    false: str
    nulls: dict


def compile_value_condition(cond: ValueCondition) -> ConditionForms:
    """SQL forms of a whole value condition (ranges stay one parenthesised form)."""
    if not isinstance(cond, ValueCondition):
        raise CompileError("expected a value condition")
    if cond.comparator == "like" and cond.operand.kind != "text":
        raise CompileError(f"like on non-text attribute {cond.operand}")
    x = cond.operand.sql
    if cond.comparator == "range":
        true = f"({x} >= {arith_sql(cond.bound_p)} AND {x} <= {arith_sql(cond.bound_q)})"
    else:
        true = f"{x} {SQL_OP[_SIMPLE[cond.comparator]]} {arith_sql(cond.bound_p)}"
    refs = [cond.operand] + [r for b in (cond.bound_p, cond.bound_q) if b is not None
                             for r in arith_refs(b)]
    nullable = []
    for r in refs:
        if r.nullable and r not in nullable:
            nullable.append(r)
    false = " AND ".join([f"NOT({true})"] + [f"{r.sql} IS NOT NULL" for r in nullable])
    return ConditionForms(true, false, {r: f"{r.sql} IS NULL" for r in nullable})


# -- join chains --------------------------------------------------------------

def _key_column(schema: IdmSchema, alias: str, entity: str) -> str:
    ent = schema.entity(entity)
    return column(alias, ent.primary_key[0])


def _pred_conds(pred: JoinPredicate) -> tuple[Cond, ...]:
    out = []
    for left, right in pred.conjuncts:
        if isinstance(right, AttrRef):
            out.append(Cond(f"{left.sql} = {right.sql}"))
        else:
            out.append(Cond(f"{left.sql} = {literal(right.value)}",
                            (("cmp", left.sql, "eq", right.value),)))
    return tuple(out)


def _is_anchor_level(schema: IdmSchema, entity: str) -> bool:
    return schema.level_of(entity) in (UI, TESTCASE)


def _chain(schema: IdmSchema, path: PathExpr, keep: list[int], anchor_steps: list[int]
           ) -> tuple[list[Join], list[Cond], set[str]]:
    """Joins for the kept steps of ``path``; anchored steps are tied to TestCase."""
    alias_of: dict[str, str] = {}
    for i in keep:
        alias_of.setdefault(path.steps[i].entity.lower(), path.steps[i].alias)
    joins: list[Join] = []
    joined: set[str] = set()
    anchored: set[str] = set()
    anchor_links: set[tuple[str, str]] = set()
    for i in anchor_steps:
        step = path.steps[i]
        if schema.level_of(step.entity) == TESTCASE:
            if not joins:
                joins.append(Join("FROM", step.entity, step.alias))
                joined.add(step.alias)
            anchored.add(step.alias)
            continue
        if schema.level_of(step.entity) != UI:
            continue
        route = anchor_route(schema, step.entity)
        if route is None:
            raise CompileError(f"no anchor route from TestCase to {step.entity}")
        for edge in route:
            parent = alias_of.get(edge.parent.lower(), edge.parent)
            child = alias_of.get(edge.child.lower(), edge.child)
            if parent not in joined:
                if joins:
                    raise CompileError(f"anchor route to {step.entity} is disconnected")
                joins.append(Join("FROM", edge.parent, parent))
                joined.add(parent)
            if child not in joined:
                on = tuple(Cond(f"{column(parent, pa)} = {column(child, ca)}")
                           for pa, ca in edge.pairs())
                joins.append(Join("INNER", edge.child, child, on))
                joined.add(child)
            anchored.update((parent, child))
            anchor_links.add((parent.lower(), child.lower()))
            anchor_links.add((child.lower(), parent.lower()))
    structural: list[Cond] = []
    pending = [i for i in keep if path.steps[i].alias not in joined]
    if not joins and pending:
        first = pending.pop(0)
        joins.append(Join("FROM", path.steps[first].entity, path.steps[first].alias))
        joined.add(path.steps[first].alias)
    while pending:
        progressed = False
        for i in list(pending):
            step = path.steps[i]
            if i - 1 in keep and path.steps[i - 1].alias in joined:
                pred = path.predicates[i - 1]
            elif i + 1 in keep and path.steps[i + 1].alias in joined:
                pred = path.predicates[i]
            else:
                continue
            joins.append(Join("INNER", step.entity, step.alias, _pred_conds(pred)))
            joined.add(step.alias)
            pending.remove(i)
            progressed = True
        if not progressed:
            raise CompileError(f"path {path.name} cannot be joined into one chain")
    # predicates between two anchored steps are already enforced by the anchor
    # joins when they come from the same relationship; otherwise keep them.
    for i, pred in enumerate(path.predicates):
        if i not in keep or i + 1 not in keep:
            continue
        a, b = path.steps[i].alias, path.steps[i + 1].alias
        if a in anchored and b in anchored:
            same = pred.relationship is not None and (a.lower(), b.lower()) in anchor_links \
                and any(r.name == pred.relationship for r in _route_rels(schema, path, i))
            if not same:
                structural.extend(_pred_conds(pred))
    return joins, structural, anchored


def _route_rels(schema: IdmSchema, path: PathExpr, i: int):
    rels = []
    for j in (i, i + 1):
        route = anchor_route(schema, path.steps[j].entity) or []
        rels.extend(e.relationship for e in route)
    return rels


def anchored_steps(schema: IdmSchema, path: PathExpr) -> list[int]:
    return [i for i, s in enumerate(path.steps) if _is_anchor_level(schema, s.entity)]


def _variable_predicates(schema: IdmSchema, path: PathExpr) -> tuple[int, ...]:
    """Path predicates that join-violation variants may break.

    Predicates between two UI/TestCase entities are part of the anchoring
    structure; predicates whose two sides both contain such entities cannot
    be broken while keeping every kept row tied to a test case.
    """
    out = []
    for i in range(len(path.predicates)):
        left = any(_is_anchor_level(schema, s.entity) for s in path.steps[:i + 1])
        right = any(_is_anchor_level(schema, s.entity) for s in path.steps[i + 1:])
        if left and right:
            continue
        out.append(i)
    return tuple(out)


def broken_halves(ctx: ContextQuery, index: int) -> tuple[list[int], int]:
    """(kept step indices, neighbour step index) when predicate ``index`` fails."""
    n = len(ctx.path.steps)
    left = list(range(index + 1))
    right = list(range(index + 1, n))
    if any(_is_anchor_level(ctx.schema, ctx.path.steps[i].entity) for i in right):
        return right, index
    return left, index + 1


def reachable_atoms(ctx: ContextQuery, index: int) -> list[int]:
    kept, _ = broken_halves(ctx, index)
    aliases = {ctx.path.steps[i].alias for i in kept}
    out = []
    for atom in ctx.atoms:
        if atom.quantified:
            continue
        if all(r.alias in aliases for r in atom.refs):
            out.append(atom.index)
    return out


# -- context compilation ------------------------------------------------------

def compile_context(rule: BusinessRule, schema: IdmSchema) -> ContextQuery:
    path = rule.path
    tree, atoms = split_atoms(rule)
    anchors = anchored_steps(schema, path)
    every = list(range(len(path.steps)))
    quant = [a for a in atoms if a.quantified]
    if quant:
        return _quant_context(rule, schema, tree, atoms, anchors)
    joins, structural, anchored = _chain(schema, path, every, anchors)
    frags = tuple(atom_fragments(a) for a in atoms)
    grouping: tuple[str, ...] = ()
    select: tuple[str, ...] = ()
    shape = "rows"
    if isinstance(rule.context, FrameExpr):
        shape = "frame"
        grouping = tuple(a.sql for a in rule.context.group_attrs)
        select = grouping + (f"COUNT(*) AS {FRAME_COUNT_ALIAS}",)
    return ContextQuery(rule, shape, tuple(joins), tuple(structural), atoms, tree, frags,
                        grouping, select, frozenset(anchored),
                        _variable_predicates(schema, path), schema)


def _quant_context(rule, schema, tree, atoms, anchors) -> ContextQuery:
    skeleton = compile_quantification(atoms[0].condition, rule, schema)
    frags = tuple(atom_fragments(a, skeleton.count_sql) for a in atoms)
    group = list(skeleton.group_by)
    for a in atoms:
        for r in arith_refs(a.bound):
            if r.sql not in group:
                group.append(r.sql)
    select = tuple(group) + (f"{skeleton.count_sql} AS {COUNT_ALIAS}",)
    return ContextQuery(rule, "quant", skeleton.joins, skeleton.structural, atoms, tree, frags,
                        tuple(group), select, skeleton.anchored,
                        _variable_predicates(schema, rule.path), schema, skeleton.count_sql)


@dataclass(frozen=True)
class GroupedSkeleton:
    joins: tuple[Join, ...]
    structural: tuple[Cond, ...]
    group_by: tuple[str, ...]
    count_sql: str
    anchored: frozenset[str]


def compile_quantification(cond: QuantCondition, rule: BusinessRule, schema: IdmSchema
                           ) -> GroupedSkeleton:
    """LEFT JOIN chain from the counted-over entity to the counted one.

    Groups by the key of ``cond.r_entity``; the LEFT JOINs keep groups with
    no related tuple visible with a count of zero.
    """
    path = rule.path
    r = path.index(cond.r_entity.alias)
    s = path.index(cond.s_entity.alias)
    if r >= s:
        raise CompileError(f"{cond.r_entity} and {cond.s_entity} are not related on "
                           f"path {path.name}")
    anchors = [r] if _is_anchor_level(schema, path.steps[r].entity) else []
    joins, structural, anchored = _chain(schema, path, [r], anchors)
    for i in range(r + 1, s + 1):
        step = path.steps[i]
        joins.append(Join("LEFT", step.entity, step.alias, _pred_conds(path.predicates[i - 1])))
    r_step = path.steps[r]
    r_ent = schema.entity(r_step.entity)
    group = tuple(column(r_step.alias, k) for k in r_ent.primary_key)
    count = f"COUNT({_key_column(schema, path.steps[s].alias, path.steps[s].entity)})"
    return GroupedSkeleton(tuple(joins), tuple(structural), group, count, frozenset(anchored))


@dataclass(frozen=True)
class FrameForms:
    all_satisfy: str
    some_violate: str


def compile_frame_universal(rule: BusinessRule, schema: IdmSchema) -> FrameForms:
    """HAVING forms for a rule whose conditions must hold in every tuple of a frame."""
    if not isinstance(rule.context, FrameExpr):
        raise CompileError(f"rule {rule.name} is not written over a frame")
    _, atoms = split_atoms(rule)
    frags = [atom_fragments(a) for a in atoms]
    true = " AND ".join(f.true_expr for f in frags)
    false = " OR ".join(f.false_expr for f in frags)
    return FrameForms(all_satisfy_sql(true) + " AND COUNT(*) >= 1", some_violate_sql(false))


def all_satisfy_sql(expr: str) -> str:
    return f"SUM(CASE WHEN {expr} THEN 0 ELSE 1 END) = 0"


def some_violate_sql(false_expr: str) -> str:
    # counts tuples where the condition is definitely false; unknowns do not count
    return f"SUM(CASE WHEN {false_expr} THEN 1 ELSE 0 END) >= 1"


def some_null_sql(attr: AttrRef) -> str:
    return f"SUM(CASE WHEN {attr.sql} IS NULL THEN 1 ELSE 0 END) >= 1"


# -- queries for situations ---------------------------------------------------

def pin_value_sql(value) -> str:
    if isinstance(value, float):
        value = Decimal(repr(value))
    return literal(value)


def build_query(ctx: ContextQuery, situation: Situation) -> Query:
    """Render ``situation`` over the context as an executable coverage query."""
    if situation.broken is not None:
        return _broken_query(ctx, situation)
    if ctx.shape == "frame":
        having = [Cond("COUNT(*) >= 1")]
        for idx, value in situation.truth:
            f = ctx.fragments[idx]
            sql = all_satisfy_sql(f.true_expr) if value else some_violate_sql(f.false_expr)
            having.append(Cond(sql))
        for attr in situation.nulls:
            having.append(Cond(some_null_sql(attr)))
        for idx, value in situation.pins:
            operand = ctx.atoms[idx].operand.sql
            having.append(Cond(f"SUM(CASE WHEN {operand} = {pin_value_sql(value)} "
                               "THEN 1 ELSE 0 END) >= 1"))
        return Query(ctx.from_chain, ctx.structural, ctx.grouping, tuple(having), ctx.select)
    conds: list[Cond] = []
    for idx, value in situation.truth:
        f = ctx.fragments[idx]
        conds.extend(f.true if value else f.false)
    for attr in situation.nulls:
        conds.append(Cond(f"{attr.sql} IS NULL", (("null", attr.sql),)))
    for idx, value in situation.pins:
        atom = ctx.atoms[idx]
        operand = _operand_sql(ctx, atom)
        facts = (("cmp", operand, "eq", value),) + tuple(
            ("notnull", r.sql) for r in ([] if atom.quantified else [atom.operand]))
        conds.append(Cond(f"{operand} = {pin_value_sql(value)}", facts))
    if ctx.shape == "quant":
        return Query(ctx.from_chain, ctx.structural, ctx.grouping, tuple(conds), ctx.select)
    return Query(ctx.from_chain, ctx.structural + tuple(conds))


def _operand_sql(ctx: ContextQuery, atom: Atom) -> str:
    return ctx.count_sql if atom.quantified else atom.operand.sql


def _broken_query(ctx: ContextQuery, situation: Situation) -> Query:
    """Kept half of the path joined normally, the neighbour anti-joined."""
    kept, neighbour = broken_halves(ctx, situation.broken)
    anchors = [i for i in kept if _is_anchor_level(ctx.schema, ctx.path.steps[i].entity)]
    joins, structural, _ = _chain(ctx.schema, ctx.path, kept, anchors)
    step = ctx.path.steps[neighbour]
    pred = ctx.path.predicates[situation.broken]
    joins.append(Join("LEFT", step.entity, step.alias, _pred_conds(pred)))
    conds = list(structural)
    conds.append(Cond(f"{_key_column(ctx.schema, step.alias, step.entity)} IS NULL"))
    for idx, value in situation.truth:
        f = ctx.fragments[idx]
        conds.extend(f.true if value else f.false)
    return Query(tuple(joins), tuple(conds))
