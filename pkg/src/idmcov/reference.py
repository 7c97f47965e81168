"""Reference interpreter: decides a coverage requirement directly on a snapshot.

It never looks at generated SQL. The rule's context is rebuilt as a filtered
Cartesian product of the path's tuples (each UI tuple tied to a test case
through its foreign-key route), and atoms are evaluated in three-valued
logic with None standing for unknown.
"""
from __future__ import annotations

import re
from decimal import Decimal
from functools import lru_cache

from .compiler import Situation, split_atoms
from .dataset import DbSnapshot
from .errors import BudgetError
from .lang.ast import BinOp, BusinessRule, Neg, Num, Str
from .model import TESTCASE, UI, AttrRef, IdmSchema, anchor_route

DEFAULT_BUDGET = 1000


# -- values -------------------------------------------------------------------

def eval_arith(expr, env):
    if isinstance(expr, (Num, Str)):
        return expr.value
    if isinstance(expr, AttrRef):
        return env[expr.alias][expr.attribute]
    if isinstance(expr, Neg):
        v = eval_arith(expr.operand, env)
        return None if v is None else -v
    if isinstance(expr, BinOp):
        a, b = eval_arith(expr.left, env), eval_arith(expr.right, env)
        if a is None or b is None:
            return None
        if expr.op == "+":
            return a + b
        if expr.op == "-":
            return a - b
        if expr.op == "*":
            return a * b
        if b == 0:
            return None
        if isinstance(a, int) and isinstance(b, int):
            q = abs(a) // abs(b)
            return q if (a >= 0) == (b >= 0) else -q
        return Decimal(a) / Decimal(b)
    raise TypeError(f"not an arithmetic node: {expr!r}")


@lru_cache(maxsize=256)
def _like_regex(pattern: str) -> re.Pattern:
    out = []
    for ch in pattern:
        if ch == "%":
            out.append(".*")
        elif ch == "_":
            out.append(".")
        else:
            out.append(re.escape(ch))
    return re.compile("".join(out), re.DOTALL)


def compare(op: str, a, b):
    """Three-valued comparison: None when either side is unknown."""
    if a is None or b is None:
        return None
    if op == "like":
        return _like_regex(b).fullmatch(a) is not None
    if op == "eq":
        return a == b
    if op == "ne":
        return a != b
    if op == "ge":
        return a >= b
    return a <= b


# -- contexts -----------------------------------------------------------------

def _route_constraints(schema, path, indices):
    """Extra variables and equality constraints tying UI steps to TestCase."""
    var_of: dict[str, str] = {}
    for i in indices:
        var_of.setdefault(path.steps[i].entity.lower(), path.steps[i].alias)
    extra: list[tuple[str, str]] = []
    cons = []
    for i in indices:
        if schema.level_of(path.steps[i].entity) != UI:
            continue
        for edge in anchor_route(schema, path.steps[i].entity) or []:
            names = []
            for ent in (edge.parent, edge.child):
                v = var_of.get(ent.lower())
                if v is None:
                    v = "@" + ent
                    var_of[ent.lower()] = v
                    extra.append((v, ent))
                names.append(v)
            pv, cv = names
            pairs = edge.pairs()
            cons.append(((pv, cv), lambda env, pv=pv, cv=cv, pairs=pairs: all(
                compare("eq", env[pv][pa], env[cv][ca]) is True for pa, ca in pairs)))
    return extra, cons


def _predicate_constraint(pred):
    aliases = set()
    for left, right in pred.conjuncts:
        aliases.add(left.alias)
        if isinstance(right, AttrRef):
            aliases.add(right.alias)

    def check(env):
        for left, right in pred.conjuncts:
            rv = eval_arith(right, env) if isinstance(right, AttrRef) else right.value
            if compare("eq", env[left.alias][left.attribute], rv) is not True:
                return False
        return True
    return tuple(sorted(aliases)), check


def _solve(variables, constraints, snapshot, budget, base=None):
    """All bindings of ``variables`` (name, entity) satisfying every constraint."""
    base = dict(base or {})
    order = [name for name, _ in variables]
    pending = {}
    for names, check in constraints:
        last = max((order.index(n) for n in names if n in order), default=-1)
        pending.setdefault(last, []).append(check)
    out = []

    def walk(k, env):
        if k == len(variables):
            out.append(dict(env))
            if len(out) > budget:
                raise BudgetError(f"context exceeds {budget} tuples")
            return
        name, entity = variables[k]
        for row in snapshot.rows(entity):
            env[name] = row
            if all(check(env) for check in pending.get(k, ())):
                walk(k + 1, env)
        env.pop(name, None)

    if all(check(base) for check in pending.get(-1, ())):
        walk(0, base)
    return out


def build_context(schema, path, snapshot, indices=None, budget=DEFAULT_BUDGET,
                  anchored=True, base=None):
    indices = list(range(len(path.steps))) if indices is None else list(indices)
    extra, cons = _route_constraints(schema, path, indices) if anchored else ([], [])
    variables = extra + [(path.steps[i].alias, path.steps[i].entity) for i in indices]
    known = {n for n, _ in variables} | set(base or ())
    for k, pred in enumerate(path.predicates):
        names, check = _predicate_constraint(pred)
        if set(names) <= known and (k in indices or k + 1 in indices):
            cons.append((names, check))
    return _solve(variables, cons, snapshot, budget, base)


# -- requirement decision -----------------------------------------------------

def _atom_value(atom, env, count=None):
    left = count if atom.quantified else eval_arith(atom.operand, env)
    return compare(atom.op, left, eval_arith(atom.bound, env))


def _row_ok(atoms, situation, env, count=None) -> bool:
    for idx, want in situation.truth:
        if _atom_value(atoms[idx], env, count) is not want:
            return False
    for attr in situation.nulls:
        if env[attr.alias][attr.attribute] is not None:
            return False
    for idx, value in situation.pins:
        atom = atoms[idx]
        left = count if atom.quantified else eval_arith(atom.operand, env)
        if compare("eq", left, value) is not True:
            return False
    return True


def _anchor_level(schema, entity) -> bool:
    return schema.level_of(entity) in (UI, TESTCASE)


def reference_evaluate(rule: BusinessRule, situation: Situation, snapshot: DbSnapshot,
                       schema: IdmSchema, *, budget: int = DEFAULT_BUDGET) -> bool:
    """Whether ``snapshot`` exercises ``situation`` for ``rule``."""
    tree, atoms = split_atoms(rule)
    path = rule.path
    n = len(path.steps)
    if situation.broken is not None:
        i = situation.broken
        right = list(range(i + 1, n))
        if any(_anchor_level(schema, path.steps[k].entity) for k in right):
            kept, other = right, i
        else:
            kept, other = list(range(i + 1)), i + 1
        _, check = _predicate_constraint(path.predicates[i])
        neighbour = path.steps[other]
        for env in build_context(schema, path, snapshot, kept, budget):
            if any(check({**env, neighbour.alias: row})
                   for row in snapshot.rows(neighbour.entity)):
                continue
            if _row_ok(atoms, situation, env):
                return True
        return False
    if atoms and atoms[0].quantified:
        return _quantified(rule, atoms, situation, snapshot, schema, budget)
    envs = build_context(schema, path, snapshot, None, budget)
    if rule.frame is None:
        return any(_row_ok(atoms, situation, env) for env in envs)
    groups: dict[tuple, list] = {}
    for env in envs:
        key = tuple(_hashable(eval_arith(g, env)) for g in rule.frame.group_attrs)
        groups.setdefault(key, []).append(env)
    return any(_frame_ok(atoms, situation, members) for members in groups.values())


def _hashable(v):
    return ("null",) if v is None else ("v", v)


def _frame_ok(atoms, situation, members) -> bool:
    for idx, want in situation.truth:
        values = [_atom_value(atoms[idx], env) for env in members]
        if want and not all(v is True for v in values):
            return False
        if not want and not any(v is False for v in values):
            return False
    for attr in situation.nulls:
        if not any(env[attr.alias][attr.attribute] is None for env in members):
            return False
    for idx, value in situation.pins:
        operand = atoms[idx].operand
        if not any(compare("eq", eval_arith(operand, env), value) is True for env in members):
            return False
    return True


def _quantified(rule, atoms, situation, snapshot, schema, budget) -> bool:
    path = rule.path
    cond = atoms[0].condition
    r = path.index(cond.r_entity.alias)
    s = path.index(cond.s_entity.alias)
    seen: set[int] = set()
    for env in build_context(schema, path, snapshot, [r], budget):
        row = env[path.steps[r].alias]
        if id(row) in seen:
            continue
        seen.add(id(row))
        chains = build_context(schema, path, snapshot, range(r + 1, s + 1), budget,
                               anchored=False, base={path.steps[r].alias: row})
        if _row_ok(atoms, situation, env, count=len(chains)):
            return True
    return False


def reference_covers(coverage_rule, snapshot: DbSnapshot, schema: IdmSchema, *,
                     budget: int = DEFAULT_BUDGET) -> bool:
    return reference_evaluate(coverage_rule.source_rule, coverage_rule.requirement.situation,
                              snapshot, schema, budget=budget)
