"""Coverage-rule derivation: masking MCDC over conditions, join violations, nulls.

For every business rule the engine emits, in this order:

* one JoinViolation rule per breakable path predicate,
* one AllTrue rule (every atom holds),
* one ConditionFlip rule per further assignment of the masking-MCDC set,
* one NullValue rule per nullable attribute the atoms reference,
* optionally Boundary rules pinning numeric operands at and next to their bounds.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from decimal import Decimal

from .compiler import (Atom, ContextQuery, Situation, build_query, compile_context,
                       evaluate_tree, reachable_atoms)
from .errors import BudgetError
from .lang.ast import And, BusinessRule, Or, fold_constant
from .model import AttrRef, IdmSchema
from .sql import Query, normalize

log = logging.getLogger(__name__)

ATOM_BUDGET = 16
JOIN_VIOLATION = "JoinViolation"
ALL_TRUE = "AllTrue"
CONDITION_FLIP = "ConditionFlip"
NULL_VALUE = "NullValue"
BOUNDARY = "Boundary"
REQUIREMENT_CLASSES = (JOIN_VIOLATION, ALL_TRUE, CONDITION_FLIP, NULL_VALUE, BOUNDARY)


# -- masking MCDC -------------------------------------------------------------

@dataclass(frozen=True)
class Variant:
    """A truth assignment selected by the criterion."""

    assignment: tuple[bool, ...]
    outcome: bool
    determines: tuple[int, ...]


def _leaf_contexts(tree) -> dict[int, list[tuple[type, tuple]]]:
    """For each atom index: the (node type, sibling subtrees) along its root path."""
    out: dict[int, list[tuple[type, tuple]]] = {}

    def walk(node, trail):
        if isinstance(node, (And, Or)):
            for i, child in enumerate(node.items):
                siblings = node.items[:i] + node.items[i + 1:]
                walk(child, trail + [(type(node), siblings)])
        else:
            out[node.index] = trail

    walk(tree, [])
    return out


def masked_determining(tree, assignment, atom: int, contexts=None) -> bool:
    """Whether ``atom`` alone decides the outcome, every other operand masked.

    Masking holds when all siblings under each ancestor And evaluate True and
    all siblings under each ancestor Or evaluate False.
    """
    contexts = contexts or _leaf_contexts(tree)
    for kind, siblings in contexts[atom]:
        want = kind is And
        if any(evaluate_tree(s, assignment) != want for s in siblings):
            return False
    return True


def _atom_count(tree) -> int:
    return len(_leaf_contexts(tree))


def _assignment_order(a: tuple[bool, ...]) -> tuple[int, ...]:
    # lexicographic with True before False
    return tuple(0 if v else 1 for v in a)


def derive_condition_variants(tree, n_atoms: int | None = None) -> list[Variant]:
    """Masking-MCDC assignment set, all-true first, then in lexicographic order."""
    contexts = _leaf_contexts(tree)
    n = len(contexts) if n_atoms is None else n_atoms
    if n > ATOM_BUDGET:
        raise BudgetError(f"{n} atoms exceed the MCDC budget of {ATOM_BUDGET}")
    universe = sorted(itertools.product((True, False), repeat=n), key=_assignment_order)
    det = {a: frozenset(i for i in range(n) if masked_determining(tree, a, i, contexts))
           for a in universe}
    outcome = {a: evaluate_tree(tree, a) for a in universe}
    all_true = tuple([True] * n)

    def partners(a, i, pool):
        return [b for b in pool if i in det[b] and b[i] != a[i] and outcome[b] != outcome[a]]

    selected = [all_true]
    covered: set[int] = set()

    def completes(a, pool) -> set[int]:
        return {i for i in det[a] - covered if partners(a, i, pool)}

    pairable = {i for i in range(n) if any(i in det[a] for a in universe)}
    while pairable - covered:
        pool = list(selected)
        best, best_score = None, (0, 0)
        for a in universe:
            if a in selected:
                continue
            score = (len(completes(a, pool)), len(det[a] - covered))
            if score > best_score:
                best, best_score = a, score
        if best is None or best_score[0] == 0 and best_score[1] == 0:
            # no single addition helps: add a complete pair for the first open atom
            i = min(pairable - covered)
            a = next(x for x in universe if i in det[x])
            b = next(y for y in universe if partners(a, i, [y]))
            for x in (a, b):
                if x not in selected:
                    selected.append(x)
        else:
            selected.append(best)
        covered |= {i for i in pairable for a in selected if i in det[a]
                    and partners(a, i, selected)}
    pairs: dict[tuple[bool, ...], set[int]] = {a: set() for a in selected}
    for a in selected:
        for i in det[a]:
            if partners(a, i, selected):
                pairs[a].add(i)
    chosen = [a for a in selected if a == all_true or pairs[a]]
    chosen = [all_true] + sorted((a for a in chosen if a != all_true), key=_assignment_order)
    return [Variant(a, outcome[a], tuple(sorted(pairs[a]))) for a in chosen]


def is_mcdc_set(tree, assignments, n_atoms: int) -> bool:
    """Independent checker: every atom has a masking pair within ``assignments``.

    Determination is re-derived by sensitizing the path: the atom's leaf is
    forced True and False while the rest of the assignment stays fixed, and
    every ancestor must propagate the change.
    """
    def sensitized(a, i) -> bool:
        hi = list(a)
        lo = list(a)
        hi[i], lo[i] = True, False
        return _propagates(tree, i, hi, lo)

    for i in range(n_atoms):
        ok = any(a[i] != b[i] and sensitized(a, i) and sensitized(b, i)
                 and evaluate_tree(tree, a) != evaluate_tree(tree, b)
                 for a in assignments for b in assignments)
        if not ok:
            return False
    return True


def _propagates(node, i, hi, lo) -> bool:
    """Leaf ``i`` flips every ancestor, and every sibling masks (And: True, Or: False)."""
    if not isinstance(node, (And, Or)):
        return node.index == i
    target = [c for c in node.items if i in _indices(c)]
    if not target:
        return False
    want = isinstance(node, And)
    for c in node.items:
        if c is target[0]:
            continue
        if evaluate_tree(c, hi) != want or evaluate_tree(c, lo) != want:
            return False
    return _propagates(target[0], i, hi, lo)


def _indices(node) -> set[int]:
    if isinstance(node, (And, Or)):
        return set().union(*(_indices(c) for c in node.items))
    return {node.index}


def flip_changes_outcome(tree, assignment, atom: int) -> bool:
    """Unique-cause check: toggling only ``atom`` changes the decision."""
    other = list(assignment)
    other[atom] = not other[atom]
    return evaluate_tree(tree, assignment) != evaluate_tree(tree, other)


# -- coverage rules -----------------------------------------------------------

@dataclass(frozen=True)
class Requirement:
    kind: str
    situation: Situation
    atom: int | None = None
    predicate: int | None = None
    attribute: AttrRef | None = None
    edge: object = None
    assignment: tuple[bool, ...] | None = None
    dropped: tuple[int, ...] = ()


@dataclass(frozen=True)
class CoverageRule:
    id: str
    source_rule: BusinessRule = field(repr=False)
    requirement: Requirement
    req_class: str
    sql: str
    description: str
    query: Query = field(repr=False, compare=False)

    @property
    def kind(self) -> str:
        return self.requirement.kind


def _atom_label(atom: Atom, ctx: ContextQuery) -> str:
    return ctx.fragments[atom.index].true_expr


def _predicate_label(ctx: ContextQuery, i: int) -> str:
    steps = ctx.path.steps
    return f"{steps[i].alias}-{steps[i + 1].alias}"


def derive_join_variants(ctx: ContextQuery, rule: BusinessRule) -> list[Requirement]:
    out = []
    for i in ctx.variable_predicates:
        keep = reachable_atoms(ctx, i)
        dropped = tuple(a.index for a in ctx.atoms if a.index not in keep)
        sit = Situation(truth=tuple((k, True) for k in keep), broken=i)
        out.append(Requirement(JOIN_VIOLATION, sit, predicate=i, dropped=dropped))
    return out


def derive_null_variants(ctx: ContextQuery, rule: BusinessRule) -> list[Requirement]:
    attrs: list[AttrRef] = []
    for atom in ctx.atoms:
        for r in atom.nullable_refs():
            if r not in attrs:
                attrs.append(r)
    out = []
    for attr in attrs:
        keep = [a.index for a in ctx.atoms if attr not in a.refs]
        dropped = tuple(a.index for a in ctx.atoms if attr in a.refs)
        sit = Situation(truth=tuple((k, True) for k in keep), nulls=(attr,))
        out.append(Requirement(NULL_VALUE, sit, attribute=attr, dropped=dropped))
    return out


def _step_for(atom: Atom, ctx: ContextQuery):
    if atom.quantified:
        return 1
    d = atom.operand.definition
    if d.kind == "decimal":
        return Decimal(1).scaleb(-(d.scale or 0))
    if d.kind in ("integer", "boolean"):
        return 1
    return None


def boundary_edges(atom: Atom, ctx: ContextQuery) -> list:
    """Pin values for a numeric atom with a constant bound; empty otherwise."""
    if atom.op == "like":
        return []
    step = _step_for(atom, ctx)
    bound = fold_constant(atom.bound)
    if step is None or bound is None or isinstance(bound, str):
        return []
    edges = {"ge": (bound, bound - step), "le": (bound, bound + step),
             "eq": (bound - step, bound, bound + step),
             "ne": (bound - step, bound, bound + step)}[atom.op]
    out = []
    integral = atom.quantified or atom.operand.definition.kind in ("integer", "boolean")
    for v in edges:
        if integral:
            if v != int(v):
                continue
            v = int(v)
        if atom.quantified and v < 0:
            continue
        if not atom.quantified and atom.operand.definition.kind == "boolean" and v not in (0, 1):
            continue
        if not atom.quantified and atom.operand.definition.kind == "decimal":
            d = atom.operand.definition
            v = Decimal(v)
            if d.precision is not None and len(v.as_tuple().digits) > d.precision:
                continue
        if v not in out:
            out.append(v)
    return out


def derive_boundary_variants(ctx: ContextQuery, rule: BusinessRule) -> list[Requirement]:
    out = []
    for atom in ctx.atoms:
        for v in boundary_edges(atom, ctx):
            others = tuple((a.index, True) for a in ctx.atoms if a.index != atom.index)
            sit = Situation(truth=others, pins=((atom.index, v),))
            out.append(Requirement(BOUNDARY, sit, atom=atom.index, edge=v))
    return out


def derive_requirements(ctx: ContextQuery, rule: BusinessRule, *,
                        boundaries: bool = False) -> list[Requirement]:
    reqs = derive_join_variants(ctx, rule)
    for v in derive_condition_variants(ctx.tree, len(ctx.atoms)):
        sit = Situation(truth=tuple(enumerate(v.assignment)))
        if all(v.assignment):
            reqs.append(Requirement(ALL_TRUE, sit, assignment=v.assignment))
        else:
            label = v.determines[0] if v.determines else None
            reqs.append(Requirement(CONDITION_FLIP, sit, atom=label, assignment=v.assignment))
    reqs += derive_null_variants(ctx, rule)
    if boundaries:
        reqs += derive_boundary_variants(ctx, rule)
    return reqs


def _req_class(req: Requirement, ctx: ContextQuery) -> str:
    if req.kind == JOIN_VIOLATION:
        return f"{JOIN_VIOLATION}({_predicate_label(ctx, req.predicate)})"
    if req.kind == CONDITION_FLIP:
        return f"{CONDITION_FLIP}({_atom_label(ctx.atoms[req.atom], ctx)})"
    if req.kind == NULL_VALUE:
        return f"{NULL_VALUE}({req.attribute})"
    if req.kind == BOUNDARY:
        return f"{BOUNDARY}({_atom_label(ctx.atoms[req.atom], ctx)}, {req.edge})"
    return ALL_TRUE


def describe_requirement(req: Requirement, ctx: ContextQuery) -> str:
    name = ctx.path.name
    frame = ctx.rule.frame
    scope = f" (checked per group of frame {frame.name})" if frame is not None else ""
    held = f"all predicates of {name} are fulfilled"
    if req.kind == JOIN_VIOLATION:
        steps = ctx.path.steps
        a, b = steps[req.predicate].alias, steps[req.predicate + 1].alias
        text = f"The predicate of {name} that connects {a} and {b} is not fulfilled"
        text += " and the other predicates of " + name + " are fulfilled" \
            if len(ctx.path.predicates) > 1 else ""
        kept = [ctx.atoms[i].text for i, _ in req.situation.truth]
        if len(kept) == 1:
            text += f"; the condition {kept[0]} holds"
        elif kept:
            text += "; the conditions " + " and ".join(kept) + " hold"
        if req.dropped:
            text += "; conditions on the missing entity are not evaluated: " + \
                ", ".join(ctx.atoms[i].text for i in req.dropped)
        return text
    if req.kind == ALL_TRUE:
        return f"All predicates of the path {name} are fulfilled and all conditions hold{scope}"
    if req.kind == CONDITION_FLIP:
        parts = [f"the condition {ctx.atoms[i].text} is {'true' if v else 'false'}"
                 for i, v in req.situation.truth]
        text = "; ".join([" and ".join(parts)])
        return text[0].upper() + text[1:] + f"; {held}{scope}"
    if req.kind == NULL_VALUE:
        text = f"The path attribute {name}.{req.attribute.attribute} has a missing value"
        rest = [f"the condition {ctx.atoms[i].text} is true" for i, _ in req.situation.truth]
        if rest:
            text += " and " + " and ".join(rest)
        return text + f"; {held}{scope}"
    atom = ctx.atoms[req.atom]
    subject = "the number of related tuples" if atom.quantified else \
        f"{name}.{atom.operand.attribute}"
    return (f"For the condition {atom.text}, {subject} takes the value {req.edge}; "
            f"the other conditions hold and {held}{scope}")


def describe_rule(rule: CoverageRule, schema: IdmSchema | None = None) -> str:
    return rule.description


def derive_coverage_rules(rule: BusinessRule, schema: IdmSchema, *,
                          boundaries: bool = False) -> list[CoverageRule]:
    """Coverage rules of one business rule, before de-duplication."""
    ctx = compile_context(rule, schema)
    out = []
    ordinals: dict[str, int] = {}
    for req in derive_requirements(ctx, rule, boundaries=boundaries):
        ordinals[req.kind] = ordinals.get(req.kind, 0) + 1
        query = build_query(ctx, req.situation)
        out.append(CoverageRule(f"{rule.name}.{req.kind}.{ordinals[req.kind]}", rule, req,
                                _req_class(req, ctx), query.render(),
                                describe_requirement(req, ctx), query))
    return out


def derive_all(rules, schema: IdmSchema, *, boundaries: bool = False) -> list[CoverageRule]:
    derived: list[CoverageRule] = []
    for r in rules:
        derived += derive_coverage_rules(r, schema, boundaries=boundaries)
    return dedupe_filter(derived)


# -- filtering ----------------------------------------------------------------

def unsatisfiable_reason(query: Query) -> str | None:
    """A reason if the query's top-level conjuncts contradict on constants."""
    facts = [f for c in query.conjuncts for f in c.facts]
    if ("const", False) in facts:
        return "statically unsatisfiable: constant false conjunct"
    cols: dict[str, list] = {}
    for f in facts:
        if f[0] in ("cmp", "null", "notnull"):
            cols.setdefault(f[1], []).append(f)
    for col, fs in cols.items():
        if any(f[0] == "null" for f in fs) and any(f[0] != "null" for f in fs):
            return f"statically unsatisfiable: {col} both null and compared"
        try:
            reason = _interval_conflict([f for f in fs if f[0] == "cmp"])
        except TypeError:
            reason = None
        if reason:
            return f"statically unsatisfiable: {col} {reason}"
    return None


def _interval_conflict(cmps) -> str | None:
    eqs = {f[3] for f in cmps if f[2] == "eq"}
    nes = {f[3] for f in cmps if f[2] == "ne"}
    if len(eqs) > 1:
        return "equals two different constants"
    lo, lo_strict, hi, hi_strict = None, False, None, False
    for _, _, op, v in cmps:
        if op in ("ge", "gt") and (lo is None or v > lo or (v == lo and op == "gt")):
            lo, lo_strict = v, op == "gt"
        if op in ("le", "lt") and (hi is None or v < hi or (v == hi and op == "lt")):
            hi, hi_strict = v, op == "lt"
    if lo is not None and hi is not None:
        if lo > hi or (lo == hi and (lo_strict or hi_strict)):
            return "has an empty range"
    if eqs:
        v = next(iter(eqs))
        if v in nes:
            return "equals and differs from the same constant"
        if lo is not None and (v < lo or (v == lo and lo_strict)):
            return "equals a constant below its lower bound"
        if hi is not None and (v > hi or (v == hi and hi_strict)):
            return "equals a constant above its upper bound"
    return None


def filter_with_reasons(rules: list[CoverageRule]) -> tuple[list[CoverageRule],
                                                           list[tuple[CoverageRule, str]]]:
    kept: list[CoverageRule] = []
    removed: list[tuple[CoverageRule, str]] = []
    seen: dict[str, str] = {}
    for rule in rules:
        key = normalize(rule.sql)
        if key in seen:
            removed.append((rule, f"duplicate of {seen[key]}"))
            continue
        reason = unsatisfiable_reason(rule.query)
        if reason:
            removed.append((rule, reason))
            continue
        seen[key] = rule.id
        kept.append(rule)
    return kept, removed


def dedupe_filter(rules: list[CoverageRule]) -> list[CoverageRule]:
    kept, removed = filter_with_reasons(rules)
    for rule, reason in removed:
        log.info("dropped coverage rule %s: %s", rule.id, reason)
    return kept


# -- bundle -------------------------------------------------------------------

BUNDLE_FIELDS = ("id", "class", "rule", "description", "sql")


def render_bundle(rules: list[CoverageRule]) -> str:
    """Plain-text bundle: one blank-line separated record per coverage rule."""
    records = []
    for r in rules:
        values = (r.id, r.req_class, r.source_rule.name, r.description, r.sql)
        records.append("\n".join(f"{k}: {str(v).replace(chr(10), ' ')}"
                                 for k, v in zip(BUNDLE_FIELDS, values)))
    return "\n\n".join(records) + ("\n" if records else "")


def parse_bundle(text: str) -> list[dict[str, str]]:
    out = []
    for block in text.strip().split("\n\n"):
        if not block.strip():
            continue
        rec = {}
        for line in block.splitlines():
            key, _, value = line.partition(": ")
            rec[key] = value
        out.append(rec)
    return out
