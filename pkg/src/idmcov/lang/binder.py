"""Binding of parsed rules against an IDM schema."""
from __future__ import annotations

from collections import Counter
from typing import Iterable

from ..errors import BindError, ResolveError
from ..model import AttrRef, IdmSchema, resolve_attribute
from .ast import (CONSTRAINT_CARDINALITY, CONSTRAINT_VALUES, DERIVATION_ALL_FRAME,
                  DERIVATION_CARDINALITY, DERIVATION_SOME_TUPLE, RULE_KINDS, Action, And,
                  BinOp, BusinessRule, FrameDecl, FrameExpr, JoinPredicate, Neg, Num, Or,
                  PathDecl, PathExpr, PathStep, QuantCondition, Ref, RuleDecl, RuleFile, Str,
                  ValueCondition, arith_refs, fold_constant, iter_conditions)


class _Binder:
    def __init__(self, parsed: RuleFile, schema: IdmSchema, source: str | None):
        self.parsed = parsed
        self.schema = schema
        self.source = source
        self.paths: dict[str, PathExpr] = {}
        self.frames: dict[str, FrameExpr] = {}

    def error(self, message: str, loc=None) -> BindError:
        return BindError(message, loc.line if loc else None, loc.column if loc else None,
                         self.source)

    # -- paths and frames
    def bind_path(self, decl: PathDecl) -> PathExpr:
        steps: list[PathStep] = []
        seen: Counter = Counter()
        for name in decl.steps:
            ent = self.schema.entity(name)
            if ent is None:
                raise self.error(f"unknown entity {name} in path {decl.name}", decl.loc)
            seen[ent.name.lower()] += 1
            n = seen[ent.name.lower()]
            steps.append(PathStep(ent.name, ent.name if n == 1 else f"{ent.name}{n}"))
        preds = []
        for i, raw in enumerate(decl.predicates):
            left, right = steps[i], steps[i + 1]
            if raw is None:
                preds.append(self._fk_predicate(decl, left, right))
            else:
                preds.append(self._explicit_predicate(decl, left, right, raw))
        return PathExpr(decl.name, tuple(steps), tuple(preds))

    def _fk_predicate(self, decl: PathDecl, left: PathStep, right: PathStep) -> JoinPredicate:
        rels = self.schema.fk_between(left.entity, right.entity)
        if not rels:
            raise self.error(f"no foreign key connects {left.entity} and {right.entity} "
                             f"in path {decl.name}; write the join predicate explicitly",
                             decl.loc)
        if len(rels) > 1:
            raise self.error(f"several foreign keys connect {left.entity} and {right.entity} "
                             f"in path {decl.name}: {', '.join(r.name for r in rels)}",
                             decl.loc)
        rel = rels[0]
        conj = []
        for la, ra in rel.oriented(left.entity):
            conj.append((self._attr(left, la), self._attr(right, ra)))
        return JoinPredicate(tuple(conj), rel.name)

    def _attr(self, step: PathStep, name: str) -> AttrRef:
        d = self.schema.entity(step.entity).attribute(name)
        return AttrRef(step.alias, step.entity, d.name, d)

    def _explicit_predicate(self, decl, left, right, raw) -> JoinPredicate:
        pair = PathExpr(decl.name, (left, right), ())
        conj = []
        links = False
        for cmp in raw:
            a = self._resolve(pair, cmp.left.parts, cmp.left.loc)
            if isinstance(cmp.right, Ref):
                b = self._resolve(pair, cmp.right.parts, cmp.right.loc)
                if not _comparable(a.definition, b.definition):
                    raise self.error(f"{a} and {b} are not comparable", cmp.left.loc)
                if a.alias != b.alias:
                    links = True
            else:
                b = cmp.right
                _check_literal(self, a, b, cmp.left.loc)
            conj.append((a, b))
        if not links:
            raise self.error(f"join predicate between {left.alias} and {right.alias} in path "
                             f"{decl.name} must compare an attribute of each", decl.loc)
        return JoinPredicate(tuple(conj), None)

    def _resolve(self, path: PathExpr, parts: tuple[str, ...], loc) -> AttrRef:
        try:
            return resolve_attribute(self.schema, path, ".".join(parts))
        except ResolveError as exc:
            raise self.error(str(exc), loc) from None

    def bind_frame(self, decl: FrameDecl) -> FrameExpr:
        path = self.paths.get(decl.path.lower())
        if path is None:
            raise self.error(f"frame {decl.name} refers to unknown path {decl.path}", decl.loc)
        attrs = []
        for ref in decl.group:
            parts = ref.parts
            if len(parts) > 1 and parts[0].lower() == path.name.lower():
                parts = parts[1:]
            attrs.append(self._resolve(path, parts, ref.loc))
        return FrameExpr(decl.name, path, tuple(attrs))

    # -- rules
    def context_of(self, rule: RuleDecl):
        refs = []
        for cond in iter_conditions(rule.condition):
            if isinstance(cond, ValueCondition):
                refs.append(cond.operand)
                refs += arith_refs(cond.bound_p) + arith_refs(cond.bound_q)
            else:
                refs += [cond.r_entity, cond.s_entity]
                refs += arith_refs(cond.bound_p) + arith_refs(cond.bound_q)
        contexts: dict[str, object] = {}
        for ref in refs:
            head = ref.parts[0].lower()
            if len(ref.parts) < 2:
                continue
            if head in self.frames:
                contexts[f"frame:{head}"] = self.frames[head]
            elif head in self.paths:
                contexts[f"path:{head}"] = self.paths[head]
            elif self.schema.entity(head) is not None:
                ent = self.schema.entity(head)
                step = PathStep(ent.name, ent.name)
                contexts[f"entity:{head}"] = PathExpr(ent.name, (step,), (), implicit=True)
            else:
                raise self.error(f"unknown path, frame or entity {ref.parts[0]}", ref.loc)
        if not contexts:
            raise self.error(f"rule {rule.name} has no qualified reference to fix its path",
                             rule.loc)
        frames = [c for k, c in contexts.items() if k.startswith("frame:")]
        if len(frames) > 1:
            raise self.error(f"rule {rule.name}: atoms span different frames", rule.loc)
        if frames:
            frame = frames[0]
            others = [c for k, c in contexts.items() if not k.startswith("frame:")]
            if any(o is not frame.path for o in others):
                raise self.error(f"rule {rule.name}: atoms span different paths", rule.loc)
            return frame
        if len(contexts) > 1:
            raise self.error(f"rule {rule.name}: atoms span different paths", rule.loc)
        return next(iter(contexts.values()))

    def _strip(self, ctx, ref: Ref) -> tuple[str, ...]:
        parts = ref.parts
        names = {ctx.name.lower()}
        if isinstance(ctx, FrameExpr):
            names.add(ctx.path.name.lower())
        if len(parts) > 1 and parts[0].lower() in names:
            return parts[1:]
        return parts

    def ref(self, ctx, ref: Ref) -> AttrRef:
        path = ctx.path if isinstance(ctx, FrameExpr) else ctx
        return self._resolve(path, self._strip(ctx, ref), ref.loc)

    def arith(self, ctx, expr, loc=None):
        if isinstance(expr, Ref):
            return self.ref(ctx, expr)
        if isinstance(expr, BinOp):
            left, right = self.arith(ctx, expr.left, loc), self.arith(ctx, expr.right, loc)
            if expr.op == "/" and fold_constant(right) == 0:
                raise self.error("division by constant zero", loc)
            return BinOp(expr.op, left, right)
        if isinstance(expr, Neg):
            return Neg(self.arith(ctx, expr.operand, loc))
        return expr

    def step(self, ctx, ref: Ref) -> PathStep:
        path = ctx.path if isinstance(ctx, FrameExpr) else ctx
        parts = self._strip(ctx, ref)
        if len(parts) != 1:
            raise self.error(f"{ref} is not an entity of path {path.name}", ref.loc)
        name = parts[0].lower()
        hits = [s for s in path.steps if s.alias.lower() == name]
        hits = hits or [s for s in path.steps if s.entity.lower() == name]
        if len(hits) != 1:
            raise self.error(f"{ref} is not a unique entity of path {path.name}", ref.loc)
        return hits[0]

    def condition(self, ctx, expr, form: str):
        if isinstance(expr, (And, Or)):
            return type(expr)(tuple(self.condition(ctx, i, form) for i in expr.items))
        if isinstance(expr, ValueCondition):
            return self.value_condition(ctx, expr)
        return self.quant_condition(ctx, expr)

    def value_condition(self, ctx, cond: ValueCondition) -> ValueCondition:
        operand = self.ref(ctx, cond.operand)
        p = self.arith(ctx, cond.bound_p, cond.loc)
        q = self.arith(ctx, cond.bound_q, cond.loc) if cond.bound_q is not None else None
        if cond.comparator == "like":
            if not isinstance(p, Str):
                raise self.error("like needs a text pattern literal", cond.loc)
            if operand.kind != "text":
                raise self.error(f"like on non-text attribute {operand}", cond.loc)
        for bound in (p, q):
            if bound is not None:
                _check_bound(self, operand, bound, cond.loc)
        if cond.universal and not isinstance(ctx, FrameExpr):
            raise self.error("'each' on a condition needs a frame context", cond.loc)
        return ValueCondition(operand, cond.comparator, p, q, cond.universal, cond.loc)

    def quant_condition(self, ctx, cond: QuantCondition) -> QuantCondition:
        if isinstance(ctx, FrameExpr):
            raise self.error("quantification conditions are not allowed over frames", cond.loc)
        r = self.step(ctx, cond.r_entity)
        s = self.step(ctx, cond.s_entity)
        path = ctx
        if path.index(r.alias) != 0 or path.index(s.alias) != len(path.steps) - 1:
            raise self.error(f"quantification must relate the first ({path.steps[0]}) and "
                             f"last ({path.steps[-1]}) entities of path {path.name}", cond.loc)
        if r.alias == s.alias:
            raise self.error("quantification needs two different entities", cond.loc)
        bounds = []
        for raw in (cond.bound_p, cond.bound_q):
            if raw is None:
                bounds.append(None)
                continue
            b = self.arith(ctx, raw, cond.loc)
            for ref in arith_refs(b):
                if ref.alias != r.alias or ref.kind != "integer":
                    raise self.error(f"count bound may only use integer attributes of {r}",
                                     cond.loc)
            if isinstance(b, Str):
                raise self.error("count bound must be an integer expression", cond.loc)
            value = fold_constant(b)
            if value is not None and (value != int(value) or value < 0):
                raise self.error("count bound must evaluate to an integer >= 0", cond.loc)
            bounds.append(b)
        return QuantCondition(r, s, cond.comparator, bounds[0], bounds[1], cond.loc)

    def rule(self, decl: RuleDecl) -> BusinessRule:
        ctx = self.context_of(decl)
        cond = self.condition(ctx, decl.condition, decl.form)
        atoms = list(iter_conditions(cond))
        quant = [a for a in atoms if isinstance(a, QuantCondition)]
        if quant and len(quant) != len(atoms):
            raise self.error(f"rule {decl.name} mixes value and quantification conditions",
                             decl.loc)
        pairs = {(a.r_entity.alias, a.s_entity.alias) for a in quant}
        if len(pairs) > 1:
            raise self.error(f"rule {decl.name}: all quantification conditions must relate "
                             "the same pair of entities", decl.loc)
        universal = [a for a in atoms if isinstance(a, ValueCondition) and a.universal]
        if decl.form == "constraint" and isinstance(ctx, FrameExpr):
            raise self.error(f"constraint rule {decl.name} must be written over a path",
                             decl.loc)
        if isinstance(ctx, FrameExpr) and len(universal) != len(atoms):
            raise self.error(f"rule {decl.name}: every condition over frame {ctx.name} must "
                             "start with 'each'", decl.loc)
        actions = tuple(Action(self.ref(ctx, a.target), self.arith(ctx, a.value, decl.loc))
                        for a in decl.actions)
        rule = BusinessRule(decl.name, "", ctx, cond, actions, self.parsed.assignment,
                            decl.loc)
        return BusinessRule(decl.name, classify_rule(rule), ctx, cond, actions,
                            self.parsed.assignment, decl.loc)

    def run(self) -> list[BusinessRule]:
        for p in self.parsed.paths:
            self.paths[p.name.lower()] = self.bind_path(p)
        for f in self.parsed.frames:
            self.frames[f.name.lower()] = self.bind_frame(f)
        names: set[str] = set()
        out = []
        for decl in self.parsed.rules:
            if decl.name.lower() in names:
                raise self.error(f"duplicate rule name {decl.name}", decl.loc)
            names.add(decl.name.lower())
            out.append(self.rule(decl))
        return out


def _comparable(a, b) -> bool:
    if a.numeric and b.numeric:
        return True
    return a.kind == b.kind


def _check_literal(binder: _Binder, attr: AttrRef, lit, loc) -> None:
    if isinstance(lit, Str):
        if attr.definition.numeric:
            raise binder.error(f"{attr} is numeric but compared with text", loc)
    elif isinstance(lit, Num) and not attr.definition.numeric:
        raise binder.error(f"{attr} is {attr.kind} but compared with a number", loc)


def _check_bound(binder: _Binder, operand: AttrRef, bound, loc) -> None:
    """Operand and bound must be comparable: numbers with numbers, text with text."""
    refs = arith_refs(bound)
    arithmetic = isinstance(bound, (BinOp, Neg))
    if operand.definition.numeric:
        if isinstance(bound, Str) or _has_text(bound):
            raise binder.error(f"{operand} is numeric but compared with text", loc)
        for r in refs:
            if not r.definition.numeric:
                raise binder.error(f"{r} is not numeric", loc)
        return
    if arithmetic:
        raise binder.error(f"arithmetic is not allowed on {operand.kind} attribute {operand}",
                           loc)
    if isinstance(bound, Num):
        raise binder.error(f"{operand} is {operand.kind} but compared with a number", loc)
    for r in refs:
        if r.kind != operand.kind:
            raise binder.error(f"{operand} and {r} are not comparable", loc)


def _has_text(expr) -> bool:
    if isinstance(expr, Str):
        return True
    if isinstance(expr, BinOp):
        return _has_text(expr.left) or _has_text(expr.right)
    if isinstance(expr, Neg):
        return _has_text(expr.operand)
    return False


def bind_rules(parsed: RuleFile, schema: IdmSchema, *, source: str | None = None
               ) -> list[BusinessRule]:
    """Resolve every reference of ``parsed`` against ``schema``."""
    return _Binder(parsed, schema, source).run()


def classify_rule(rule: BusinessRule) -> str:
    atoms = list(iter_conditions(rule.condition))
    quant = all(isinstance(a, QuantCondition) for a in atoms)
    if not rule.actions:
        return CONSTRAINT_CARDINALITY if quant else CONSTRAINT_VALUES
    if quant:
        return DERIVATION_CARDINALITY
    if rule.frame is not None and all(a.universal for a in atoms):
        return DERIVATION_ALL_FRAME
    return DERIVATION_SOME_TUPLE


def kind_tally(rules: Iterable[BusinessRule]) -> dict[str, int]:
    tally = {k: 0 for k in RULE_KINDS}
    for r in rules:
        tally[classify_rule(r)] += 1
    return tally
