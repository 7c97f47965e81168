"""Pretty-printer for parsed rule files; its output parses back to an equal tree."""
from __future__ import annotations

from ..model import AttrRef
from .ast import (And, BinOp, Neg, Num, Or, PathStep, QuantCondition, Ref, RuleDecl, RuleFile,
                  Str, ValueCondition)

_PHRASE = {"at_least": "at least", "at_most": "at most", "exactly": "exactly",
           "different_to": "different to", "like": "like"}


def render_arith(expr) -> str:
    if isinstance(expr, Num):
        return str(expr.value)
    if isinstance(expr, Str):
        return "'" + expr.value.replace("'", "''") + "'"
    if isinstance(expr, (Ref, AttrRef, PathStep)):
        return str(expr)
    if isinstance(expr, Neg):
        return "-" + render_arith(expr.operand)
    if isinstance(expr, BinOp):
        return f"({render_arith(expr.left)} {expr.op} {render_arith(expr.right)})"
    raise TypeError(f"not an arithmetic node: {expr!r}")


def render_comparison(comparator: str, p, q) -> str:
    if comparator == "range":
        return f"at least {render_arith(p)} and at most {render_arith(q)}"
    return f"{_PHRASE[comparator]} {render_arith(p)}"


def render_condition(expr, form: str, parent: str | None = None) -> str:
    if isinstance(expr, (And, Or)):
        word = " and " if isinstance(expr, And) else " or "
        mine = "and" if isinstance(expr, And) else "or"
        text = word.join(render_condition(i, form, mine) for i in expr.items)
        # "and" binds tighter, so only an "or" under an "and" (or any same-kind
        # nesting, which the parser would otherwise flatten) needs parentheses.
        if parent is not None and (parent == mine or mine == "or"):
            return f"({text})"
        return text
    if isinstance(expr, ValueCondition):
        verb = "must be" if form == "constraint" else "is"
        each = "each " if expr.universal else ""
        return f"{each}{expr.operand} {verb} " + render_comparison(
            expr.comparator, expr.bound_p, expr.bound_q)
    if isinstance(expr, QuantCondition):
        verb = "must have" if form == "constraint" else "has"
        return (f"{expr.r_entity} {verb} "
                f"{render_comparison(expr.comparator, expr.bound_p, expr.bound_q)} "
                f"{expr.s_entity}")
    raise TypeError(f"not a condition node: {expr!r}")


def render_rule(rule: RuleDecl) -> str:
    cond = render_condition(rule.condition, rule.form)
    if rule.form == "constraint":
        return f"Rule {rule.name}: Each {cond}"
    actions = ", ".join(f"{a.target} = {render_arith(a.value)}" for a in rule.actions)
    return f"Rule {rule.name}: If {cond} then {actions}"


def render_rules(parsed: RuleFile) -> str:
    lines = []
    if parsed.assignment:
        lines.append(f"assignment {parsed.assignment}")
    for p in parsed.paths:
        text = f"Path {p.name} is {p.steps[0]}"
        for pred, step in zip(p.predicates, p.steps[1:]):
            inner = "" if pred is None else " and ".join(
                f"{c.left} = {render_arith(c.right)}" for c in pred)
            text += f"[{inner}]{step}"
        lines.append(text)
    for f in parsed.frames:
        lines.append(f"Frame {f.name} is {f.path} // " + ", ".join(str(g) for g in f.group))
    for r in parsed.rules:
        lines.append(render_rule(r))
    return "\n".join(lines) + "\n"
