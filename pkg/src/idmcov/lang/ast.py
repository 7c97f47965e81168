"""Syntax trees for the business-rule language.

The parser produces trees whose references are raw :class:`Ref` name
sequences; binding swaps them for :class:`~idmcov.model.AttrRef` and
:class:`PathStep` objects. Condition and arithmetic node classes are shared
between both stages. Source locations never take part in equality.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from decimal import Decimal
from typing import Union

from ..model import AttrRef

CONSTRAINT_VALUES = "ConstraintValues"
CONSTRAINT_CARDINALITY = "ConstraintCardinality"
DERIVATION_SOME_TUPLE = "DerivationSomeTuple"
DERIVATION_ALL_FRAME = "DerivationAllFrame"
DERIVATION_CARDINALITY = "DerivationCardinality"
RULE_KINDS = (CONSTRAINT_VALUES, CONSTRAINT_CARDINALITY, DERIVATION_SOME_TUPLE,
              DERIVATION_ALL_FRAME, DERIVATION_CARDINALITY)

COMPARATORS = ("at_least", "at_most", "exactly", "different_to", "like", "range")


@dataclass(frozen=True)
class Loc:
    line: int
    column: int


def _loc():
    return field(default=None, compare=False, repr=False)


# -- arithmetic ---------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: Union[int, Decimal]


@dataclass(frozen=True)
class Str:
    value: str


@dataclass(frozen=True)
class Ref:
    parts: tuple[str, ...]
    loc: Loc | None = _loc()

    def __str__(self) -> str:
        return ".".join(self.parts)


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class Neg:
    operand: object


def arith_refs(expr) -> list:
    """Attribute/raw references occurring in an arithmetic expression."""
    if isinstance(expr, (Ref, AttrRef)):
        return [expr]
    if isinstance(expr, BinOp):
        return arith_refs(expr.left) + arith_refs(expr.right)
    if isinstance(expr, Neg):
        return arith_refs(expr.operand)
    return []


def fold_constant(expr):
    """Value of a reference-free arithmetic expression, or None if it has references.

    Integer division truncates toward zero, matching SQL engines.
    """
    if isinstance(expr, Num):
        return expr.value
    if isinstance(expr, Str):
        return expr.value
    if isinstance(expr, Neg):
        v = fold_constant(expr.operand)
        return None if v is None or isinstance(v, str) else -v
    if isinstance(expr, BinOp):
        a, b = fold_constant(expr.left), fold_constant(expr.right)
        if a is None or b is None or isinstance(a, str) or isinstance(b, str):
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
    return None


# -- conditions ---------------------------------------------------------------

@dataclass(frozen=True)
class ValueCondition:
    """``operand`` compared with ``bound_p`` (and ``bound_q`` for ranges)."""

    operand: object
    comparator: str
    bound_p: object
    bound_q: object = None
    universal: bool = False
    loc: Loc | None = _loc()


@dataclass(frozen=True)
class QuantCondition:
    """Number of ``s_entity`` tuples related to one ``r_entity`` tuple."""

    r_entity: object
    s_entity: object
    comparator: str
    bound_p: object
    bound_q: object = None
    loc: Loc | None = _loc()


@dataclass(frozen=True)
class And:
    items: tuple


@dataclass(frozen=True)
class Or:
    items: tuple


def iter_conditions(expr):
    if isinstance(expr, (And, Or)):
        for item in expr.items:
            yield from iter_conditions(item)
    else:
        yield expr


# -- declarations -------------------------------------------------------------

@dataclass(frozen=True)
class JoinCmp:
    left: object
    right: object


@dataclass(frozen=True)
class PathDecl:
    name: str
    steps: tuple[str, ...]
    predicates: tuple  # per adjacent pair: tuple[JoinCmp, ...] or None
    loc: Loc | None = _loc()


@dataclass(frozen=True)
class FrameDecl:
    name: str
    path: str
    group: tuple[Ref, ...]
    loc: Loc | None = _loc()


@dataclass(frozen=True)
class Action:
    target: object
    value: object


@dataclass(frozen=True)
class RuleDecl:
    name: str
    form: str  # "constraint" | "derivation"
    condition: object
    actions: tuple[Action, ...] = ()
    loc: Loc | None = _loc()


@dataclass(frozen=True)
class RuleFile:
    assignment: str | None
    paths: tuple[PathDecl, ...]
    frames: tuple[FrameDecl, ...]
    rules: tuple[RuleDecl, ...]


# -- bound forms --------------------------------------------------------------

@dataclass(frozen=True)
class PathStep:
    entity: str
    alias: str

    def __str__(self) -> str:
        return self.alias


@dataclass(frozen=True)
class JoinPredicate:
    """Equality conjuncts between two adjacent path entities.

    ``relationship`` names the foreign key the predicate was materialized
    from, or is None for an explicit predicate.
    """

    conjuncts: tuple[tuple[AttrRef, object], ...]
    relationship: str | None = None


@dataclass(frozen=True)
class PathExpr:
    name: str
    steps: tuple[PathStep, ...]
    predicates: tuple[JoinPredicate, ...]
    implicit: bool = False

    def step(self, alias: str) -> PathStep:
        for s in self.steps:
            if s.alias.lower() == alias.lower():
                return s
        raise KeyError(alias)

    def index(self, alias: str) -> int:
        for i, s in enumerate(self.steps):
            if s.alias.lower() == alias.lower():
                return i
        raise KeyError(alias)


@dataclass(frozen=True)
class FrameExpr:
    name: str
    path: PathExpr
    group_attrs: tuple[AttrRef, ...]


@dataclass(frozen=True)
class BusinessRule:
    name: str
    kind: str
    context: object  # PathExpr | FrameExpr
    condition: object
    actions: tuple[Action, ...] = ()
    assignment: str | None = None
    loc: Loc | None = _loc()

    @property
    def path(self) -> PathExpr:
        return self.context.path if isinstance(self.context, FrameExpr) else self.context

    @property
    def frame(self) -> FrameExpr | None:
        return self.context if isinstance(self.context, FrameExpr) else None

    @property
    def context_name(self) -> str:
        return self.context.name

    def conditions(self) -> list:
        return list(iter_conditions(self.condition))
