"""Recursive-descent parser for business-rule files.

Grammar (keywords are case-insensitive)::

    file       = { statement [";"] }
    statement  = "assignment" NAME | path | frame | rule
    path       = "Path" NAME "is" NAME { "[" [ joincmp { "and" joincmp } ] "]" NAME }
    joincmp    = ref "=" ( ref | NUMBER | STRING )
    frame      = "Frame" NAME "is" NAME ( "//" | "///" ) ref { "," ref }
    rule       = [ "Rule" NAME ":" ] ( constraint | derivation )
    constraint = "Each" disj                      (atoms use "must be" / "must have")
    derivation = "If" disj "then" action { ("," | "and") action }
    disj       = conj { "or" conj }
    conj       = prim { "and" prim }              ("and" binds tighter than "or")
    prim       = "(" disj ")" | [ "each" ] ref ( valuecmp | quantcmp ref )
    valuecmp   = "at least" arith [ "and at most" arith ] | "at most" arith
               | "exactly" arith | "different to" arith | "like" arith
    action     = ref "=" arith
"""
from __future__ import annotations

from decimal import Decimal

from ..errors import SyntaxError_
from ..lexing import Token, TokenStream, describe, tokenize
from .ast import (Action, And, BinOp, FrameDecl, JoinCmp, Loc, Neg, Num, Or, PathDecl,
                  QuantCondition, Ref, RuleDecl, RuleFile, Str, ValueCondition)

_TOKENS = [
    ("WS", r"\s+"),
    ("COMMENT", r"--[^\n]*"),
    ("STRING", r"'(?:[^']|'')*'"),
    ("NUMBER", r"\d+(?:\.\d+)?"),
    ("FRAMESEP", r"///|//"),
    ("NAME", r"[A-Za-z_][A-Za-z0-9_]*"),
    ("PUNCT", r"[\[\]()+\-*/=,.:;]"),
]

KEYWORDS = frozenset("""path frame is each must be have has if then and or at least most
exactly different to like assignment rule""".split())
STARTERS = ("path", "frame", "each", "if", "assignment", "rule")


class _Parser:
    def __init__(self, text: str, source: str | None):
        self.ts = TokenStream(tokenize(text, _TOKENS, source=source), source, SyntaxError_)
        self.source = source

    # -- helpers
    def at_punct(self, ch: str, offset: int = 0) -> bool:
        tok = self.ts.peek(offset)
        return tok.kind == "PUNCT" and tok.text == ch

    def punct(self, ch: str) -> Token:
        if not self.at_punct(ch):
            self.ts.fail(f"unexpected {describe(self.ts.peek())}", [repr(ch)])
        return self.ts.next()

    def name(self, what: str) -> Token:
        tok = self.ts.peek()
        if tok.kind != "NAME" or tok.lower in KEYWORDS:
            self.ts.fail(f"unexpected {describe(tok)}", [what])
        return self.ts.next()

    def loc(self, tok: Token | None = None) -> Loc:
        tok = tok or self.ts.peek()
        return Loc(tok.line, tok.column)

    def words(self, *words: str) -> None:
        for w in words:
            self.ts.expect_word(w)

    # -- statements
    def parse(self) -> RuleFile:
        assignment = None
        paths: list[PathDecl] = []
        frames: list[FrameDecl] = []
        rules: list[RuleDecl] = []
        names: set[str] = set()
        while not self.ts.at("EOF"):
            tok = self.ts.peek()
            if self.ts.at_word("assignment"):
                self.ts.next()
                assignment = self.name("assignment name").text
            elif self.ts.at_word("path"):
                decl = self.path()
                self._unique(names, decl.name, tok)
                paths.append(decl)
            elif self.ts.at_word("frame"):
                decl = self.frame()
                self._unique(names, decl.name, tok)
                frames.append(decl)
            elif self.ts.at_word("rule", "each", "if"):
                rules.append(self.rule(len(rules) + 1))
            else:
                self.ts.fail(f"unexpected {describe(tok)}",
                             ["'Path'", "'Frame'", "'Each'", "'If'", "'Rule'", "'assignment'"])
            if self.at_punct(";"):
                self.ts.next()
        return RuleFile(assignment, tuple(paths), tuple(frames), tuple(rules))

    def _unique(self, names: set[str], name: str, tok: Token) -> None:
        if name.lower() in names:
            raise SyntaxError_(f"duplicate path/frame name {name}", tok.line, tok.column,
                               self.source)
        names.add(name.lower())

    def path(self) -> PathDecl:
        start = self.ts.expect_word("path")
        name = self.name("path name").text
        self.ts.expect_word("is")
        steps = [self.name("entity name").text]
        preds: list = []
        while self.at_punct("["):
            self.ts.next()
            if self.at_punct("]"):
                preds.append(None)
            else:
                cmps = [self.join_cmp()]
                while self.ts.at_word("and"):
                    self.ts.next()
                    cmps.append(self.join_cmp())
                preds.append(tuple(cmps))
            self.punct("]")
            steps.append(self.name("entity name").text)
        return PathDecl(name, tuple(steps), tuple(preds), self.loc(start))

    def join_cmp(self) -> JoinCmp:
        left = self.ref()
        self.punct("=")
        tok = self.ts.peek()
        if tok.kind == "NUMBER" or tok.kind == "STRING":
            right = self.primary()
        else:
            right = self.ref()
        return JoinCmp(left, right)

    def frame(self) -> FrameDecl:
        start = self.ts.expect_word("frame")
        name = self.name("frame name").text
        self.ts.expect_word("is")
        path = self.name("path name").text
        self.ts.expect("FRAMESEP", "'//'")
        group = [self.ref()]
        while self.at_punct(","):
            self.ts.next()
            group.append(self.ref())
        return FrameDecl(name, path, tuple(group), self.loc(start))

    def rule(self, ordinal: int) -> RuleDecl:
        start = self.ts.peek()
        name = f"R{ordinal}"
        if self.ts.at_word("rule"):
            self.ts.next()
            name = self.name("rule name").text
            self.punct(":")
        if self.ts.at_word("each"):
            self.ts.next()
            cond = self.disj("constraint")
            return RuleDecl(name, "constraint", cond, (), self.loc(start))
        if self.ts.at_word("if"):
            self.ts.next()
            cond = self.disj("derivation")
            self.ts.expect_word("then")
            actions = [self.action()]
            while self.at_punct(",") or self.ts.at_word("and"):
                self.ts.next()
                actions.append(self.action())
            return RuleDecl(name, "derivation", cond, tuple(actions), self.loc(start))
        self.ts.fail(f"unexpected {describe(self.ts.peek())}", ["'Each'", "'If'"])

    def action(self) -> Action:
        target = self.ref()
        self.punct("=")
        return Action(target, self.arith())

    # -- conditions
    def disj(self, form: str):
        items = [self.conj(form)]
        while self.ts.at_word("or"):
            self.ts.next()
            items.append(self.conj(form))
        return items[0] if len(items) == 1 else Or(tuple(items))

    def conj(self, form: str):
        items = [self.prim(form)]
        while self.ts.at_word("and"):
            self.ts.next()
            items.append(self.prim(form))
        return items[0] if len(items) == 1 else And(tuple(items))

    def prim(self, form: str):
        if self.at_punct("("):
            self.ts.next()
            inner = self.disj(form)
            self.punct(")")
            return inner
        start = self.ts.peek()
        universal = False
        if self.ts.at_word("each"):
            self.ts.next()
            universal = form == "derivation"
        subject = self.ref()
        if form == "constraint":
            self.ts.expect_word("must")
            if self.ts.at_word("have"):
                self.ts.next()
                return self.quant(subject, start)
            if not self.ts.at_word("be"):
                self.ts.fail(f"unexpected {describe(self.ts.peek())}", ["'be'", "'have'"])
            self.ts.next()
            return self.value(subject, universal, start)
        if self.ts.at_word("has"):
            self.ts.next()
            return self.quant(subject, start)
        if not self.ts.at_word("is"):
            self.ts.fail(f"unexpected {describe(self.ts.peek())}", ["'is'", "'has'"])
        self.ts.next()
        return self.value(subject, universal, start)

    def comparison(self, allow_like: bool):
        ts = self.ts
        if ts.at_word("at") and ts.at_word("least", offset=1):
            ts.next(), ts.next()
            p = self.arith()
            if ts.at_word("and") and ts.at_word("at", offset=1) and ts.at_word("most", offset=2):
                ts.next(), ts.next(), ts.next()
                return "range", p, self.arith()
            return "at_least", p, None
        if ts.at_word("at") and ts.at_word("most", offset=1):
            ts.next(), ts.next()
            return "at_most", self.arith(), None
        if ts.at_word("exactly"):
            ts.next()
            return "exactly", self.arith(), None
        if ts.at_word("different") and ts.at_word("to", offset=1):
            ts.next(), ts.next()
            return "different_to", self.arith(), None
        if allow_like and ts.at_word("like"):
            ts.next()
            return "like", self.arith(), None
        expected = ["'at least'", "'at most'", "'exactly'", "'different to'"]
        if allow_like:
            expected.append("'like'")
        ts.fail(f"unexpected {describe(ts.peek())}", expected)

    def value(self, subject: Ref, universal: bool, start: Token) -> ValueCondition:
        comp, p, q = self.comparison(allow_like=True)
        return ValueCondition(subject, comp, p, q, universal, self.loc(start))

    def quant(self, subject: Ref, start: Token) -> QuantCondition:
        comp, p, q = self.comparison(allow_like=False)
        related = self.ref()
        return QuantCondition(subject, related, comp, p, q, self.loc(start))

    # -- arithmetic and references
    def ref(self) -> Ref:
        first = self.name("reference")
        parts = [first.text]
        while self.at_punct("."):
            self.ts.next()
            tok = self.ts.expect("NAME", "attribute name")
            parts.append(tok.text)
        return Ref(tuple(parts), self.loc(first))

    def arith(self):
        left = self.term()
        while self.at_punct("+") or self.at_punct("-"):
            op = self.ts.next().text
            left = BinOp(op, left, self.term())
        return left

    def term(self):
        left = self.unary()
        while self.at_punct("*") or self.at_punct("/"):
            op = self.ts.next().text
            left = BinOp(op, left, self.unary())
        return left

    def unary(self):
        if self.at_punct("-"):
            self.ts.next()
            return Neg(self.unary())
        return self.primary()

    def primary(self):
        tok = self.ts.peek()
        if tok.kind == "NUMBER":
            self.ts.next()
            return Num(Decimal(tok.text) if "." in tok.text else int(tok.text))
        if tok.kind == "STRING":
            self.ts.next()
            return Str(tok.text[1:-1].replace("''", "'"))
        if self.at_punct("("):
            self.ts.next()
            inner = self.arith()
            self.punct(")")
            return inner
        if tok.kind == "NAME" and tok.lower not in KEYWORDS:
            return self.ref()
        self.ts.fail(f"unexpected {describe(tok)}", ["number", "string", "reference", "'('"])


def parse_rules(source_text: str, *, source: str | None = None) -> RuleFile:
    """Parse a rules file into unbound declarations, preserving source order."""
    return _Parser(source_text, source).parse()
