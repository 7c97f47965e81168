"""A small regex-driven tokenizer used by the schema and rule languages."""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable

from .errors import LexError


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    column: int

    @property
    def lower(self) -> str:
        return self.text.lower()


def tokenize(text: str, spec: Iterable[tuple[str, str]], *, skip=("WS", "COMMENT"),
             source: str | None = None) -> list[Token]:
    """Split ``text`` into tokens; ``spec`` is an ordered list of (kind, regex).

    A trailing ``EOF`` token is always appended so parsers can report
    "unexpected end of input" with a position.
    """
    master = re.compile("|".join(f"(?P<{kind}>{rx})" for kind, rx in spec))
    tokens: list[Token] = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = master.match(text, pos)
        if m is None:
            raise LexError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1,
                           source)
        kind = m.lastgroup
        value = m.group()
        if kind not in skip:
            tokens.append(Token(kind, value, line, pos - line_start + 1))
        newlines = value.count("\n")
        if newlines:
            line += newlines
            line_start = pos + value.rindex("\n") + 1
        pos = m.end()
    tokens.append(Token("EOF", "", line, pos - line_start + 1))
    return tokens


class TokenStream:
    """Cursor over a token list with the helpers a recursive-descent parser needs."""

    def __init__(self, tokens: list[Token], source: str | None = None, error=None):
        self.tokens = tokens
        self.pos = 0
        self.source = source
        self._error = error

    def peek(self, offset: int = 0) -> Token:
        idx = min(self.pos + offset, len(self.tokens) - 1)
        return self.tokens[idx]

    def next(self) -> Token:
        tok = self.peek()
        if tok.kind != "EOF":
            self.pos += 1
        return tok

    def at_word(self, *words: str, offset: int = 0) -> bool:
        tok = self.peek(offset)
        return tok.kind == "NAME" and tok.lower in words

    def at(self, kind: str, offset: int = 0) -> bool:
        return self.peek(offset).kind == kind

    def fail(self, message: str, expected: Iterable[str] = (), tok: Token | None = None):
        tok = tok or self.peek()
        if tok.kind == "EOF" and "end" not in message:
            message = f"{message} at end of input"
        raise self._error(message, tok.line, tok.column, self.source, tuple(expected))

    def expect_word(self, word: str) -> Token:
        if not self.at_word(word):
            tok = self.peek()
            self.fail(f"unexpected {describe(tok)}", [repr(word)])
        return self.next()

    def expect(self, kind: str, what: str | None = None) -> Token:
        if not self.at(kind):
            tok = self.peek()
            self.fail(f"unexpected {describe(tok)}", [what or kind])
        return self.next()


def describe(tok: Token) -> str:
    if tok.kind == "EOF":
        return "end of input"
    return f"{tok.text!r}"
