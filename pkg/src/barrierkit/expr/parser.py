"""Recursive-descent parser for arithmetic expressions.

Grammar (lowest to highest precedence)::

    expr     := term (('+' | '-') term)*
    term     := unary (('*' | '/') unary)*
    unary    := '-' unary | power
    power    := atom ('^' ['-'] INTEGER)*
    atom     := NUMBER | NAME | FUNC '(' expr ')' | '(' expr ')'

Binary operators of equal precedence associate to the left, so ``x^2^3`` is
``(x^2)^3`` and ``-x^2`` is ``-(x^2)``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Optional

from ..errors import ParseError
from .ast import FUNCTIONS, Binary, Const, Node, Unary, Var

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # "number" | "name" | "op" | "eof"
    text: str
    pos: int  # byte offset


def _byte_offset(text: str, index: int) -> int:
    return len(text[:index].encode("utf-8"))


def tokenize(text: str) -> list[Token]:
    tokens = []
    i = 0
    while i < len(text):
        m = _TOKEN_RE.match(text, i)
        if m is None:
            raise ParseError(f"unexpected character {text[i]!r}", _byte_offset(text, i), text)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append(Token(kind, m.group(), _byte_offset(text, i)))
        i = m.end()
    tokens.append(Token("eof", "", _byte_offset(text, len(text))))
    return tokens


class _Parser:
    def __init__(self, text: str, symbols: Optional[set]):
        self.text = text
        self.tokens = tokenize(text)
        self.i = 0
        self.symbols = symbols

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def error(self, message: str, tok: Optional[Token] = None) -> ParseError:
        tok = tok or self.tok
        found = "end of input" if tok.kind == "eof" else repr(tok.text)
        return ParseError(f"{message}, found {found}", tok.pos, self.text)

    def accept(self, text: str) -> Optional[Token]:
        if self.tok.kind == "op" and self.tok.text == text:
            tok = self.tok
            self.i += 1
            return tok
        return None

    def expect(self, text: str) -> Token:
        tok = self.accept(text)
        if tok is None:
            raise self.error(f"expected {text!r}")
        return tok

    def parse(self) -> Node:
        node = self.expr()
        if self.tok.kind != "eof":
            raise self.error("expected operator or end of input")
        return node

    def expr(self) -> Node:
        node = self.term()
        while True:
            tok = self.accept("+") or self.accept("-")
            if tok is None:
                return node
            op = "add" if tok.text == "+" else "sub"
            node = Binary(op, node, self.term(), pos=tok.pos)

    def term(self) -> Node:
        node = self.unary()
        while True:
            tok = self.accept("*") or self.accept("/")
            if tok is None:
                return node
            op = "mul" if tok.text == "*" else "div"
            node = Binary(op, node, self.unary(), pos=tok.pos)

    def unary(self) -> Node:
        tok = self.accept("-")
        if tok is not None:
            return Unary("neg", self.unary(), pos=tok.pos)
        return self.power()

    def power(self) -> Node:
        node = self.atom()
        while True:
            tok = self.accept("^")
            if tok is None:
                return node
            sign = -1 if self.accept("-") else 1
            num = self.tok
            if num.kind != "number" or not num.text.isdigit():
                raise self.error("exponent must be an integer constant")
            self.i += 1
            node = Binary("pow", node, Const(sign * int(num.text), pos=num.pos), pos=tok.pos)

    def atom(self) -> Node:
        tok = self.tok
        if tok.kind == "number":
            self.i += 1
            return Const(float(tok.text), pos=tok.pos)
        if tok.kind == "name":
            self.i += 1
            if self.tok.kind == "op" and self.tok.text == "(":
                if tok.text not in FUNCTIONS:
                    raise ParseError(
                        f"unknown function {tok.text!r}; valid functions: {', '.join(FUNCTIONS)}",
                        tok.pos, self.text)
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Unary(tok.text, arg, pos=tok.pos)
            if self.symbols is not None and tok.text not in self.symbols:
                valid = ", ".join(sorted(self.symbols))
                raise ParseError(f"unknown identifier {tok.text!r}; valid symbols: {valid}",
                                 tok.pos, self.text)
            return Var(tok.text, pos=tok.pos)
        if self.accept("("):
            node = self.expr()
            self.expect(")")
            return node
        raise self.error("expected number, identifier or '('")


def parse_expression(text: str, symbols: Optional[Iterable[str]] = None) -> Node:
    """Parse ``text`` into an expression tree.

    When ``symbols`` is given, every identifier that is not a function name must
    belong to it.
    """
    if not text or not text.strip():
        raise ParseError("empty expression", 0, text or "")
    return _Parser(text, set(symbols) if symbols is not None else None).parse()
