"""Recursive-descent parser for the equation DSL and the skew-operator syntax.

Equation syntax: variables as declared (``x1``), delay suffix ``[-k]``
(``[+k]`` only when the context allows forward shifts), declared constants,
``+ - * / ^``, ``exp(...)``, ``ln(...)``, parentheses, integer and decimal
literals.  Skew syntax adds the shift symbol ``d`` with ``d^j`` powers; all
products are taken in the operator ring, so ``d*x1`` equals ``x1[-1]*d``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from .errors import ExprSyntaxError, UnknownSymbolError
from .exprs import Context, Expr

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+\.\d+|\d+)|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^()\[\],]))"
)


@dataclass
class Token:
    kind: str  # num | ident | op | end
    text: str
    column: int  # 1-based


def tokenize(text: str, line: int = 1) -> list[Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            stripped = text[pos:].lstrip()
            if not stripped:
                break
            col = len(text) - len(stripped) + 1
            raise ExprSyntaxError(f"unexpected character {stripped[0]!r}", line, col)
        if m.group("num"):
            tokens.append(Token("num", m.group("num"), m.start("num") + 1))
        elif m.group("ident"):
            tokens.append(Token("ident", m.group("ident"), m.start("ident") + 1))
        else:
            tokens.append(Token("op", m.group("op"), m.start("op") + 1))
        pos = m.end()
    tokens.append(Token("end", "", len(text) + 1))
    return tokens


class _Parser:
    """Parses either plain expressions (Expr) or skew operators (SkewPoly)."""

    def __init__(self, text: str, ctx: Context, skew: bool, line: int = 1):
        self.text = text
        self.ctx = ctx
        self.skew = skew
        self.line = line
        self.tokens = tokenize(text, line)
        self.pos = 0
        if skew:
            from .skew import SkewPoly  # local import to avoid a cycle

            self._spoly = SkewPoly

    def peek(self) -> Token:
        return self.tokens[self.pos]

    def advance(self) -> Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, text: str) -> Token:
        tok = self.peek()
        if tok.kind == "op" and tok.text == text:
            return self.advance()
        raise ExprSyntaxError(
            f"unexpected {'end of input' if tok.kind == 'end' else tok.text!r}",
            self.line,
            tok.column,
            expected=repr(text),
        )

    # values are Expr in plain mode and SkewPoly in skew mode

    def _lift(self, e: Expr):
        return self._spoly.from_expr(e) if self.skew else e

    def parse(self):
        value = self.expression()
        tok = self.peek()
        if tok.kind != "end":
            raise ExprSyntaxError(
                f"trailing input {tok.text!r}", self.line, tok.column, expected="end of input"
            )
        return value

    def expression(self):
        value = self.term()
        while self.peek().kind == "op" and self.peek().text in "+-":
            op = self.advance().text
            rhs = self.term()
            value = value + rhs if op == "+" else value - rhs
        return value

    def term(self):
        value = self.unary()
        while self.peek().kind == "op" and self.peek().text in "*/":
            op = self.advance().text
            tok = self.peek()
            rhs = self.unary()
            if op == "*":
                value = value * rhs
            else:
                if self.skew:
                    if rhs.degree() != 0:
                        raise ExprSyntaxError(
                            "division by an operator of positive shift degree",
                            self.line,
                            tok.column,
                        )
                    value = value * self._spoly.from_expr(
                        self.ctx.one() / rhs.coeff(0)
                    )
                else:
                    value = value / rhs
        return value

    def unary(self):
        sign = 1
        while self.peek().kind == "op" and self.peek().text in "+-":
            if self.advance().text == "-":
                sign = -sign
        value = self.power()
        return value if sign == 1 else -value

    def power(self):
        base = self.primary()
        if self.peek().kind == "op" and self.peek().text == "^":
            self.advance()
            tok = self.peek()
            neg = False
            if tok.kind == "op" and tok.text == "-":
                self.advance()
                neg = True
                tok = self.peek()
            if tok.kind != "num" or "." in tok.text:
                raise ExprSyntaxError(
                    "exponent must be an integer", self.line, tok.column, expected="integer"
                )
            self.advance()
            k = int(tok.text)
            if neg:
                if self.skew:
                    raise ExprSyntaxError(
                        "negative operator powers are not defined", self.line, tok.column
                    )
                k = -k
            if self.skew:
                out = self._spoly.one(self.ctx)
                for _ in range(k):
                    out = out * base
                return out
            return base ** k
        return base

    def primary(self):
        tok = self.peek()
        if tok.kind == "num":
            self.advance()
            if "." in tok.text:
                whole, frac = tok.text.split(".")
                value = Fraction(int(whole + frac), 10 ** len(frac))
            else:
                value = Fraction(int(tok.text))
            return self._lift(self.ctx.num(value))
        if tok.kind == "op" and tok.text == "(":
            self.advance()
            value = self.expression()
            self.expect(")")
            return value
        if tok.kind == "ident":
            self.advance()
            name = tok.text
            if name in ("exp", "ln"):
                self.expect("(")
                inner = self.expression()
                close = self.expect(")")
                if self.skew:
                    if inner.degree() > 0:
                        raise ExprSyntaxError(
                            f"{name} of an operator is not defined", self.line, close.column
                        )
                    inner = inner.coeff(0)
                made = self.ctx.exp(inner) if name == "exp" else self.ctx.ln(inner)
                return self._lift(made)
            if self.skew and name == "d":
                return self._spoly.delta(self.ctx, self.maybe_power_of_d())
            if name in self.ctx.var_names:
                base = self.ctx.var_names.index(name) + 1
                shift = self.maybe_delay(tok)
                return self._lift(self.ctx.var(base, shift))
            if name in self.ctx.constants:
                return self._lift(self.ctx.const(name))
            raise UnknownSymbolError(name, self.line, tok.column)
        raise ExprSyntaxError(
            f"unexpected {'end of input' if tok.kind == 'end' else tok.text!r}",
            self.line,
            tok.column,
            expected="a value",
        )

    def maybe_power_of_d(self) -> int:
        if self.peek().kind == "op" and self.peek().text == "^":
            self.advance()
            tok = self.peek()
            if tok.kind != "num" or "." in tok.text:
                raise ExprSyntaxError(
                    "shift power must be an integer", self.line, tok.column, expected="integer"
                )
            self.advance()
            return int(tok.text)
        return 1

    def maybe_delay(self, ident_tok: Token) -> int:
        if not (self.peek().kind == "op" and self.peek().text == "["):
            return 0
        self.advance()
        tok = self.peek()
        if not (tok.kind == "op" and tok.text in "+-"):
            raise ExprSyntaxError(
                "delay must be signed", self.line, tok.column, expected="'-' or '+'"
            )
        sign = self.advance().text
        tok = self.peek()
        if tok.kind != "num" or "." in tok.text:
            raise ExprSyntaxError(
                "delay must be an integer", self.line, tok.column, expected="integer"
            )
        self.advance()
        k = int(tok.text)
        self.expect("]")
        if sign == "+" and not self.ctx.allow_forward:
            raise ExprSyntaxError(
                "forward shifts are not allowed here", self.line, ident_tok.column
            )
        return k if sign == "-" else -k


def parse_expr(text: str, ctx: Context, line: int = 1) -> Expr:
    """Parse a plain expression; reports syntax errors with their position."""
    return _Parser(text, ctx, skew=False, line=line).parse()


def parse_skew(text: str, ctx: Context, line: int = 1):
    """Parse a skew operator; ``d`` is the backward shift."""
    return _Parser(text, ctx, skew=True, line=line).parse()
