"""Problem-file parsing: declarations, equations, an optional system block,
histories, options, and hints.

Format (one directive per line, ``#`` comments):

    vars x1 x2 x3 x4
    const c nonzero = 0.3678794
    eq a = x1*x2[-1] + x2*x2[-1] + e1
    ddae p=5
    E[3][1] = -(1/x2[-1])*d
    F[1] = x2
    hint const _c1 = ln(c)
    hist x1 = 1 + 0*s
    option seed = 42
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional

from .errors import ExprSyntaxError, UnknownSymbolError
from .exprs import Context, Expr
from .parsing import parse_expr, parse_skew
from .skew import SkewMatrix, SkewPoly


@dataclass
class ProblemFile:
    var_names: list[str]
    constants: dict[str, bool]
    const_values: dict[str, float]
    equations: list[tuple[str, str]]  # (name, text); parsed after ctx exists
    ddae_p: Optional[int]
    ddae_entries: dict[tuple[int, int], str]
    ddae_f: dict[int, str]
    hints: dict[str, str]
    histories: dict[str, str]
    options: dict[str, str]

    def context(self, **kw) -> Context:
        return Context(self.var_names, dict(self.constants), **kw)

    def parsed_equations(self, ctx: Context) -> list[tuple[str, Expr]]:
        return [(name, parse_expr(text, ctx)) for name, text in self.equations]

    def parsed_system(self, ctx: Context):
        from .ddae import DDAESystem

        if self.ddae_p is None:
            return None
        p, n = self.ddae_p, len(self.var_names)
        rows = []
        for i in range(1, p + 1):
            row = []
            for j in range(1, n + 1):
                text = self.ddae_entries.get((i, j))
                row.append(parse_skew(text, ctx) if text else SkewPoly.zero(ctx))
            rows.append(row)
        F = []
        for i in range(1, p + 1):
            text = self.ddae_f.get(i)
            F.append(parse_expr(text, ctx) if text else ctx.zero())
        return DDAESystem(ctx, SkewMatrix(ctx, rows, cols=n), F)

    def parsed_hints(self, ctx: Context) -> dict[str, Expr]:
        if not self.hints:
            return {}
        hint_ctx = Context([], dict(self.constants))
        return {k: parse_expr(v, hint_ctx) for k, v in self.hints.items()}


def parse_problem(text: str, source: str = "<string>") -> ProblemFile:
    var_names: list[str] = []
    constants: dict[str, bool] = {}
    const_values: dict[str, float] = {}
    equations: list[tuple[str, str]] = []
    ddae_p: Optional[int] = None
    ddae_entries: dict[tuple[int, int], str] = {}
    ddae_f: dict[int, str] = {}
    hints: dict[str, str] = {}
    histories: dict[str, str] = {}
    options: dict[str, str] = {}

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line or line == "end":
            continue
        head, _, rest = line.partition(" ")
        rest = rest.strip()
        if head == "vars":
            var_names = rest.split()
        elif head == "const":
            parts = rest.split("=", 1)
            decl = parts[0].split()
            if not decl:
                raise ExprSyntaxError("const needs a name", lineno, 1)
            name = decl[0]
            nonzero = "nonzero" in decl[1:]
            constants[name] = nonzero
            if len(parts) == 2:
                const_values[name] = _number(parts[1].strip(), lineno)
        elif head == "eq":
            name, _, body = rest.partition("=")
            if not body:
                raise ExprSyntaxError("eq needs 'name = expression'", lineno, 1)
            equations.append((name.strip(), body.strip()))
        elif head == "ddae":
            for kv in rest.split():
                key, _, val = kv.partition("=")
                if key == "p":
                    ddae_p = int(val)
                elif key == "n":
                    if var_names and int(val) != len(var_names):
                        raise ExprSyntaxError(
                            f"ddae n={val} conflicts with {len(var_names)} declared vars",
                            lineno,
                            1,
                        )
        elif head.startswith("E[") or (head == "E" and rest.startswith("[")):
            idx, _, body = line.partition("=")
            i, j = _indices(idx, 2, lineno)
            ddae_entries[(i, j)] = body.strip()
        elif head.startswith("F[") or (head == "F" and rest.startswith("[")):
            idx, _, body = line.partition("=")
            (i,) = _indices(idx, 1, lineno)
            ddae_f[i] = body.strip()
        elif head == "hint":
            body = rest
            if body.startswith("const "):
                body = body[len("const "):]
            name, _, val = body.partition("=")
            hints[name.strip()] = val.strip()
        elif head == "hist":
            name, _, body = rest.partition("=")
            histories[name.strip()] = body.strip()
        elif head == "option":
            name, _, val = rest.partition("=")
            options[name.strip()] = val.strip()
        else:
            raise ExprSyntaxError(f"unknown directive {head!r}", lineno, 1)
    if not var_names:
        raise ExprSyntaxError("file declares no variables", 0, 0)
    if ddae_p is not None:
        for (i, j) in ddae_entries:
            if not (1 <= i <= ddae_p and 1 <= j <= len(var_names)):
                raise ExprSyntaxError(f"E[{i}][{j}] outside the declared system", 0, 0)
        for i in ddae_f:
            if not 1 <= i <= ddae_p:
                raise ExprSyntaxError(f"F[{i}] outside the declared system", 0, 0)
    return ProblemFile(
        var_names=var_names,
        constants=constants,
        const_values=const_values,
        equations=equations,
        ddae_p=ddae_p,
        ddae_entries=ddae_entries,
        ddae_f=ddae_f,
        hints=hints,
        histories=histories,
        options=options,
    )


def load_problem(path: str | Path) -> ProblemFile:
    p = Path(path)
    return parse_problem(p.read_text(), source=str(p))


def _number(text: str, lineno: int) -> float:
    try:
        return float(Fraction(text)) if "/" in text else float(text)
    except ValueError:
        raise ExprSyntaxError(f"bad numeric literal {text!r}", lineno, 1)


def _indices(text: str, count: int, lineno: int) -> tuple[int, ...]:
    out = []
    rest = text.strip()
    if not rest.startswith(("E", "F")):
        raise ExprSyntaxError(f"bad entry {text!r}", lineno, 1)
    rest = rest[1:].strip()
    for _ in range(count):
        if not rest.startswith("["):
            raise ExprSyntaxError(f"bad index in {text!r}", lineno, 1)
        close = rest.index("]")
        out.append(int(rest[1:close]))
        rest = rest[close + 1 :].strip()
    return tuple(out)


def emit_system_file(sys, const_values: dict[str, float] | None = None) -> str:
    """Serialise a system as a problem file (round-trips through the parser)."""
    lines = ["vars " + " ".join(sys.ctx.var_names)]
    for name, nz in sorted(sys.ctx.constants.items()):
        decl = f"const {name}" + (" nonzero" if nz else "")
        if const_values and name in const_values:
            decl += f" = {const_values[name]!r}"
        lines.append(decl)
    lines.append(f"ddae n={sys.n} p={sys.p}")
    for i in range(sys.p):
        for j in range(sys.n):
            entry = sys.E[i, j]
            if not entry.is_zero():
                lines.append(f"E[{i + 1}][{j + 1}] = {entry}")
    for i, f in enumerate(sys.F):
        from .exprs import is_zero

        if not is_zero(f):
            lines.append(f"F[{i + 1}] = {f}")
    return "\n".join(lines) + "\n"
