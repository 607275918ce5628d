"""Canonical symbolic kernel for meromorphic functions of delayed variables.

Values are rational functions over Q in three kinds of atoms: delayed
variables x_i(t-j), named symbolic constants, and opaque exp/ln atoms kept
as transcendental generators.  Every expression is normalised to a cancelled
numerator/denominator pair, so equality on the rational fragment is exact;
zero tests that involve transcendental atoms fall back to seeded random
evaluation and are flagged as probabilistic.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Mapping, NamedTuple, Optional, Sequence, Union

import sympy

from .errors import DivisionError, DomainError, EvalError

Number = Union[int, Fraction]


@dataclass(frozen=True, order=True)
class DelayedVar:
    """Variable atom x_base(t - shift); shift < 0 is a forward time-shift."""

    base: int
    shift: int = 0

    def delayed(self, k: int) -> "DelayedVar":
        return DelayedVar(self.base, self.shift + k)


@dataclass(frozen=True, order=True)
class SymbolicConstant:
    name: str
    assumed_nonzero: bool = True

    def __eq__(self, other):
        return isinstance(other, SymbolicConstant) and self.name == other.name

    def __hash__(self):
        return hash(("const", self.name))


@dataclass(frozen=True)
class TransAtom:
    """Opaque exp/ln applied to an Expr argument."""

    kind: str  # "exp" | "ln"
    arg: "Expr"

    def __eq__(self, other):
        return (
            isinstance(other, TransAtom)
            and self.kind == other.kind
            and self.arg._sym == other.arg._sym
        )

    def __hash__(self):
        return hash((self.kind, self.arg._sym))


Atom = Union[DelayedVar, SymbolicConstant, TransAtom]


class ZeroVerdict(NamedTuple):
    zero: bool
    probabilistic: bool


class Context:
    """Declared variables/constants plus interned transcendental atoms.

    All Exprs belong to one context; cross-context work goes through
    :func:`transplant`.
    """

    def __init__(
        self,
        var_names: Sequence[str],
        constants: Mapping[str, bool] | None = None,
        allow_forward: bool = False,
        zero_guard: float = 1e-12,
        zero_samples: int = 8,
        seed: int = 0,
    ):
        self.var_names = list(var_names)
        self.n = len(self.var_names)
        self.constants: dict[str, bool] = dict(constants or {})
        self.allow_forward = allow_forward
        self.zero_guard = zero_guard
        self.zero_samples = zero_samples
        self.seed = seed
        self.warnings: list[str] = []
        self._var_syms: dict[DelayedVar, sympy.Symbol] = {}
        self._const_syms: dict[str, sympy.Symbol] = {}
        self._trans_by_key: dict[tuple, sympy.Symbol] = {}
        self._trans_by_sym: dict[sympy.Symbol, TransAtom] = {}
        self._trans_count = 0

    # -- atom <-> sympy symbol bookkeeping ---------------------------------

    def var_symbol(self, v: DelayedVar) -> sympy.Symbol:
        if not (1 <= v.base <= self.n):
            raise DomainError(f"variable index {v.base} outside context of size {self.n}")
        s = self._var_syms.get(v)
        if s is None:
            tag = f"m{-v.shift}" if v.shift < 0 else str(v.shift)
            s = sympy.Symbol(f"V{v.base}_{tag}")
            self._var_syms[v] = s
        return s

    def const_symbol(self, name: str) -> sympy.Symbol:
        if name not in self.constants:
            raise DomainError(f"constant '{name}' not declared")
        s = self._const_syms.get(name)
        if s is None:
            s = sympy.Symbol(f"K_{name}")
            self._const_syms[name] = s
        return s

    def atom_of_symbol(self, s: sympy.Symbol) -> Atom:
        name = s.name
        if name.startswith("V"):
            base_str, tag = name[1:].split("_")
            shift = -int(tag[1:]) if tag.startswith("m") else int(tag)
            return DelayedVar(int(base_str), shift)
        if name.startswith("K_"):
            cname = name[2:]
            return SymbolicConstant(cname, self.constants.get(cname, False))
        return self._trans_by_sym[s]

    def trans_symbol(self, atom: TransAtom) -> sympy.Expr:
        """Intern an exp/ln atom, applying the small rewrite table first."""
        simplified = self._simplify_trans(atom)
        if simplified is not None:
            return simplified
        key = (atom.kind, atom.arg._sym)
        s = self._trans_by_key.get(key)
        if s is None:
            s = sympy.Symbol(f"T{self._trans_count}")
            self._trans_count += 1
            self._trans_by_key[key] = s
            self._trans_by_sym[s] = atom
        return s

    def _simplify_trans(self, atom: TransAtom) -> Optional[sympy.Expr]:
        arg = atom.arg
        if atom.kind == "exp":
            if arg._sym == 0:
                return sympy.Integer(1)
            # exp(a + k*ln(X)) = X^k * exp(a) for integer k
            terms = sympy.Add.make_args(arg._sym)
            prefactor = sympy.Integer(1)
            residual = []
            changed = False
            for t in terms:
                coeff, rest = t.as_coeff_Mul()
                if (
                    rest in self._trans_by_sym
                    and self._trans_by_sym[rest].kind == "ln"
                    and coeff.is_Integer
                ):
                    inner = self._trans_by_sym[rest].arg
                    prefactor *= inner._sym ** int(coeff)
                    changed = True
                else:
                    residual.append(t)
            if changed:
                rest_expr = Expr(self, sympy.Add(*residual) if residual else sympy.Integer(0))
                tail = self.trans_symbol(TransAtom("exp", rest_expr)) if residual else sympy.Integer(1)
                return prefactor * tail
        else:  # ln
            if arg._sym == 1:
                return sympy.Integer(0)
            if arg._sym in self._trans_by_sym and self._trans_by_sym[arg._sym].kind == "exp":
                return self._trans_by_sym[arg._sym].arg._sym
        return None

    # -- constructors -------------------------------------------------------

    def var(self, base: int, shift: int = 0) -> "Expr":
        return Expr(self, self.var_symbol(DelayedVar(base, shift)))

    def var_named(self, name: str, shift: int = 0) -> "Expr":
        return self.var(self.var_names.index(name) + 1, shift)

    def const(self, name: str) -> "Expr":
        return Expr(self, self.const_symbol(name))

    def num(self, value: Number) -> "Expr":
        return Expr(self, sympy.Rational(value))

    def exp(self, arg: "Expr") -> "Expr":
        return Expr(self, self.trans_symbol(TransAtom("exp", arg)))

    def ln(self, arg: "Expr") -> "Expr":
        return Expr(self, self.trans_symbol(TransAtom("ln", arg)))

    def zero(self) -> "Expr":
        return self.num(0)

    def one(self) -> "Expr":
        return self.num(1)


def _normalize(sym: sympy.Expr) -> sympy.Expr:
    out = sympy.cancel(sympy.together(sym))
    if out.has(sympy.zoo, sympy.nan, sympy.oo, -sympy.oo):
        raise DomainError("expression has an identically-zero denominator")
    return out


class Expr:
    """Immutable rational expression in delayed-variable atoms."""

    __slots__ = ("_ctx", "_sym", "_text")

    def __init__(self, ctx: Context, sym: sympy.Expr):
        self._ctx = ctx
        self._sym = _normalize(sympy.sympify(sym))
        self._text: Optional[str] = None

    @property
    def ctx(self) -> Context:
        return self._ctx

    # -- arithmetic ---------------------------------------------------------

    def _coerce(self, other) -> "Expr":
        if isinstance(other, Expr):
            if other._ctx is not self._ctx:
                raise DomainError("mixing expressions from different contexts")
            return other
        if isinstance(other, (int, Fraction)):
            return self._ctx.num(other)
        return NotImplemented

    def __add__(self, other):
        o = self._coerce(other)
        return o if o is NotImplemented else Expr(self._ctx, self._sym + o._sym)

    __radd__ = __add__

    def __sub__(self, other):
        o = self._coerce(other)
        return o if o is NotImplemented else Expr(self._ctx, self._sym - o._sym)

    def __rsub__(self, other):
        o = self._coerce(other)
        return o if o is NotImplemented else Expr(self._ctx, o._sym - self._sym)

    def __mul__(self, other):
        o = self._coerce(other)
        return o if o is NotImplemented else Expr(self._ctx, self._sym * o._sym)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._coerce(other)
        if o is NotImplemented:
            return o
        o._warn_unflagged_constant_division()
        if o._sym == 0:
            raise DomainError("division by zero expression")
        return Expr(self._ctx, self._sym / o._sym)

    def __rtruediv__(self, other):
        o = self._coerce(other)
        return o if o is NotImplemented else o.__truediv__(self)

    def __pow__(self, k: int):
        if not isinstance(k, int):
            return NotImplemented
        return Expr(self._ctx, self._sym ** k)

    def __neg__(self):
        return Expr(self._ctx, -self._sym)

    def _warn_unflagged_constant_division(self):
        atoms = self.atoms()
        if atoms and all(isinstance(a, SymbolicConstant) for a in atoms):
            for a in atoms:
                if not self._ctx.constants.get(a.name, False):
                    self._ctx.warnings.append(
                        f"division by constant expression '{self}' whose constant "
                        f"'{a.name}' is not declared nonzero"
                    )

    # -- structure ----------------------------------------------------------

    def atoms(self) -> set[Atom]:
        out = set()
        for s in self._sym.free_symbols:
            a = self._ctx.atom_of_symbol(s)
            out.add(a)
            if isinstance(a, TransAtom):
                out |= a.arg.atoms()
        return out

    def var_atoms(self) -> set[DelayedVar]:
        return {a for a in self.atoms() if isinstance(a, DelayedVar)}

    def has_transcendental(self) -> bool:
        return any(isinstance(a, TransAtom) for a in self.atoms())

    def free_of_var(self, base: int) -> bool:
        return all(v.base != base for v in self.var_atoms())

    def fraction(self) -> tuple[sympy.Expr, sympy.Expr]:
        return sympy.fraction(self._sym)

    def __eq__(self, other):
        if not isinstance(other, Expr):
            if isinstance(other, (int, Fraction)):
                return self._sym == sympy.Rational(other)
            return NotImplemented
        return self._sym == other._sym

    def __hash__(self):
        return hash(self._sym)

    def __repr__(self):
        return f"Expr({self})"

    def __str__(self):
        if self._text is None:
            self._text = to_text(self)
        return self._text

    # -- calculus -----------------------------------------------------------

    def partial(self, v: DelayedVar) -> "Expr":
        return partial(self, v)

    def shift(self, k: int) -> "Expr":
        return shift(self, k)

    def substitute(self, rules: Mapping[int, "Expr"]) -> "Expr":
        return substitute(self, rules)


# -- atom ordering and printing ----------------------------------------------


def atom_sort_key(ctx: Context, atom: Atom):
    if isinstance(atom, DelayedVar):
        return (0, atom.base, atom.shift)
    if isinstance(atom, SymbolicConstant):
        return (1, atom.name)
    return (2, atom.kind, to_text(atom.arg))


def _ordered_symbols(e: Expr, sym: sympy.Expr) -> list[sympy.Symbol]:
    pairs = []
    for s in sorted(sym.free_symbols, key=lambda s: s.name):
        pairs.append((atom_sort_key(e._ctx, e._ctx.atom_of_symbol(s)), s))
    return [s for _, s in sorted(pairs, key=lambda p: p[0])]


def atom_text(ctx: Context, atom: Atom) -> str:
    if isinstance(atom, DelayedVar):
        name = ctx.var_names[atom.base - 1]
        if atom.shift == 0:
            return name
        return f"{name}[{-atom.shift:+d}]"
    if isinstance(atom, SymbolicConstant):
        return atom.name
    return f"{atom.kind}({to_text(atom.arg)})"


def _poly_text(e: Expr, poly_sym: sympy.Expr) -> str:
    ctx = e._ctx
    syms = _ordered_symbols(e, poly_sym)
    if not syms:
        q = sympy.Rational(poly_sym)
        return str(Fraction(int(q.p), int(q.q)))
    poly = sympy.Poly(poly_sym, *syms)
    terms = poly.terms()
    # graded lexicographic: total degree first, then exponent vector
    terms.sort(key=lambda t: (-sum(t[0]), tuple(-x for x in t[0])))
    pieces = []
    for exps, coeff in terms:
        q = Fraction(int(coeff.p), int(coeff.q))
        factors = []
        for s, k in zip(syms, exps):
            if k == 0:
                continue
            at = atom_text(ctx, ctx.atom_of_symbol(s))
            factors.append(at if k == 1 else f"{at}^{k}")
        mag = abs(q)
        if not factors:
            body = str(mag)
        elif mag == 1:
            body = "*".join(factors)
        else:
            body = str(mag) + "*" + "*".join(factors)
        pieces.append(("-" if q < 0 else "+", body))
    out = ""
    for i, (sign, body) in enumerate(pieces):
        if i == 0:
            out = ("-" if sign == "-" else "") + body
        else:
            out += f" {sign} {body}"
    return out or "0"


def to_text(e: Expr) -> str:
    """Deterministic canonical rendering in the equation DSL syntax."""
    num, den = e.fraction()
    num_s = _poly_text(e, sympy.expand(num))
    if den == 1:
        return num_s
    den_s = _poly_text(e, sympy.expand(den))
    if any(c in num_s for c in "+-") and not num_s.lstrip("-").isalnum():
        num_s = f"({num_s})"
    if any(c in den_s for c in "+-*^") or "/" in den_s:
        den_s = f"({den_s})"
    return f"{num_s}/{den_s}"


# -- core operations ----------------------------------------------------------


def partial(e: Expr, v: DelayedVar) -> Expr:
    """Partial derivative with respect to the atom v; exp/ln chain through."""
    ctx = e._ctx
    target = ctx.var_symbol(v)
    total = sympy.diff(e._sym, target)
    for s in e._sym.free_symbols:
        atom = ctx.atom_of_symbol(s)
        if isinstance(atom, TransAtom):
            darg = partial(atom.arg, v)
            if darg._sym == 0:
                continue
            if atom.kind == "exp":
                inner = s
            else:
                inner = 1 / atom.arg._sym
            total = total + sympy.diff(e._sym, s) * inner * darg._sym
    return Expr(ctx, total)


def shift(e: Expr, k: int) -> Expr:
    """Apply the backward shift k times (k < 0 advances)."""
    if k == 0:
        return e
    ctx = e._ctx
    mapping = {}
    for s in e._sym.free_symbols:
        atom = ctx.atom_of_symbol(s)
        if isinstance(atom, DelayedVar):
            mapping[s] = ctx.var_symbol(atom.delayed(k))
        elif isinstance(atom, TransAtom):
            mapping[s] = ctx.trans_symbol(TransAtom(atom.kind, shift(atom.arg, k)))
    return Expr(ctx, e._sym.xreplace(mapping))


def substitute(e: Expr, rules: Mapping[int, Expr]) -> Expr:
    """Simultaneous substitution; rules at shift 0 propagate to all shifts."""
    ctx = e._ctx
    mapping = {}
    for s in e._sym.free_symbols:
        atom = ctx.atom_of_symbol(s)
        if isinstance(atom, DelayedVar) and atom.base in rules:
            mapping[s] = shift(rules[atom.base], atom.shift)._sym
        elif isinstance(atom, TransAtom):
            new_arg = substitute(atom.arg, rules)
            if new_arg._sym != atom.arg._sym:
                mapping[s] = ctx.trans_symbol(TransAtom(atom.kind, new_arg))
    if not mapping:
        return e
    return Expr(ctx, e._sym.xreplace(mapping))


def transplant(e: Expr, var_map: Mapping[int, Expr], target: Context) -> Expr:
    """Rewrite e into another context: var base i becomes var_map[i] (shift 0)."""
    ctx = e._ctx
    mapping = {}
    for s in e._sym.free_symbols:
        atom = ctx.atom_of_symbol(s)
        if isinstance(atom, DelayedVar):
            if atom.base not in var_map:
                raise DomainError(f"no image for variable {atom.base} in transplant")
            mapping[s] = shift(var_map[atom.base], atom.shift)._sym
        elif isinstance(atom, SymbolicConstant):
            mapping[s] = target.const_symbol(atom.name)
        else:
            new_arg = transplant(atom.arg, var_map, target)
            mapping[s] = target.trans_symbol(TransAtom(atom.kind, new_arg))
    return Expr(target, e._sym.xreplace(mapping))


def causality_scan(e: Expr) -> tuple[bool, int, int]:
    """(is_causal, min_shift, max_shift) over every variable atom in e."""
    shifts = [v.shift for v in e.var_atoms()]
    if not shifts:
        return (True, 0, 0)
    return (min(shifts) >= 0, min(shifts), max(shifts))


def _random_assignment(e: Expr, rng: random.Random) -> dict:
    assignment = {}
    for atom in e.atoms():
        if isinstance(atom, DelayedVar):
            assignment[atom] = rng.uniform(0.35, 2.25)
        elif isinstance(atom, SymbolicConstant):
            assignment[atom.name] = rng.uniform(0.35, 2.25)
    return assignment


def zero_check(e: Expr, seed: int | None = None) -> ZeroVerdict:
    """Exact zero test on the rational fragment, randomized otherwise."""
    num, _ = e.fraction()
    expanded = sympy.expand(num)
    if expanded == 0:
        return ZeroVerdict(True, False)
    trans_syms = [
        s for s in expanded.free_symbols if isinstance(e._ctx.atom_of_symbol(s), TransAtom)
    ]
    if not trans_syms:
        return ZeroVerdict(False, False)
    rng = random.Random(e._ctx.seed if seed is None else seed)
    probe = Expr(e._ctx, expanded)
    term_probes = [Expr(e._ctx, t) for t in sympy.Add.make_args(expanded)]
    for _ in range(e._ctx.zero_samples):
        for _attempt in range(40):
            try:
                a = _random_assignment(probe, rng)
                value = eval_num(probe, a)
                scale = 1.0 + max(abs(eval_num(t, a)) for t in term_probes)
                break
            except EvalError:
                continue
        else:
            return ZeroVerdict(False, True)
        if abs(value) > 1e-9 * scale:
            return ZeroVerdict(False, True)
    return ZeroVerdict(True, True)


def is_zero(e: Expr, seed: int | None = None) -> bool:
    return zero_check(e, seed).zero


def is_nonzero_certain(e: Expr, seed: int | None = None) -> bool:
    """True when e is certainly not the zero function (exact on rationals)."""
    v = zero_check(e, seed)
    return not v.zero


def eval_num(e: Expr, assignment: Mapping) -> float:
    """IEEE double evaluation; raises EvalError on gaps or guarded denominators."""
    ctx = e._ctx
    num, den = e.fraction()

    def value_of(sym_expr: sympy.Expr) -> float:
        subs = {}
        for s in sym_expr.free_symbols:
            atom = ctx.atom_of_symbol(s)
            if isinstance(atom, DelayedVar):
                if atom not in assignment:
                    raise EvalError(f"unassigned variable atom {atom_text(ctx, atom)}")
                subs[s] = float(assignment[atom])
            elif isinstance(atom, SymbolicConstant):
                if atom.name not in assignment:
                    raise EvalError(f"unassigned constant {atom.name}")
                subs[s] = float(assignment[atom.name])
            else:
                inner = eval_num(atom.arg, assignment)
                if atom.kind == "exp":
                    subs[s] = math.exp(inner)
                else:
                    if inner <= 0:
                        raise EvalError("ln of a non-positive value")
                    subs[s] = math.log(inner)
        out = sym_expr.xreplace({k: sympy.Float(v) for k, v in subs.items()})
        out = float(out)
        if not math.isfinite(out):
            raise EvalError("non-finite value in evaluation")
        return out

    d = value_of(den)
    if abs(d) < ctx.zero_guard:
        raise EvalError(f"denominator {abs(d):.3e} inside zero-guard band")
    return value_of(num) / d


def compile_fn(e: Expr, atom_order: Sequence[Atom]) -> Callable[..., float]:
    """Compile to a fast positional float function (transcendentals expanded)."""
    ctx = e._ctx

    def expand(sym_expr: sympy.Expr) -> sympy.Expr:
        mapping = {}
        for s in sym_expr.free_symbols:
            atom = ctx.atom_of_symbol(s)
            if isinstance(atom, TransAtom):
                inner = expand(atom.arg._sym)
                mapping[s] = sympy.exp(inner) if atom.kind == "exp" else sympy.log(inner)
        return sym_expr.xreplace(mapping) if mapping else sym_expr

    args = []
    for atom in atom_order:
        if isinstance(atom, DelayedVar):
            args.append(ctx.var_symbol(atom))
        elif isinstance(atom, SymbolicConstant):
            args.append(ctx.const_symbol(atom.name))
        else:
            raise EvalError("transcendental atoms cannot be positional arguments")
    return sympy.lambdify(args, expand(e._sym), modules="math")


def numeric_atoms(e: Expr) -> list[Atom]:
    """Variable/constant atoms of e (transcendental args flattened), sorted."""
    flat = [a for a in e.atoms() if not isinstance(a, TransAtom)]
    return sorted(flat, key=lambda a: atom_sort_key(e._ctx, a))
