"""One-forms over the shift-operator ring, exactness, and two-variable
Pfaffian integration with an integrating-factor search.

The integration engine looks for a potential of ``a dv1 + b dv2`` with all
other atoms frozen, trying (in order) the exact case, factors depending on
one of the two active atoms, and a box of monomial factors.  Antiderivatives
are assembled term-wise from a small table: polynomials by the power rule
and inverse-linear terms as ln atoms.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import sympy

from .errors import DomainError, IntegrationFailure
from .exprs import (
    Context,
    DelayedVar,
    Expr,
    is_nonzero_certain,
    is_zero,
    partial,
    shift,
)
from .skew import SkewMatrix, SkewPoly


@dataclass(frozen=True)
class OneForm:
    """Row covector over the operator ring in a fixed coordinate order."""

    row: SkewMatrix  # 1 x len(var_order)
    var_order: tuple[int, ...]  # variable bases, ambient indices

    def entry(self, base: int) -> SkewPoly:
        return self.row[0, self.var_order.index(base)]

    def atom_covector(self) -> dict[DelayedVar, Expr]:
        """Expand into coefficients of the individual delayed atoms."""
        out: dict[DelayedVar, Expr] = {}
        for pos, base in enumerate(self.var_order):
            for deg, coeff in self.row[0, pos].coeffs.items():
                out[DelayedVar(base, deg)] = coeff
        return out

    def __add__(self, other: "OneForm") -> "OneForm":
        if self.var_order != other.var_order:
            raise ValueError("coordinate order mismatch")
        return OneForm(
            SkewMatrix(
                self.row.ctx,
                [[self.row[0, j] + other.row[0, j] for j in range(self.row.cols)]],
            ),
            self.var_order,
        )

    def __str__(self):
        return "[" + ", ".join(str(self.row[0, j]) for j in range(self.row.cols)) + "]"


def differential(fn: Expr, var_order: tuple[int, ...] | list[int]) -> OneForm:
    """Bundle the partials of fn into an operator row: entry_i = sum_j
    (d fn / d x_i(-j)) d^j."""
    ctx = fn.ctx
    var_order = tuple(var_order)
    shifts_by_base: dict[int, set[int]] = {b: set() for b in var_order}
    for atom in fn.var_atoms():
        if atom.base in shifts_by_base:
            if atom.shift < 0:
                raise DomainError("cannot bundle forward shifts into an operator row")
            shifts_by_base[atom.base].add(atom.shift)
    entries = []
    for base in var_order:
        coeffs = {}
        for j in sorted(shifts_by_base[base]):
            coeffs[j] = partial(fn, DelayedVar(base, j))
        entries.append(SkewPoly(ctx, coeffs))
    return OneForm(SkewMatrix(ctx, [entries], cols=len(var_order)), var_order)


def d_exactness(omega: OneForm) -> bool:
    """Symmetry of mixed partials over every atom pair (closedness test)."""
    cov = omega.atom_covector()
    ctx = omega.row.ctx
    support = set(cov)
    extra = set()
    for coeff in cov.values():
        extra |= coeff.var_atoms()
    for u in support | extra:
        for w in support | extra:
            a_u = cov.get(u, ctx.zero())
            a_w = cov.get(w, ctx.zero())
            if not is_zero(partial(a_u, w) - partial(a_w, u)):
                return False
    return True


# -- antiderivatives -----------------------------------------------------------


def antiderivative(e: Expr, v: DelayedVar) -> Expr:
    """Antiderivative in the single atom v: polynomial terms by the power
    rule, inverse-linear terms as ln atoms, inverse powers by the power rule.
    Raises IntegrationFailure outside this table."""
    ctx = e.ctx
    s = ctx.var_symbol(v)
    if s not in e._sym.free_symbols:
        return Expr(ctx, e._sym * s)
    try:
        parts = sympy.apart(e._sym, s)
    except (sympy.PolynomialError, ZeroDivisionError, NotImplementedError) as err:
        raise IntegrationFailure(f"partial fractions failed: {err}")
    total = sympy.Integer(0)
    for term in sympy.Add.make_args(sympy.expand(parts)):
        coeff, rest = term.as_independent(s)
        if rest == 1:
            total += coeff * s
            continue
        if rest.is_Pow or rest == s:
            base, expo = rest.as_base_exp()
        else:
            # product like s**2 in expanded polynomial part
            poly = sympy.Poly(term, s)
            if poly.degree() >= 0 and len(poly.terms()) == 1:
                (exps, c0), = poly.terms()
                total += c0 * s ** (exps[0] + 1) / (exps[0] + 1)
                continue
            raise IntegrationFailure(f"term outside antiderivative table: {term}")
        if not expo.is_Integer:
            raise IntegrationFailure(f"non-integer power of the atom: {term}")
        k = int(expo)
        if base == s:
            if k == -1:
                total += coeff * _ln_of(ctx, base)
            else:
                total += coeff * s ** (k + 1) / (k + 1)
            continue
        dbase = sympy.diff(base, s)
        if not dbase.free_symbols.isdisjoint({s}) or dbase == 0:
            raise IntegrationFailure(f"nonlinear denominator base: {term}")
        if k == -1:
            total += (coeff / dbase) * _ln_of(ctx, base)
        elif k < -1:
            total += (coeff / dbase) * base ** (k + 1) / (k + 1)
        else:
            # positive power of a linear polynomial: expand instead
            expanded = sympy.expand(term)
            if expanded == term:
                raise IntegrationFailure(f"term outside antiderivative table: {term}")
            total += antiderivative(Expr(ctx, expanded), v)._sym
    return Expr(ctx, total)


def _ln_of(ctx: Context, base_sym: sympy.Expr) -> sympy.Expr:
    return ctx.ln(Expr(ctx, base_sym))._sym


# -- Pfaffian integration ------------------------------------------------------


@dataclass(frozen=True)
class PfaffianProblem:
    """Two-variable form a dv1 + b dv2 with every other atom frozen."""

    a: Expr
    b: Expr
    v1: DelayedVar
    v2: DelayedVar

    def __post_init__(self):
        if is_zero(self.a):
            raise DomainError("Pfaffian coefficient a must not vanish identically")


@dataclass
class FactorAttempt:
    family: str
    detail: str


def _potential(a: Expr, b: Expr, v1: DelayedVar, v2: DelayedVar) -> Expr:
    f1 = antiderivative(a, v1)
    rest = b - partial(f1, v2)
    if not rest.free_of_var(v1.base) and not is_zero(partial(rest, v1)):
        raise IntegrationFailure("potential assembly left a mixed remainder")
    f2 = antiderivative(rest, v2)
    lam = f1 + f2
    if not is_zero(partial(lam, v1) - a) or not is_zero(partial(lam, v2) - b):
        raise IntegrationFailure("potential failed the gradient re-check")
    return lam


def _exactness_defect(a: Expr, b: Expr, v1: DelayedVar, v2: DelayedVar) -> Expr:
    return partial(a, v2) - partial(b, v1)


def _mu_from_log_integral(ctx: Context, g_int: Expr) -> Optional[Expr]:
    """exp of the integral, accepted only when it lands in the rational field."""
    mu = ctx.exp(g_int)
    if mu.has_transcendental():
        return None
    return mu


def _normalize_potential(lam: Expr, v1: DelayedVar, v2: DelayedVar) -> Expr:
    ctx = lam.ctx
    num, den = lam.fraction()
    if den == 1:
        const, _rest = num.as_coeff_Add()
        lam = Expr(ctx, num - const)
    # scale to a +1 leading rational coefficient when possible
    num, den = lam.fraction()
    if num.free_symbols:
        poly = sympy.Poly(num, *sorted(num.free_symbols, key=lambda s: s.name))
        terms = poly.terms()
        terms.sort(key=lambda t: (-sum(t[0]), tuple(-x for x in t[0])))
        lead = terms[0][1]
        if lead.is_Rational and lead != 0:
            lam = Expr(ctx, lam._sym / lead)
    return lam


def integrate_pfaffian(problem: PfaffianProblem, factor_box: int = 3) -> Expr:
    """Find lam with span{d lam restricted to (v1, v2)} = span{a dv1 + b dv2}.

    Raises IntegrationFailure carrying the attempted factor families.
    """
    a, b, v1, v2 = problem.a, problem.b, problem.v1, problem.v2
    ctx = a.ctx
    attempts: list[FactorAttempt] = []

    def finish(lam: Expr) -> Expr:
        lam = _normalize_potential(lam, v1, v2)
        cross = a * partial(lam, v2) - b * partial(lam, v1)
        if not is_zero(cross):
            raise IntegrationFailure("round-trip proportionality check failed", attempts)
        return lam

    defect = _exactness_defect(a, b, v1, v2)
    if is_zero(defect):
        try:
            return finish(_potential(a, b, v1, v2))
        except IntegrationFailure as err:
            attempts.append(FactorAttempt("exact", str(err)))
    else:
        attempts.append(FactorAttempt("exact", f"defect {defect}"))

    # factor depending on v2 (and frozen atoms): mu'/mu = (db/dv1 - da/dv2)/a
    g = (partial(b, v1) - partial(a, v2)) / a
    if g.free_of_var(v1.base) or is_zero(partial(g, v1)):
        try:
            mu = _mu_from_log_integral(ctx, antiderivative(g, v2))
            if mu is not None and is_nonzero_certain(mu):
                return finish(_potential(mu * a, mu * b, v1, v2))
            attempts.append(FactorAttempt("mu(v2)", "factor left the rational field"))
        except IntegrationFailure as err:
            attempts.append(FactorAttempt("mu(v2)", str(err)))
    else:
        attempts.append(FactorAttempt("mu(v2)", f"ratio depends on v1: {g}"))

    # factor depending on v1
    if not is_zero(b):
        h = (partial(a, v2) - partial(b, v1)) / b
        if h.free_of_var(v2.base) or is_zero(partial(h, v2)):
            try:
                mu = _mu_from_log_integral(ctx, antiderivative(h, v1))
                if mu is not None and is_nonzero_certain(mu):
                    return finish(_potential(mu * a, mu * b, v1, v2))
                attempts.append(FactorAttempt("mu(v1)", "factor left the rational field"))
            except IntegrationFailure as err:
                attempts.append(FactorAttempt("mu(v1)", str(err)))
        else:
            attempts.append(FactorAttempt("mu(v1)", f"ratio depends on v2: {h}"))
    else:
        attempts.append(FactorAttempt("mu(v1)", "b vanishes identically"))

    # monomial box over the active atoms and each frozen atom in turn
    params = sorted(
        {at for at in (a.atoms() | b.atoms()) if isinstance(at, DelayedVar)}
        - {v1, v2},
        key=lambda at: (at.base, at.shift),
    )
    sym_v1, sym_v2 = ctx.var(v1.base, v1.shift), ctx.var(v2.base, v2.shift)
    box = range(-factor_box, factor_box + 1)
    tried = 0
    for w in [None] + params:
        for p in box:
            for q in box:
                for r in box if w is not None else [0]:
                    if p == q == r == 0:
                        continue
                    mu = sym_v1 ** p * sym_v2 ** q
                    if w is not None:
                        mu = mu * ctx.var(w.base, w.shift) ** r
                    tried += 1
                    if not is_zero(_exactness_defect(mu * a, mu * b, v1, v2)):
                        continue
                    try:
                        return finish(_potential(mu * a, mu * b, v1, v2))
                    except IntegrationFailure:
                        continue
    attempts.append(
        FactorAttempt("monomial-box", f"no exact monomial factor among {tried} candidates")
    )
    attempts.append(
        FactorAttempt(
            "conclusion",
            "either the form needs a factor outside the search class or the "
            "integrability hypothesis fails; the two are indistinguishable here",
        )
    )
    raise IntegrationFailure("no integrating factor found", attempts)
