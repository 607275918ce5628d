"""Index reduction for delayed differential-algebraic systems.

A system E(x,d) x' = F(x) is reduced level by level: row-compress E, split
off the algebraic constraints, minimise them to an independent generating
set whose zero set is unchanged, absorb them as trailing coordinates of a
bicausal change of variables, restrict to the constraint manifold, and
repeat until the leading matrix has full row rank.  The chain of coordinate
maps is retained so solutions of the reduced system map back to solutions
of the original one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import sympy

from .bicausal import (
    AnalysisResult,
    BicausalMap,
    CoordinateEngine,
    build_bicausal,
    check_condition_C,
    principal_coordinate,
)
from .errors import (
    CertificateError,
    ConditionCViolation,
    DivisionError,
    DomainError,
    IntegrationFailure,
    SingularE0,
    SolveError,
)
from .exprs import (
    Context,
    DelayedVar,
    Expr,
    TransAtom,
    is_nonzero_certain,
    is_zero,
    shift,
    substitute,
    transplant,
)
from .forms import differential
from .skew import (
    SkewMatrix,
    SkewPoly,
    UnimodularCertificate,
    field_inverse,
    field_kernel,
    field_rank,
    field_right_inverse,
    rank,
    row_compress,
    try_inverse,
)


@dataclass
class DDAESystem:
    """E(x,d) x' = F(x) over the context's coordinates."""

    ctx: Context
    E: SkewMatrix
    F: list[Expr]

    def __post_init__(self):
        if self.E.rows != len(self.F):
            raise ValueError("row count of E must match F")

    @property
    def p(self) -> int:
        return self.E.rows

    @property
    def n(self) -> int:
        return self.E.cols

    def max_delay_state(self) -> int:
        out = 0
        for e in self.F:
            out = max(out, *[0] + [a.shift for a in e.var_atoms()])
        for row in self.E.entries:
            for sp in row:
                for c in sp.coeffs.values():
                    out = max(out, *[0] + [a.shift for a in c.var_atoms()])
        return out

    def max_delay_deriv(self) -> int:
        d = self.E.max_degree()
        return 0 if d == float("-inf") else int(d)


@dataclass
class NeutralODE:
    """x' = f(x-delays) + sum_j G_j(x-delays) x'(-j) + V v(t)."""

    ctx: Context
    f: list[Expr]
    gmat: dict[int, list[list[Expr]]]
    free_cols: list[list[Expr]] = field(default_factory=list)  # n x n_free

    @property
    def n(self) -> int:
        return len(self.f)

    @property
    def n_free(self) -> int:
        return len(self.free_cols[0]) if self.free_cols and self.free_cols[0] else 0

    def max_state_delay(self) -> int:
        out = 0
        exprs = list(self.f) + [e for m in self.gmat.values() for row in m for e in row]
        exprs += [e for row in self.free_cols for e in row]
        for e in exprs:
            out = max(out, *[0] + [a.shift for a in e.var_atoms()])
        return out

    def max_deriv_delay(self) -> int:
        return max(self.gmat, default=0)


@dataclass
class ReductionStep:
    k: int
    q_cert: UnimodularCertificate
    f2: list[Expr]  # minimised constraints, in the level's coordinates
    r_k: int
    n_k: int
    phi: BicausalMap  # level-k coordinates -> [theta; constraints]
    minimized: bool
    analysis: AnalysisResult


@dataclass
class ReductionResult:
    k_star: int
    system: DDAESystem  # index-0 reduced system
    steps: list[ReductionStep]
    phi_forward: list[Expr]  # n components over the original coordinates
    phi: Optional[BicausalMap]  # certified full-space map (forward/inverse)
    map_back: list[Expr]  # original coordinates as exprs over the reduced ones
    classification: str
    unique: bool
    free_vars: int
    q_shift_depth: int

    @property
    def reduced_ctx(self) -> Context:
        return self.system.ctx


def op_apply(p: SkewPoly, f: Expr) -> Expr:
    """Apply the operator to a function: sum_j c_j * f(-j)."""
    out = p.ctx.zero()
    for d, c in p.coeffs.items():
        out = out + c * shift(f, d)
    return out


def _mat_apply(M: SkewMatrix, fs: Sequence[Expr]) -> list[Expr]:
    out = []
    for i in range(M.rows):
        acc = M.ctx.zero()
        for j, f in enumerate(fs):
            acc = acc + op_apply(M[i, j], f)
        out.append(acc)
    return out


def _diff_rank(exprs: Sequence[Expr], ctx: Context) -> int:
    rows = [differential(e, tuple(range(1, ctx.n + 1))).row for e in exprs]
    full = rows[0]
    for r in rows[1:]:
        full = full.vstack(r)
    return rank(full)


# -- constraint minimisation ------------------------------------------------------


def _freeze_context(ctx: Context, count: int) -> tuple[Context, list[str]]:
    names = [f"_c{i}" for i in range(1, count + 1)]
    consts = dict(ctx.constants)
    consts.update({n: False for n in names})
    return Context([], consts, zero_guard=ctx.zero_guard, seed=ctx.seed), names


def _solve_frozen_constants(
    eqs: list[Expr], names: list[str], fctx: Context, hints: dict[str, Expr] | None = None
) -> dict[str, Expr]:
    """Solve the constant system produced by the constant-history freeze.

    Handles equations that are rational-linear in one unknown, possibly
    through a single exp/ln atom; candidate values from a hints table are
    verified symbolically instead.
    """
    solved: dict[str, Expr] = {}
    if hints:
        cand = {k: transplant(v, {}, fctx) for k, v in hints.items() if k in names}
        if set(cand) == set(names):
            test = [substitute_consts(e, cand, fctx) for e in eqs]
            if all(is_zero(t) for t in test):
                return cand
            raise SolveError("hinted constants failed symbolic verification")

    def sub_known(e: Expr) -> Expr:
        return substitute_consts(e, solved, fctx)

    pending = list(eqs)
    progress = True
    while len(solved) < len(names) and progress:
        progress = False
        for eq in pending:
            e = sub_known(eq)
            if is_zero(e):
                continue
            unknowns = [
                n
                for n in names
                if n not in solved
                and any(getattr(a, "name", None) == n for a in e.atoms())
            ]
            if len(unknowns) != 1:
                continue
            name = unknowns[0]
            val = _solve_one_constant(e, name, fctx)
            if val is None:
                continue
            solved[name] = val
            progress = True
    if len(solved) < len(names):
        raise SolveError(
            "constant system is not reducible to univariate rational/exp solves; "
            "supply hints"
        )
    for eq in eqs:
        if not is_zero(substitute_consts(eq, solved, fctx)):
            raise SolveError("solved constants failed verification on the full system")
    return solved


def substitute_consts(e: Expr, values: dict[str, Expr], target: Context) -> Expr:
    mapping = {}
    for s in e._sym.free_symbols:
        atom = e.ctx.atom_of_symbol(s)
        if getattr(atom, "name", None) in values:
            mapping[s] = values[atom.name]._sym
        elif isinstance(atom, TransAtom):
            inner = substitute_consts(atom.arg, values, target)
            if inner._sym != atom.arg._sym:
                mapping[s] = target.trans_symbol(TransAtom(atom.kind, inner))
    if not mapping:
        return e
    return Expr(target, e._sym.xreplace(mapping))


def _solve_one_constant(e: Expr, name: str, fctx: Context) -> Optional[Expr]:
    sym = fctx.const_symbol(name)
    num, _den = e.fraction()
    if sym in num.free_symbols:
        try:
            poly = sympy.Poly(sympy.expand(num), sym)
        except sympy.PolynomialError:
            poly = None
        if poly is not None and poly.degree() == 1:
            root = Expr(fctx, -poly.coeff_monomial(1) / poly.coeff_monomial(sym))
            if not any(getattr(a, "name", None) == name for a in root.atoms()):
                return root
        return None
    # the unknown hides inside a transcendental atom
    trans = [
        s
        for s in num.free_symbols
        if isinstance(fctx.atom_of_symbol(s), TransAtom)
        and any(getattr(a, "name", None) == name for a in fctx.atom_of_symbol(s).arg.atoms())
    ]
    if len(trans) != 1:
        return None
    tsym = trans[0]
    atom = fctx.atom_of_symbol(tsym)
    try:
        poly = sympy.Poly(sympy.expand(num), tsym)
    except sympy.PolynomialError:
        return None
    if poly.degree() != 1:
        return None
    val = Expr(fctx, -poly.coeff_monomial(1) / poly.coeff_monomial(tsym))
    if any(getattr(a, "name", None) == name for a in val.atoms()):
        return None
    if atom.kind == "exp":
        inner_target = fctx.ln(val)
    else:
        inner_target = fctx.exp(val)
    return _solve_one_constant(atom.arg - inner_target, name, fctx)


def constraint_minimize(
    constraints: Sequence[Expr],
    ctx: Context,
    target_dim: int,
    hints: dict[str, Expr] | None = None,
) -> list[Expr]:
    """Replace s dependent constraints by target_dim independent ones with the
    same differential span and the same zero set."""
    constraints = list(constraints)
    s = len(constraints)
    if target_dim == s:
        return constraints
    # maximal independent subset, greedily in the given order
    chosen: list[Expr] = []
    for e in constraints:
        if len(chosen) == target_dim:
            break
        if _diff_rank(chosen + [e], ctx) > len(chosen):
            chosen.append(e)
    if len(chosen) != target_dim:
        raise SolveError("could not select an independent constraint subset")
    if target_dim == 1:
        closure = principal_coordinate(chosen[0], ctx, passengers=constraints)
        generators = [closure.generator]
        rewritten = closure.passengers_final
    else:
        engine = CoordinateEngine(chosen, ctx, passengers=constraints)
        for k in range(1, target_dim + 1):
            witness = engine.run_stage(k, mode="closure")
            if witness is not None:
                raise ConditionCViolation(
                    "constraint span fails the causality test during minimisation",
                    witness=witness,
                    constraints=constraints,
                )
        generators = engine.frame[:target_dim]
        rewritten = engine.passengers
    for e in rewritten:
        bad = [a for a in e.var_atoms() if a.base > target_dim]
        if bad:
            raise SolveError(
                "constraints do not factor through the closure coordinates "
                f"(extra atoms {bad})"
            )
    fctx, names = _freeze_context(ctx, target_dim)
    frozen = [
        transplant(e, {k + 1: fctx.const(names[k]) for k in range(target_dim)}, fctx)
        for e in rewritten
    ]
    values = _solve_frozen_constants(frozen, names, fctx, hints)
    out = []
    for k in range(target_dim):
        c_val = transplant(values[names[k]], {}, ctx)
        out.append(generators[k] - c_val)
    # zero-set check, direction constraints = 0 at the pinned constants
    for e in rewritten:
        pinned = substitute(e, {k + 1: transplant(values[names[k]], {}, ctx) for k in range(target_dim)})
        if not is_zero(pinned):
            raise SolveError("pinned constants do not annihilate every constraint")
    return out


# -- classification and explicit form ----------------------------------------------


def classify(sys: DDAESystem) -> tuple[str, bool, int]:
    """(Retarded | Neutral | AdvancedOrMixed, unique, free variable count)."""
    p, n = sys.p, sys.n
    if rank(sys.E) != p:
        raise ValueError("classification needs an index-0 system")
    e0 = [[sys.E[i, j].coeff(0) for j in range(n)] for i in range(p)]
    r0 = field_rank(e0, sys.ctx) if p else 0
    has_delay_terms = any(
        sys.E[i, j].degree() > 0 for i in range(p) for j in range(n)
    )
    if r0 == p and not has_delay_terms:
        cls = "Retarded"
    elif r0 == p:
        cls = "Neutral"
    else:
        cls = "AdvancedOrMixed"
    return cls, p == n and cls != "AdvancedOrMixed", n - p


def explicit_form(sys: DDAESystem) -> NeutralODE:
    """Solve for x' using the inverse (or a right inverse) of the degree-0
    coefficient block; underdetermined directions get free inputs."""
    p, n = sys.p, sys.n
    ctx = sys.ctx
    e0 = [[sys.E[i, j].coeff(0) for j in range(n)] for i in range(p)]
    if p and field_rank(e0, ctx) < p:
        raise SingularE0("degree-0 coefficient block is rank deficient")
    degs = sorted(
        {
            d
            for i in range(p)
            for j in range(n)
            for d in sys.E[i, j].coeffs
            if d > 0
        }
    )
    def matvec(m: list[list[Expr]], v: list[Expr]) -> list[Expr]:
        return [
            sum((m[i][j] * v[j] for j in range(len(v))), ctx.zero())
            for i in range(len(m))
        ]

    if p == n:
        inv = field_inverse(e0, ctx) if p else []
        kernel_vecs: list[list[Expr]] = []
    else:
        inv = field_right_inverse(e0, ctx) if p else [[] for _ in range(n)]
        kernel_vecs = (
            field_kernel(e0, ctx)
            if p
            else [[ctx.one() if i == j else ctx.zero() for i in range(n)] for j in range(n)]
        )
    f = matvec(inv, sys.F) if p else [ctx.zero()] * n
    gmat: dict[int, list[list[Expr]]] = {}
    for d in degs:
        ed = [[sys.E[i, j].coeff(d) for j in range(n)] for i in range(p)]
        m = [[ctx.zero()] * n for _ in range(n)]
        for i in range(n):
            for j in range(n):
                acc = ctx.zero()
                for t in range(p):
                    acc = acc + inv[i][t] * ed[t][j]
                m[i][j] = -acc
        gmat[d] = m
    cols = [[vec[i] for vec in kernel_vecs] for i in range(n)] if kernel_vecs else []
    return NeutralODE(ctx, f, gmat, free_cols=cols)


def _reorder_inverse(
    analysis: AnalysisResult, d: int, n_k: int, level_ctx: Context
) -> list[Expr]:
    """Convert the analysis inverse (over its chain frame) into the inverse of
    the map [theta; constraints].

    In the analysis frame the constraints are triangular functions of the
    first d chain coordinates with an invertible degree-0 diagonal, so the
    chain coordinates can be back-solved from the constraint values.  The
    composition is done in a doubled temporary variable range to keep the two
    indexings apart.
    """
    from .bicausal import _solve_rational_linear

    n_prev = level_ctx.n
    big = Context(
        [f"t{i}" for i in range(1, 2 * n_prev + 1)],
        constants=dict(level_ctx.constants),
        zero_guard=level_ctx.zero_guard,
        seed=level_ctx.seed,
    )
    up = {i: big.var(i) for i in range(1, n_prev + 1)}
    h: dict[int, Expr] = {}
    for a in range(1, d + 1):
        g = transplant(analysis.lambdas_final[a - 1], up, big)
        g = substitute(g, h)
        target = big.var(n_prev + n_k + a)
        h[a] = _solve_rational_linear(g, a, target)
    for j in range(1, n_k + 1):
        h[d + j] = big.var(n_prev + j)
    out = []
    down = {n_prev + i: level_ctx.var(i) for i in range(1, n_prev + 1)}
    for e in analysis.bicausal.inverse:
        e_big = substitute(transplant(e, up, big), h)
        out.append(transplant(e_big, down, level_ctx))
    return out


# -- the reduction loop --------------------------------------------------------------


def reduce_index(sys: DDAESystem, hints: dict[str, Expr] | None = None) -> ReductionResult:
    """Iterate row compression, constraint minimisation, and bicausal
    absorption until the leading matrix has full row rank."""
    level_ctx = sys.ctx
    E_k = sys.E
    F_k = list(sys.F)
    frame_fns: list[Expr] = [sys.ctx.var(i) for i in range(1, sys.n + 1)]
    constraint_fns: list[list[Expr]] = []  # per level, functions of original x
    back_maps: list[tuple[Context, list[Expr]]] = []  # level ctx, exprs over next level
    steps: list[ReductionStep] = []
    q_depth = 0
    k = 0
    while True:
        cert, E1, r_k = row_compress(E_k)
        rows = E_k.rows
        if r_k == rows:
            break
        if k > sys.p:
            raise CertificateError("rank chain failed to stabilise")
        q_depth += int(max(cert.A.max_degree(), 0))
        QF = _mat_apply(cert.A, F_k)
        F1, F2 = QF[:r_k], QF[r_k:]
        dim = _diff_rank(F2, level_ctx)
        minimized = dim < len(F2)
        F2m = constraint_minimize(F2, level_ctx, dim, hints) if minimized else list(F2)
        analysis = check_condition_C(F2m, level_ctx)
        if analysis.verdict != "YES":
            raise ConditionCViolation(
                f"level {k}: constraint span violates the causality/closedness "
                f"condition:\n{analysis.witness.describe()}",
                witness=analysis.witness,
                constraints=F2m,
            )
        d = len(F2m)
        n_prev = level_ctx.n
        n_k = n_prev - d
        theta = analysis.theta
        # the analysis frame is [constraint coords, theta]; the reduction wants
        # [theta, constraints], so build that map and its certificate directly
        phi_fwd = list(theta) + list(F2m)
        rows_psi = [differential(g, tuple(range(1, n_prev + 1))).row for g in phi_fwd]
        psi = rows_psi[0]
        for r in rows_psi[1:]:
            psi = psi.vstack(r)
        psi_res = try_inverse(psi)
        if not isinstance(psi_res, UnimodularCertificate):
            raise CertificateError(f"level map not certified unimodular: {psi_res}")
        inv_ddae = _reorder_inverse(analysis, d, n_k, level_ctx)
        phi_map = BicausalMap(
            forward=phi_fwd,
            inverse=inv_ddae,
            jacobian_cert=psi_res,
            max_delay_fwd=analysis.bicausal.max_delay_fwd,
            max_delay_inv=analysis.bicausal.max_delay_inv,
        )
        if not phi_map.verify_symbolic():
            raise CertificateError("level map round trip failed")
        # bookkeeping in original coordinates
        full_rules = {b: frame_fns[b - 1] for b in range(1, n_prev + 1)}
        theta_fns = [transplant(t, full_rules, sys.ctx) for t in theta]
        constr_fns = [transplant(g, full_rules, sys.ctx) for g in F2m]
        constraint_fns.append(constr_fns)
        # next-level system
        next_ctx = Context(
            [f"z{i}" for i in range(1, n_k + 1)],
            constants=dict(level_ctx.constants),
            zero_guard=level_ctx.zero_guard,
            seed=level_ctx.seed,
        )
        zero_rules = {n_k + i: level_ctx.zero() for i in range(1, d + 1)}
        inv_zeroed = [substitute(e, zero_rules) for e in inv_ddae]
        var_map = {j: next_ctx.var(j) for j in range(1, n_k + 1)}

        def to_next(e: Expr) -> Expr:
            e2 = substitute(e, {b: inv_zeroed[b - 1] for b in range(1, n_prev + 1)})
            e2 = substitute(e2, zero_rules)
            return transplant(e2, var_map, next_ctx)

        E_til = E1 * psi_res.B
        new_rows = []
        for i in range(E_til.rows):
            row = []
            for j in range(n_k):
                sp = E_til[i, j]
                row.append(
                    SkewPoly(next_ctx, {deg: to_next(c) for deg, c in sp.coeffs.items()})
                )
            new_rows.append(row)
        E_next = SkewMatrix(next_ctx, new_rows, cols=n_k)
        F_next = [to_next(f) for f in F1]
        back_maps.append((level_ctx, [transplant(substitute(e, zero_rules), var_map, next_ctx) for e in inv_zeroed]))
        steps.append(
            ReductionStep(
                k=k,
                q_cert=cert,
                f2=F2m,
                r_k=r_k,
                n_k=n_k,
                phi=phi_map,
                minimized=minimized,
                analysis=analysis,
            )
        )
        frame_fns = theta_fns
        level_ctx = next_ctx
        E_k = E_next
        F_k = F_next
        k += 1

    reduced = DDAESystem(level_ctx, E_k, F_k)
    # stacked forward map over the original coordinates
    phi_forward = list(frame_fns)
    for fns in reversed(constraint_fns):
        phi_forward.extend(fns)
    phi_cert: Optional[BicausalMap] = None
    if steps:
        try:
            phi_cert = build_bicausal(phi_forward, sys.ctx)
        except (SolveError, CertificateError):
            phi_cert = None
    # original coordinates as functions of the reduced ones (constraints at zero)
    map_back = _compose_back_maps(back_maps, reduced.ctx)
    cls, unique, free = classify(reduced)
    return ReductionResult(
        k_star=k,
        system=reduced,
        steps=steps,
        phi_forward=phi_forward,
        phi=phi_cert,
        map_back=map_back,
        classification=cls,
        unique=unique,
        free_vars=free,
        q_shift_depth=q_depth,
    )


def _compose_back_maps(back_maps: list[tuple[Context, list[Expr]]], reduced_ctx: Context) -> list[Expr]:
    """Compose level inverses: original coordinates over the reduced variables."""
    # back_maps[i] = (ctx_i, exprs of ctx_{i+1} vars); the last entry's exprs
    # are already over the reduced context.
    current: list[Expr] = None
    for lev_ctx, g in reversed(back_maps):
        if current is None:
            current = list(g)
            continue
        # g maps ctx_i vars to exprs over ctx_{i+1}; current maps ctx_{i+1}
        # onward to the reduced ctx — substitute
        current = [
            transplant(e, {b: current[b - 1] for b in range(1, len(current) + 1)}, reduced_ctx)
            for e in g
        ]
    if current is None:
        current = [reduced_ctx.var(i) for i in range(1, reduced_ctx.n + 1)]
    return current
