"""Decision procedure and constructive machinery for bicausal resolutions of
delayed algebraic constraints.

Given functions lam_1..lam_p of delayed variables whose differentials are
independent over the operator ring, the engine decides whether they extend to
a bicausal change of coordinates, and if so constructs complementary
coordinates theta and a certified inverse.  The loop reduces shift degrees of
the differential row one pair at a time: each iteration picks a coordinate
pair whose leading-ratio passes the forward-shift test, integrates the
induced two-variable form, and replaces one coordinate by the (advanced)
potential.  A constraint whose differential row acquires a degree-0,
certifiably nonzero entry is absorbed in a single triangular step.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import sympy

from .errors import (
    BudgetExhausted,
    CertificateError,
    DimensionError,
    DomainError,
    IntegrationFailure,
    SolveError,
)
from .exprs import (
    Context,
    DelayedVar,
    Expr,
    causality_scan,
    eval_num,
    is_nonzero_certain,
    is_zero,
    partial,
    shift,
    substitute,
)
from .forms import OneForm, PfaffianProblem, differential, integrate_pfaffian
from .skew import (
    Inconclusive,
    NotUnimodular,
    SkewMatrix,
    SkewPoly,
    UnimodularCertificate,
    rank,
    row_compress,
    try_inverse,
)

import random


@dataclass
class PairChoice:
    r: int  # ambient slot whose entry becomes the pivot (denominator)
    s: int  # ambient slot whose entry gets reduced
    jbar1: int
    jbar2: int
    ratio: Expr  # lead(alpha_s)/lead(alpha_r), in pre-permutation names
    scan: list = field(default_factory=list)


@dataclass
class CoordStep:
    k: int
    l: int
    kind: str  # "reduction" | "direct"
    permutation: tuple[int, ...]
    pair: Optional[tuple[int, int]]
    jbar1: int
    jbar2: Optional[int]
    lambda_hat: Optional[Expr]
    new_coord: Expr  # as a function of the original coordinates
    psi_cert: UnimodularCertificate
    degree_before: int
    degree_after: int
    lam_before: Optional[Expr] = None  # working constraint after the permutation
    lam_after: Optional[Expr] = None  # working constraint after the replacement


@dataclass
class Witness:
    kind: str  # "noncausal-pairs" | "terminal-degree"
    stage: int
    scan: list = field(default_factory=list)
    terminal_slot: int = 0
    terminal_entry: str = ""

    def describe(self) -> str:
        if self.kind == "terminal-degree":
            return (
                f"stage {self.stage}: the constraint depends on a single remaining "
                f"coordinate through the operator {self.terminal_entry} of positive "
                f"shift degree (span not closed)"
            )
        lines = [f"stage {self.stage}: every admissible pair fails the forward-shift test"]
        for rec in self.scan:
            lines.append(
                f"  pair ({rec['r']},{rec['s']}): advanced ratio {rec['shifted']} "
                f"min shift {rec['min_shift']}"
            )
        return "\n".join(lines)


@dataclass
class BicausalMap:
    forward: list[Expr]
    inverse: list[Expr]
    jacobian_cert: UnimodularCertificate
    max_delay_fwd: int
    max_delay_inv: int

    def verify_symbolic(self) -> bool:
        ctx = self.forward[0].ctx
        rules = {i + 1: f for i, f in enumerate(self.forward)}
        for i, inv in enumerate(self.inverse):
            back = substitute(inv, rules)
            if not is_zero(back - ctx.var(i + 1)):
                return False
        return True

    def verify_numeric(self, samples: int = 16, seed: int = 7, tol: float = 1e-8) -> bool:
        ctx = self.forward[0].ctx
        depth = self.max_delay_fwd + self.max_delay_inv + 1
        rng = random.Random(seed)
        done = 0
        tries = 0
        while done < samples and tries < samples * 30:
            tries += 1
            assign = {}
            for b in range(1, ctx.n + 1):
                for j in range(depth + 1):
                    assign[DelayedVar(b, j)] = rng.uniform(0.4, 2.1)
            for name in ctx.constants:
                assign[name] = rng.uniform(0.4, 2.1)
            try:
                zvals = {}
                for j, f in enumerate(self.forward):
                    for s in range(self.max_delay_inv + 1):
                        zvals[DelayedVar(j + 1, s)] = eval_num(shift(f, s), assign)
                zvals.update({name: assign[name] for name in ctx.constants})
                for i, inv in enumerate(self.inverse):
                    want = assign[DelayedVar(i + 1, 0)]
                    got = eval_num(inv, zvals)
                    if abs(got - want) > tol * (1 + abs(want)):
                        return False
            except Exception:
                continue
            done += 1
        return done > 0

    def max_delays(self) -> tuple[int, int]:
        return self.max_delay_fwd, self.max_delay_inv


@dataclass
class AnalysisResult:
    verdict: str  # "YES" | "NO"
    steps: list[CoordStep]
    theta: list[Expr]
    stacked_cert: Optional[UnimodularCertificate]
    witness: Optional[Witness]
    probabilistic_flag: bool
    bicausal: Optional[BicausalMap]
    frame: list[Expr]
    lambdas_final: list[Expr]
    trace: list[dict]


def _max_delay(exprs: Sequence[Expr]) -> int:
    out = 0
    for e in exprs:
        for a in e.var_atoms():
            out = max(out, a.shift)
    return out


def _solve_rational_linear(expr: Expr, base: int, target: Expr) -> Expr:
    """Solve expr(v, rest) = target for the shift-0 atom of variable `base`."""
    ctx = expr.ctx
    v_shifts = {a.shift for a in expr.var_atoms() if a.base == base}
    if v_shifts - {0}:
        raise SolveError(
            f"variable {ctx.var_names[base - 1]} occurs at shifts {sorted(v_shifts)}; "
            "only a single shift-0 occurrence is solvable"
        )
    s = ctx.var_symbol(DelayedVar(base, 0))
    tmp = sympy.Symbol("_solve_target")
    num, den = expr.fraction()
    poly = sympy.Poly(sympy.expand(num - tmp * den), s)
    if poly.degree() != 1:
        raise SolveError(f"equation is degree {poly.degree()} in the unknown")
    a1 = poly.coeff_monomial(s)
    a0 = poly.coeff_monomial(1)
    sol = (-a0 / a1).subs(tmp, target._sym)
    return Expr(ctx, sol)


def _zero_set_solve(expr: Expr, base: int) -> Optional[Expr]:
    """Solve expr = 0 for the shift-0 atom of `base` when rational-linear."""
    ctx = expr.ctx
    shifts = {a.shift for a in expr.var_atoms() if a.base == base}
    if shifts != {0}:
        return None
    s = ctx.var_symbol(DelayedVar(base, 0))
    num, _den = expr.fraction()
    poly = sympy.Poly(sympy.expand(num), s)
    if poly.degree() != 1:
        return None
    a1 = poly.coeff_monomial(s)
    a0 = poly.coeff_monomial(1)
    return Expr(ctx, -a0 / a1)


class CoordinateEngine:
    """Shared state for the staged degree-reduction loop."""

    def __init__(
        self,
        lambdas: Sequence[Expr],
        ctx: Context,
        passengers: Sequence[Expr] = (),
        factor_box: int = 3,
    ):
        self.ctx = ctx
        self.n = ctx.n
        self.factor_box = factor_box
        self.frame: list[Expr] = [ctx.var(i) for i in range(1, self.n + 1)]
        self.inverse: list[Expr] = [ctx.var(i) for i in range(1, self.n + 1)]
        self.lambdas: list[Expr] = list(lambdas)
        self.passengers: list[Expr] = list(passengers)
        self.steps: list[CoordStep] = []
        self.trace: list[dict] = []
        self.probabilistic = any(l.has_transcendental() for l in lambdas)

    # -- frame updates -------------------------------------------------------

    def _rewrite_all(self, rules: dict[int, Expr]):
        self.lambdas = [substitute(l, rules) for l in self.lambdas]
        self.passengers = [substitute(e, rules) for e in self.passengers]
        self.inverse = [substitute(e, rules) for e in self.inverse]

    def apply_permutation(self, perm: Sequence[int]):
        """perm[j] = ambient index whose coordinate moves to slot j+1."""
        perm = list(perm)
        if sorted(perm) != list(range(1, self.n + 1)):
            raise ValueError("not a permutation of the frame")
        if perm == list(range(1, self.n + 1)):
            return
        self.frame = [self.frame[i - 1] for i in perm]
        rules = {}
        for new_pos, old_idx in enumerate(perm, start=1):
            if old_idx != new_pos:
                rules[old_idx] = self.ctx.var(new_pos)
        self._rewrite_all(rules)

    def apply_replacement(self, slot: int, new_coord_frame_expr: Expr, inverse_rule: Expr):
        full = {b: self.frame[b - 1] for b in range(1, self.n + 1)}
        self.frame[slot - 1] = substitute(new_coord_frame_expr, full)
        self._rewrite_all({slot: inverse_rule})

    # -- per-stage machinery ---------------------------------------------------

    def alpha(self, k: int) -> OneForm:
        active = tuple(range(k, self.n + 1))
        return differential(self.lambdas[k - 1], active)

    def select_pair(self, k: int) -> Optional[PairChoice]:
        return select_pair(self.alpha(k), stage=k)

    def _psi_certificate(self, k: int, row: OneForm) -> UnimodularCertificate:
        q = self.n - k + 1
        ctx = self.ctx
        rows = []
        first = [row.entry(b) for b in range(k, self.n + 1)]
        rows.append(first)
        for i in range(1, q):
            rows.append(
                [SkewPoly.one(ctx) if j == i else SkewPoly.zero(ctx) for j in range(q)]
            )
        psi = SkewMatrix(ctx, rows, cols=q)
        res = try_inverse(psi)
        if not isinstance(res, UnimodularCertificate):
            raise CertificateError(f"triangular step matrix not certified: {res}")
        return res

    def apply_reduction(self, k: int, l: int, choice: PairChoice) -> CoordStep:
        perm = list(range(1, k)) + [choice.r, choice.s] + [
            i for i in range(k, self.n + 1) if i not in (choice.r, choice.s)
        ]
        self.apply_permutation(perm)
        lam_before = self.lambdas[k - 1]
        al = self.alpha(k)
        a_r, a_s = al.entry(k), al.entry(k + 1)
        j1, j2 = int(a_r.degree()), int(a_s.degree())
        ratio = a_s.lead() / a_r.lead()
        v1 = DelayedVar(k, j1)
        v2 = DelayedVar(k + 1, j2)
        lam_hat = integrate_pfaffian(
            PfaffianProblem(self.ctx.one(), ratio, v1, v2), factor_box=self.factor_box
        )
        hat_bases = {a.shift for a in lam_hat.var_atoms() if a.base == k}
        if hat_bases != {j1}:
            raise IntegrationFailure(
                f"potential touches the pivot coordinate at shifts {sorted(hat_bases)}, "
                f"so the triangular step is not invertible"
            )
        ok, mn, _ = causality_scan(shift(lam_hat, -j1))
        if not ok:
            raise IntegrationFailure(
                f"advanced potential is non-causal (min shift {mn - j1})"
            )
        new_coord = shift(lam_hat, -j1)
        inverse_rule = _solve_rational_linear(new_coord, k, self.ctx.var(k))
        row = differential(new_coord, tuple(range(k, self.n + 1)))
        cert = self._psi_certificate(k, row)
        self.apply_replacement(k, new_coord, inverse_rule)
        new_deg_s = self.alpha(k).entry(k + 1).degree()
        after = int(new_deg_s) if new_deg_s != float("-inf") else -1
        if not after < j2:
            raise CertificateError(
                f"degree of the reduced entry did not decrease ({j2} -> {after})"
            )
        step = CoordStep(
            k=k,
            l=l,
            kind="reduction",
            permutation=tuple(perm),
            pair=(choice.r, choice.s),
            jbar1=j1,
            jbar2=j2,
            lambda_hat=lam_hat,
            new_coord=self.frame[k - 1],
            psi_cert=cert,
            degree_before=j2,
            degree_after=after,
            lam_before=lam_before,
            lam_after=self.lambdas[k - 1],
        )
        self.steps.append(step)
        self.trace.append(
            {
                "stage": k,
                "iter": l,
                "rule": "pair-reduce",
                "pair": [choice.r, choice.s],
                "jbar1": j1,
                "jbar2": j2,
                "lambda_hat": str(lam_hat),
            }
        )
        return step

    def run_stage(self, k: int, mode: str) -> Optional[Witness]:
        """mode "decide": finish or produce a NO witness; mode "closure":
        stop at the single-coordinate terminal state without judging it."""
        al0 = self.alpha(k)
        q = self.n - k + 1
        total_deg = sum(
            max(int(al0.entry(i).degree()), 0)
            for i in range(k, self.n + 1)
            if not al0.entry(i).is_zero()
        )
        budget = (total_deg + 1) * q + 2
        l = 1
        while True:
            if l > budget:
                raise BudgetExhausted(
                    f"stage {k}: no stabilisation within {budget} iterations"
                )
            al = self.alpha(k)
            entries = {i: al.entry(i) for i in range(k, self.n + 1)}
            nonzero = [i for i, e in entries.items() if not e.is_zero()]
            if not nonzero:
                raise DimensionError(
                    f"stage {k}: constraint became independent of the active coordinates"
                )
            if len(nonzero) == 1:
                slot = nonzero[0]
                entry = entries[slot]
                perm = list(range(1, k)) + [slot] + [
                    i for i in range(k, self.n + 1) if i != slot
                ]
                if entry.degree() == 0:
                    # terminal: the constraint depends on one coordinate through
                    # a degree-0 invertible factor, so the stage is complete
                    self.apply_permutation(perm)
                    self.trace.append(
                        {"stage": k, "iter": l, "rule": "terminal", "entry": str(entry)}
                    )
                    return None
                if mode == "closure":
                    self.apply_permutation(perm)
                    return None
                return Witness(
                    kind="terminal-degree",
                    stage=k,
                    terminal_slot=slot,
                    terminal_entry=str(entries[slot]),
                )
            choice = self.select_pair(k)
            if choice is None:
                scan = select_pair(al, stage=k, collect_only=True)
                return Witness(kind="noncausal-pairs", stage=k, scan=scan)
            self.apply_reduction(k, l, choice)
            l += 1


def select_pair(
    alpha: OneForm, stage: int = 1, collect_only: bool = False
) -> Optional[PairChoice] | list:
    """Scan ordered coordinate pairs for one whose advanced leading ratio is
    causal; pairs are tried in lexicographic order of their slot indices."""
    records = []
    order = alpha.var_order
    for r in order:
        er = alpha.entry(r)
        if er.is_zero():
            continue
        for s in order:
            if s == r:
                continue
            es = alpha.entry(s)
            if es.is_zero() or er.degree() > es.degree():
                continue
            ratio = es.lead() / er.lead()
            shifted = shift(ratio, -int(er.degree()))
            ok, mn, mx = causality_scan(shifted)
            records.append(
                {
                    "r": r,
                    "s": s,
                    "jbar1": int(er.degree()),
                    "jbar2": int(es.degree()),
                    "ratio": str(ratio),
                    "shifted": str(shifted),
                    "min_shift": mn,
                    "causal": ok,
                }
            )
            if ok and not collect_only:
                return PairChoice(
                    r=r,
                    s=s,
                    jbar1=int(er.degree()),
                    jbar2=int(es.degree()),
                    ratio=ratio,
                    scan=records,
                )
    return records if collect_only else None


def degree_reduce(engine: CoordinateEngine, k: int, choice: PairChoice, l: int = 1) -> CoordStep:
    """One pair-reduction step on the engine state (exposed for auditing)."""
    return engine.apply_reduction(k, l, choice)


def check_condition_C(
    lambdas: Sequence[Expr],
    ctx: Context,
    *,
    degree_bound: int | None = None,
    factor_box: int = 3,
    verify_numeric: bool = False,
) -> AnalysisResult:
    """Full staged decision: YES with certified complementary coordinates, or
    NO with a concrete causality/closedness witness."""
    lambdas = list(lambdas)
    p = len(lambdas)
    if p == 0 or p > ctx.n:
        raise DimensionError(f"{p} constraints over {ctx.n} coordinates")
    stacked = _stacked_differential(lambdas, ctx)
    if rank(stacked) != p:
        raise DimensionError(
            f"differentials span rank {rank(stacked)} < {p}; "
            "reduce the constraint list first"
        )
    engine = CoordinateEngine(lambdas, ctx, factor_box=factor_box)
    for k in range(1, p + 1):
        witness = engine.run_stage(k, mode="decide")
        if witness is not None:
            return AnalysisResult(
                verdict="NO",
                steps=engine.steps,
                theta=[],
                stacked_cert=None,
                witness=witness,
                probabilistic_flag=engine.probabilistic,
                bicausal=None,
                frame=engine.frame,
                lambdas_final=engine.lambdas,
                trace=engine.trace,
            )
    theta = engine.frame[p:]
    rows = [differential(l, tuple(range(1, ctx.n + 1))).row for l in lambdas]
    rows += [differential(t, tuple(range(1, ctx.n + 1))).row for t in theta]
    full = rows[0]
    for r in rows[1:]:
        full = full.vstack(r)
    res = try_inverse(full, degree_bound)
    if not isinstance(res, UnimodularCertificate):
        raise CertificateError(f"stacked differential not certified unimodular: {res}")
    bic = BicausalMap(
        forward=list(engine.frame),
        inverse=list(engine.inverse),
        jacobian_cert=res,
        max_delay_fwd=_max_delay(engine.frame),
        max_delay_inv=_max_delay(engine.inverse),
    )
    if not bic.verify_symbolic():
        raise CertificateError("round-trip identity failed symbolically")
    if verify_numeric and not bic.verify_numeric():
        raise CertificateError("round-trip identity failed numerically")
    return AnalysisResult(
        verdict="YES",
        steps=engine.steps,
        theta=theta,
        stacked_cert=res,
        witness=None,
        probabilistic_flag=engine.probabilistic or res.probabilistic_flag,
        bicausal=bic,
        frame=engine.frame,
        lambdas_final=engine.lambdas,
        trace=engine.trace,
    )


def _stacked_differential(lambdas: Sequence[Expr], ctx: Context) -> SkewMatrix:
    rows = [differential(l, tuple(range(1, ctx.n + 1))).row for l in lambdas]
    full = rows[0]
    for r in rows[1:]:
        full = full.vstack(r)
    return full


@dataclass
class ClosureResult:
    generator: Expr  # closure coordinate as a function of the level variables
    lam_final: Expr  # input constraint in the final frame (single-variable)
    passengers_final: list[Expr]
    frame: list[Expr]
    inverse: list[Expr]
    steps: list[CoordStep]


def principal_coordinate(lam: Expr, ctx: Context, passengers: Sequence[Expr] = ()) -> ClosureResult:
    """Reduce a single constraint until it depends on one coordinate; that
    coordinate generates the closure of the constraint's differential span."""
    engine = CoordinateEngine([lam], ctx, passengers=passengers)
    witness = engine.run_stage(1, mode="closure")
    if witness is not None:
        raise IntegrationFailure(f"closure reduction stopped: {witness.describe()}")
    return ClosureResult(
        generator=engine.frame[0],
        lam_final=engine.lambdas[0],
        passengers_final=engine.passengers,
        frame=engine.frame,
        inverse=engine.inverse,
        steps=engine.steps,
    )


# -- standalone bicausal maps ---------------------------------------------------


def build_bicausal(forward: Sequence[Expr], ctx: Context, degree_bound: int | None = None) -> BicausalMap:
    """Invert an explicitly given coordinate list by greedy back-substitution
    (each component must release one new variable through a rational-linear
    solve), then certify the stacked differential."""
    n = ctx.n
    forward = list(forward)
    if len(forward) != n:
        raise SolveError("need exactly one component per coordinate")
    solved: dict[int, Expr] = {}
    remaining = list(range(n))
    while remaining:
        progress = False
        for idx in list(remaining):
            comp = substitute(forward[idx], solved)
            unknown_bases = {a.base for a in comp.var_atoms()} - set(solved)
            if len(unknown_bases) != 1:
                continue
            b = unknown_bases.pop()
            shifts = sorted({a.shift for a in comp.var_atoms() if a.base == b})
            target = ctx.var(idx + 1)
            if shifts == [0]:
                try:
                    sol = _solve_rational_linear(comp, b, target)
                except SolveError:
                    continue
            elif len(shifts) == 1:
                s0 = shifts[0]
                advanced = shift(comp, -s0)
                adv_target = shift(target, -s0)
                ok, _, _ = causality_scan(adv_target)
                if not ok:
                    continue
                try:
                    sol = _solve_rational_linear(advanced, b, adv_target)
                except SolveError:
                    continue
                okc, _, _ = causality_scan(sol)
                if not okc:
                    continue
            else:
                continue
            solved[b] = sol
            remaining.remove(idx)
            progress = True
        if not progress:
            raise SolveError("back-substitution stalled; map is not triangular enough")
    inverse = [solved[b] for b in sorted(solved)]
    rows = [differential(f, tuple(range(1, n + 1))).row for f in forward]
    full = rows[0]
    for r in rows[1:]:
        full = full.vstack(r)
    res = try_inverse(full, degree_bound)
    if not isinstance(res, UnimodularCertificate):
        raise CertificateError(f"stacked differential not certified unimodular: {res}")
    bic = BicausalMap(
        forward=forward,
        inverse=inverse,
        jacobian_cert=res,
        max_delay_fwd=_max_delay(forward),
        max_delay_inv=_max_delay(inverse),
    )
    if not bic.verify_symbolic():
        raise CertificateError("round-trip identity failed symbolically")
    return bic


# -- implicit solve ---------------------------------------------------------------


@dataclass
class ImplicitComponent:
    base: int  # original coordinate index
    solution: Optional[Expr]  # in final-frame names, constraint slots resolved


@dataclass
class ImplicitSolution:
    roots: dict[int, Expr]  # value of each constraint-block coordinate on lam = 0
    components: list[ImplicitComponent]
    explicit: bool


def implicit_solve(lambdas: Sequence[Expr], result: AnalysisResult) -> ImplicitSolution:
    """Resolve lam = 0 explicitly through the constructed coordinates.

    In the final frame each constraint depends only on the frame coordinates
    up to its own slot, with an invertible degree-0 dependence on that slot,
    so the constraint set pins the first p coordinates to root values; mapping
    those roots through the inverse yields every original coordinate as a
    function of the complementary block alone.
    """
    if result.verdict != "YES":
        raise SolveError("implicit solve needs a YES analysis")
    p = len(lambdas)
    ctx = lambdas[0].ctx
    roots: dict[int, Expr] = {}
    explicit = True
    for k in range(1, p + 1):
        lam = substitute(result.lambdas_final[k - 1], roots)
        r = _zero_set_solve(lam, k)
        if r is None:
            explicit = False
            continue
        if not is_zero(substitute(lam, {k: r})):
            raise SolveError(f"root of constraint {k} failed re-verification")
        roots[k] = r
    components: list[ImplicitComponent] = []
    for i in range(1, ctx.n + 1):
        sol = substitute(result.bicausal.inverse[i - 1], roots)
        if any(a.base <= p for a in sol.var_atoms()):
            components.append(ImplicitComponent(base=i, solution=None))
            explicit = False
        else:
            components.append(ImplicitComponent(base=i, solution=sol))
    return ImplicitSolution(roots=roots, components=components, explicit=explicit)
