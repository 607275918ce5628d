"""Arithmetic and matrix algebra over the skew polynomial ring in the
backward-shift operator.

Multiplication obeys the commutation rule ``d * a = a[-1] * d`` for field
coefficients ``a``.  Matrices support staircase row compression, rank,
unimodularity certification with an explicit two-sided inverse, polynomial
right inverses built by causal two-sided reduction, and right kernels.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

import sympy

from .errors import CertificateError, DivisionError
from .exprs import (
    Context,
    Expr,
    is_nonzero_certain,
    is_zero,
    shift as expr_shift,
    zero_check,
)

NEG_INF = float("-inf")


class SkewPoly:
    """Sparse polynomial sum(coeff_j * d^j) with Expr coefficients."""

    __slots__ = ("ctx", "coeffs")

    def __init__(self, ctx: Context, coeffs: dict[int, Expr]):
        self.ctx = ctx
        clean = {}
        for deg, c in coeffs.items():
            if deg < 0:
                raise DivisionError("negative shift degrees are not ring elements")
            if not zero_check(c).zero:
                clean[deg] = c
        self.coeffs = dict(sorted(clean.items()))

    # -- constructors --------------------------------------------------------

    @classmethod
    def zero(cls, ctx: Context) -> "SkewPoly":
        return cls(ctx, {})

    @classmethod
    def one(cls, ctx: Context) -> "SkewPoly":
        return cls(ctx, {0: ctx.one()})

    @classmethod
    def from_expr(cls, e: Expr) -> "SkewPoly":
        return cls(e.ctx, {0: e})

    @classmethod
    def delta(cls, ctx: Context, power: int = 1) -> "SkewPoly":
        return cls(ctx, {power: ctx.one()})

    @classmethod
    def monomial(cls, coeff: Expr, power: int) -> "SkewPoly":
        return cls(coeff.ctx, {power: coeff})

    # -- structure -----------------------------------------------------------

    def degree(self) -> float:
        return max(self.coeffs) if self.coeffs else NEG_INF

    def is_zero(self) -> bool:
        return not self.coeffs

    def coeff(self, deg: int) -> Expr:
        return self.coeffs.get(deg, self.ctx.zero())

    def lead(self) -> Expr:
        if not self.coeffs:
            return self.ctx.zero()
        return self.coeffs[max(self.coeffs)]

    def size(self) -> int:
        return sum(1 + sympy.count_ops(c._sym) for c in self.coeffs.values())

    def has_transcendental(self) -> bool:
        return any(c.has_transcendental() for c in self.coeffs.values())

    def map_coeffs(self, fn) -> "SkewPoly":
        return SkewPoly(self.ctx, {d: fn(c) for d, c in self.coeffs.items()})

    # -- ring operations -----------------------------------------------------

    def __add__(self, other: "SkewPoly") -> "SkewPoly":
        out = dict(self.coeffs)
        for d, c in other.coeffs.items():
            out[d] = out[d] + c if d in out else c
        return SkewPoly(self.ctx, out)

    def __sub__(self, other: "SkewPoly") -> "SkewPoly":
        return self + (-other)

    def __neg__(self) -> "SkewPoly":
        return SkewPoly(self.ctx, {d: -c for d, c in self.coeffs.items()})

    def __mul__(self, other: "SkewPoly") -> "SkewPoly":
        out: dict[int, Expr] = {}
        for i, a in self.coeffs.items():
            for j, b in other.coeffs.items():
                term = a * expr_shift(b, i)
                deg = i + j
                out[deg] = out[deg] + term if deg in out else term
        return SkewPoly(self.ctx, out)

    def scale(self, e: Expr) -> "SkewPoly":
        """Left multiplication by a field element."""
        return SkewPoly(self.ctx, {d: e * c for d, c in self.coeffs.items()})

    def rscale(self, e: Expr) -> "SkewPoly":
        """Right multiplication by a field element: coeff_j -> coeff_j * e(-j)."""
        return SkewPoly(self.ctx, {d: c * expr_shift(e, d) for d, c in self.coeffs.items()})

    def __eq__(self, other):
        if not isinstance(other, SkewPoly):
            return NotImplemented
        return (self - other).is_zero()

    def __hash__(self):
        return hash(tuple((d, c._sym) for d, c in self.coeffs.items()))

    def __repr__(self):
        return f"SkewPoly({self})"

    def __str__(self):
        if not self.coeffs:
            return "0"
        parts = []
        for d, c in self.coeffs.items():
            c_text = str(c)
            if d == 0:
                parts.append(c_text)
                continue
            d_text = "d" if d == 1 else f"d^{d}"
            bare = re.sub(r"\[[-+]\d+\]", "", c_text)
            if c_text == "1":
                parts.append(d_text)
            elif any(ch in bare for ch in "+-/ "):
                parts.append(f"({c_text})*{d_text}")
            else:
                parts.append(f"{c_text}*{d_text}")
        return " + ".join(parts)

    def to_json(self) -> dict:
        return {str(d): str(c) for d, c in self.coeffs.items()}


def spoly_mul(a: SkewPoly, b: SkewPoly) -> SkewPoly:
    return a * b


def left_divide(a: SkewPoly, b: SkewPoly) -> tuple[SkewPoly, SkewPoly]:
    """Left-Euclidean division a = q*b + r with deg(r) < deg(b)."""
    if b.is_zero():
        raise DivisionError("division by the zero operator")
    if not is_nonzero_certain(b.lead()):
        raise DivisionError("leading coefficient is not certifiably nonzero")
    ctx = a.ctx
    q = SkewPoly.zero(ctx)
    r = a
    db = b.degree()
    while not r.is_zero() and r.degree() >= db:
        k = int(r.degree() - db)
        denom = expr_shift(b.lead(), k)
        t = SkewPoly.monomial(r.lead() / denom, k)
        q = q + t
        r = r - t * b
    return q, r


def right_divide_monomial(a: SkewPoly, b: SkewPoly, causal_only: bool) -> Optional[SkewPoly]:
    """A single right-division step: monomial q with deg(a - b*q) < deg(a).

    Returns None when deg(a) < deg(b), or when causal_only is set and the
    required quotient coefficient carries a forward shift.
    """
    if a.is_zero() or b.is_zero() or a.degree() < b.degree():
        return None
    k = int(a.degree() - b.degree())
    # want b.lead() * shift(q0, deg b) = a.lead()
    q0 = expr_shift(a.lead() / b.lead(), -int(b.degree()))
    if causal_only:
        from .exprs import causality_scan

        if not causality_scan(q0)[0]:
            return None
    return SkewPoly.monomial(q0, k)


# -- matrices ------------------------------------------------------------------


class SkewMatrix:
    """Immutable rectangular matrix of SkewPoly entries."""

    __slots__ = ("ctx", "rows", "cols", "entries")

    def __init__(self, ctx: Context, entries: Sequence[Sequence[SkewPoly]], cols: int | None = None):
        self.ctx = ctx
        self.entries = tuple(tuple(row) for row in entries)
        self.rows = len(self.entries)
        if self.rows:
            self.cols = len(self.entries[0])
            if any(len(r) != self.cols for r in self.entries):
                raise ValueError("ragged matrix")
        else:
            if cols is None:
                raise ValueError("empty matrix needs an explicit column count")
            self.cols = cols

    @classmethod
    def identity(cls, ctx: Context, n: int) -> "SkewMatrix":
        return cls(
            ctx,
            [
                [SkewPoly.one(ctx) if i == j else SkewPoly.zero(ctx) for j in range(n)]
                for i in range(n)
            ],
            cols=n,
        )

    @classmethod
    def zeros(cls, ctx: Context, rows: int, cols: int) -> "SkewMatrix":
        return cls(ctx, [[SkewPoly.zero(ctx)] * cols for _ in range(rows)], cols=cols)

    @classmethod
    def from_exprs(cls, rows: Sequence[Sequence[Expr]], ctx: Context, cols: int | None = None) -> "SkewMatrix":
        return cls(ctx, [[SkewPoly.from_expr(e) for e in row] for row in rows], cols=cols)

    def __getitem__(self, idx) -> SkewPoly:
        i, j = idx
        return self.entries[i][j]

    def row(self, i: int) -> tuple[SkewPoly, ...]:
        return self.entries[i]

    def __mul__(self, other: "SkewMatrix") -> "SkewMatrix":
        if self.cols != other.rows:
            raise ValueError("dimension mismatch")
        out = []
        for i in range(self.rows):
            row = []
            for j in range(other.cols):
                acc = SkewPoly.zero(self.ctx)
                for k in range(self.cols):
                    acc = acc + self.entries[i][k] * other.entries[k][j]
                row.append(acc)
            out.append(row)
        return SkewMatrix(self.ctx, out, cols=other.cols)

    def __sub__(self, other: "SkewMatrix") -> "SkewMatrix":
        out = [
            [self.entries[i][j] - other.entries[i][j] for j in range(self.cols)]
            for i in range(self.rows)
        ]
        return SkewMatrix(self.ctx, out, cols=self.cols)

    def is_zero(self) -> bool:
        return all(e.is_zero() for row in self.entries for e in row)

    def max_degree(self) -> float:
        degs = [e.degree() for row in self.entries for e in row if not e.is_zero()]
        return max(degs) if degs else NEG_INF

    def has_transcendental(self) -> bool:
        return any(e.has_transcendental() for row in self.entries for e in row)

    def take_rows(self, idxs: Iterable[int]) -> "SkewMatrix":
        return SkewMatrix(self.ctx, [self.entries[i] for i in idxs], cols=self.cols)

    def take_cols(self, idxs: Iterable[int]) -> "SkewMatrix":
        idxs = list(idxs)
        return SkewMatrix(
            self.ctx,
            [[self.entries[i][j] for j in idxs] for i in range(self.rows)],
            cols=len(idxs),
        )

    def vstack(self, other: "SkewMatrix") -> "SkewMatrix":
        if self.cols != other.cols:
            raise ValueError("dimension mismatch")
        return SkewMatrix(self.ctx, list(self.entries) + list(other.entries), cols=self.cols)

    def __eq__(self, other):
        if not isinstance(other, SkewMatrix):
            return NotImplemented
        return (
            self.rows == other.rows
            and self.cols == other.cols
            and (self - other).is_zero()
        )

    def __hash__(self):
        return hash((self.rows, self.cols))

    def __repr__(self):
        body = "; ".join(", ".join(str(e) for e in row) for row in self.entries)
        return f"SkewMatrix[{body}]"

    def to_json(self) -> list:
        return [[e.to_json() for e in row] for row in self.entries]


@dataclass
class UnimodularCertificate:
    """A pair (A, B) with A*B = B*A = I, re-checkable at any time."""

    A: SkewMatrix
    B: SkewMatrix
    probabilistic_flag: bool = False

    def verify(self) -> bool:
        n = self.A.rows
        ident = SkewMatrix.identity(self.A.ctx, n)
        return (self.A * self.B - ident).is_zero() and (self.B * self.A - ident).is_zero()

    def to_json(self) -> dict:
        return {
            "matrix": self.A.to_json(),
            "inverse": self.B.to_json(),
            "probabilistic": self.probabilistic_flag,
        }


@dataclass
class NotUnimodular:
    """Verdict with a machine-checkable obstruction witness."""

    reason: str
    column: int = -1
    pivot: str = ""


@dataclass
class Inconclusive:
    reason: str


class _RowOps:
    """Working matrix with accumulated left factor Q and its inverse."""

    def __init__(self, M: SkewMatrix):
        self.ctx = M.ctx
        self.m = [list(row) for row in M.entries]
        self.rows = M.rows
        self.cols = M.cols
        n = M.rows
        self.q = [list(row) for row in SkewMatrix.identity(M.ctx, n).entries]
        self.qinv = [list(row) for row in SkewMatrix.identity(M.ctx, n).entries]

    def swap(self, i: int, j: int):
        if i == j:
            return
        self.m[i], self.m[j] = self.m[j], self.m[i]
        self.q[i], self.q[j] = self.q[j], self.q[i]
        for r in range(self.rows):
            self.qinv[r][i], self.qinv[r][j] = self.qinv[r][j], self.qinv[r][i]

    def add_multiple(self, i: int, j: int, alpha: SkewPoly):
        """row_i += alpha * row_j; inverse column update on qinv."""
        if alpha.is_zero():
            return
        self.m[i] = [self.m[i][c] + alpha * self.m[j][c] for c in range(self.cols)]
        self.q[i] = [self.q[i][c] + alpha * self.q[j][c] for c in range(self.rows)]
        for r in range(self.rows):
            self.qinv[r][j] = self.qinv[r][j] - self.qinv[r][i] * alpha

    def scale(self, i: int, u: Expr):
        """row_i *= u for a field unit u."""
        inv = self.ctx.one() / u
        self.m[i] = [e.scale(u) for e in self.m[i]]
        self.q[i] = [e.scale(u) for e in self.q[i]]
        for r in range(self.rows):
            self.qinv[r][i] = self.qinv[r][i].rscale(inv)

    def matrix(self) -> SkewMatrix:
        return SkewMatrix(self.ctx, self.m, cols=self.cols)

    def certificate(self) -> UnimodularCertificate:
        Q = SkewMatrix(self.ctx, self.q, cols=self.rows)
        Qinv = SkewMatrix(self.ctx, self.qinv, cols=self.rows)
        flag = Q.has_transcendental() or Qinv.has_transcendental()
        cert = UnimodularCertificate(Q, Qinv, probabilistic_flag=flag)
        if not cert.verify():
            raise CertificateError("row-operation certificate failed to verify")
        return cert


def _pivot_key(entry: SkewPoly, row: int):
    return (entry.degree(), entry.size(), row)


def row_compress(M: SkewMatrix) -> tuple[UnimodularCertificate, SkewMatrix, int]:
    """Unimodular Q with Q*M = [M1; 0], M1 of full row rank."""
    ops = _RowOps(M)
    pivot_row = 0
    for col in range(M.cols):
        while True:
            cands = [r for r in range(pivot_row, ops.rows) if not ops.m[r][col].is_zero()]
            if not cands:
                break
            best = min(cands, key=lambda r: _pivot_key(ops.m[r][col], r))
            others = [r for r in cands if r != best]
            if not others:
                ops.swap(pivot_row, best)
                pivot_row += 1
                break
            for r in others:
                q, _rem = left_divide(ops.m[r][col], ops.m[best][col])
                ops.add_multiple(r, best, -q)
    cert = ops.certificate()
    reduced = ops.matrix()
    m1 = reduced.take_rows(range(pivot_row))
    return cert, m1, pivot_row


def rank(M: SkewMatrix) -> int:
    return row_compress(M)[2]


def default_degree_bound(M: SkewMatrix) -> int:
    top = M.max_degree()
    top = 0 if top == NEG_INF else int(top)
    return max(M.rows, M.cols) * (1 + top)


def try_inverse(
    M: SkewMatrix, degree_bound: int | None = None
) -> Union[UnimodularCertificate, NotUnimodular, Inconclusive]:
    """Gauss-style reduction to the identity; tri-state outcome."""
    if M.rows != M.cols:
        raise ValueError("try_inverse needs a square matrix")
    if degree_bound is None:
        degree_bound = default_degree_bound(M)
    n = M.rows
    ops = _RowOps(M)
    for col in range(n):
        while True:
            cands = [r for r in range(col, n) if not ops.m[r][col].is_zero()]
            if not cands:
                return NotUnimodular("rank deficiency", column=col)
            best = min(cands, key=lambda r: _pivot_key(ops.m[r][col], r))
            others = [r for r in cands if r != best]
            if not others:
                ops.swap(col, best)
                break
            try:
                for r in others:
                    q, _rem = left_divide(ops.m[r][col], ops.m[best][col])
                    ops.add_multiple(r, best, -q)
            except DivisionError as err:
                return Inconclusive(str(err))
            if ops.matrix().max_degree() > degree_bound:
                return Inconclusive(f"degree bound {degree_bound} exhausted")
        pivot = ops.m[col][col]
        if pivot.degree() > 0:
            return NotUnimodular(
                "column gcd has positive shift degree (zero degree-0 part obstruction)",
                column=col,
                pivot=str(pivot),
            )
        ops.scale(col, ops.ctx.one() / pivot.coeff(0))
        for r in range(col):
            if not ops.m[r][col].is_zero():
                ops.add_multiple(r, col, -ops.m[r][col])
        if ops.matrix().max_degree() > degree_bound:
            return Inconclusive(f"degree bound {degree_bound} exhausted")
    cert = ops.certificate()
    # Q * M = I, so M^{-1} = Q; package the certificate around M itself.
    out = UnimodularCertificate(
        M, SkewMatrix(ops.ctx, ops.q, cols=n), probabilistic_flag=cert.probabilistic_flag
        or M.has_transcendental(),
    )
    if not out.verify():
        raise CertificateError("inverse certificate failed to verify")
    return out


# -- two-sided reduction (Smith-style) ----------------------------------------


class _TwoSided:
    """Row and column operations with all four accumulated factors."""

    def __init__(self, M: SkewMatrix):
        self.ctx = M.ctx
        self.m = [list(row) for row in M.entries]
        self.rows = M.rows
        self.cols = M.cols
        self.p = [list(r) for r in SkewMatrix.identity(M.ctx, M.rows).entries]
        self.pinv = [list(r) for r in SkewMatrix.identity(M.ctx, M.rows).entries]
        self.q = [list(r) for r in SkewMatrix.identity(M.ctx, M.cols).entries]
        self.qinv = [list(r) for r in SkewMatrix.identity(M.ctx, M.cols).entries]

    # row ops (left factor)
    def row_swap(self, i, j):
        if i == j:
            return
        self.m[i], self.m[j] = self.m[j], self.m[i]
        self.p[i], self.p[j] = self.p[j], self.p[i]
        for r in range(self.rows):
            self.pinv[r][i], self.pinv[r][j] = self.pinv[r][j], self.pinv[r][i]

    def row_add(self, i, j, alpha: SkewPoly):
        if alpha.is_zero():
            return
        self.m[i] = [self.m[i][c] + alpha * self.m[j][c] for c in range(self.cols)]
        self.p[i] = [self.p[i][c] + alpha * self.p[j][c] for c in range(self.rows)]
        for r in range(self.rows):
            self.pinv[r][j] = self.pinv[r][j] - self.pinv[r][i] * alpha

    # column ops (right factor)
    def col_swap(self, i, j):
        if i == j:
            return
        for r in range(self.rows):
            self.m[r][i], self.m[r][j] = self.m[r][j], self.m[r][i]
        for r in range(self.cols):
            self.q[r][i], self.q[r][j] = self.q[r][j], self.q[r][i]
        self.qinv[i], self.qinv[j] = self.qinv[j], self.qinv[i]

    def col_add(self, j, i, alpha: SkewPoly):
        """col_j += col_i * alpha."""
        if alpha.is_zero():
            return
        for r in range(self.rows):
            self.m[r][j] = self.m[r][j] + self.m[r][i] * alpha
        for r in range(self.cols):
            self.q[r][j] = self.q[r][j] + self.q[r][i] * alpha
        self.qinv[i] = [self.qinv[i][c] - alpha * self.qinv[j][c] for c in range(self.cols)]

    def col_scale(self, j, u: Expr):
        inv = self.ctx.one() / u
        for r in range(self.rows):
            self.m[r][j] = self.m[r][j].rscale(u)
        for r in range(self.cols):
            self.q[r][j] = self.q[r][j].rscale(u)
        self.qinv[j] = [self.qinv[j][c].scale(inv) for c in range(self.cols)]

    def matrix(self) -> SkewMatrix:
        return SkewMatrix(self.ctx, self.m, cols=self.cols)

    def factors(self):
        P = SkewMatrix(self.ctx, self.p, cols=self.rows)
        Pinv = SkewMatrix(self.ctx, self.pinv, cols=self.rows)
        Q = SkewMatrix(self.ctx, self.q, cols=self.cols)
        Qinv = SkewMatrix(self.ctx, self.qinv, cols=self.cols)
        return P, Pinv, Q, Qinv


@dataclass
class SmithResult:
    ok: bool
    diag: list[SkewPoly] = field(default_factory=list)
    rank: int = 0
    P: SkewMatrix | None = None
    Pinv: SkewMatrix | None = None
    Q: SkewMatrix | None = None
    Qinv: SkewMatrix | None = None
    witness: str = ""


def smith_reduce(M: SkewMatrix, causal_only: bool, degree_bound: int | None = None) -> SmithResult:
    """Reduce to diagonal form P*M*Q = [D 0; 0 0] by two-sided elimination.

    With causal_only, column eliminations whose quotient would need a forward
    shift are refused; the reduction then either finds another route or stops
    with a witness.
    """
    if degree_bound is None:
        degree_bound = default_degree_bound(M) + 4
    ts = _TwoSided(M)
    d = 0
    limit = min(M.rows, M.cols)
    while d < limit:
        live = [
            (r, c)
            for r in range(d, ts.rows)
            for c in range(d, ts.cols)
            if not ts.m[r][c].is_zero()
        ]
        if not live:
            break
        progressed = True
        while progressed:
            progressed = False
            if ts.matrix().max_degree() > degree_bound:
                return SmithResult(ok=False, witness=f"degree bound {degree_bound} exhausted")
            # move the best pivot candidate to (d, d)
            live = [
                (r, c)
                for r in range(d, ts.rows)
                for c in range(d, ts.cols)
                if not ts.m[r][c].is_zero()
            ]
            r0, c0 = min(live, key=lambda rc: (_pivot_key(ts.m[rc[0]][rc[1]], rc[0]), rc[1]))
            ts.row_swap(d, r0)
            ts.col_swap(d, c0)
            pivot = ts.m[d][d]
            # clear the pivot column with left divisions (always causal)
            col_busy = [r for r in range(d + 1, ts.rows) if not ts.m[r][d].is_zero()]
            for r in col_busy:
                q, _rem = left_divide(ts.m[r][d], pivot)
                ts.row_add(r, d, -q)
                progressed = True
            if col_busy:
                continue
            # clear the pivot row with right divisions (causality-checked)
            stuck = []
            for c in range(d + 1, ts.cols):
                if ts.m[d][c].is_zero():
                    continue
                q = right_divide_monomial(ts.m[d][c], pivot, causal_only)
                if q is None:
                    stuck.append(c)
                    continue
                ts.col_add(c, d, -q)
                progressed = True
            if progressed:
                continue
            if stuck:
                return SmithResult(
                    ok=False,
                    witness=(
                        f"row {d}: entries in columns {stuck} admit no causal "
                        f"right-division by pivot {ts.m[d][d]}"
                    ),
                )
        # pivot row and column clean; normalise degree-0 pivots to 1
        pivot = ts.m[d][d]
        if pivot.degree() == 0:
            ts.col_scale(d, ts.ctx.one() / pivot.coeff(0))
        d += 1
    P, Pinv, Q, Qinv = ts.factors()
    diag = [ts.m[i][i] for i in range(d)]
    return SmithResult(ok=True, diag=diag, rank=d, P=P, Pinv=Pinv, Q=Q, Qinv=Qinv)


@dataclass
class RightInverseFailure:
    witness: str


def right_inverse(
    L: SkewMatrix, degree_bound: int | None = None
) -> Union[SkewMatrix, RightInverseFailure]:
    """Polynomial right inverse via causal two-sided reduction to [I 0]."""
    p, n = L.rows, L.cols
    if p > n:
        raise ValueError("right inverse needs rows <= cols")
    res = smith_reduce(L, causal_only=True, degree_bound=degree_bound)
    if not res.ok:
        return RightInverseFailure(res.witness)
    if res.rank < p:
        return RightInverseFailure(f"rank {res.rank} < {p}")
    bad = [str(e) for e in res.diag if e.degree() > 0]
    if bad:
        return RightInverseFailure(
            "invariant factor of positive shift degree: " + ", ".join(bad)
        )
    q1 = res.Q.take_cols(range(p))
    linv = q1 * res.P
    check = L * linv - SkewMatrix.identity(L.ctx, p)
    if not check.is_zero():
        raise CertificateError("right inverse failed re-verification")
    return linv


def _causality_of_vector(v: SkewMatrix) -> bool:
    from .exprs import causality_scan

    for row in v.entries:
        for e in row:
            for c in e.coeffs.values():
                if not causality_scan(c)[0]:
                    return False
    return True


def _normalize_kernel_vector(v: SkewMatrix) -> tuple[SkewMatrix, bool]:
    """Try to make a kernel column causal by dividing out a right factor.

    Candidates are the vector's own coefficients (as field elements, shifted
    to degree 0) combined with trailing shift monomials.
    """
    ctx = v.ctx
    if _causality_of_vector(v):
        return v, True
    entries = [row[0] for row in v.entries]
    # trailing common shift power m lets us peel a right factor g * d^m
    min_degs = [min(e.coeffs) for e in entries if not e.is_zero()]
    trail = min(min_degs) if min_degs else 0
    for m in range(0, trail + 1):
        candidates: list[Expr] = [ctx.one()] if m > 0 else []
        for e in entries:
            for dgr, c in e.coeffs.items():
                if dgr - m >= 0:
                    candidates.append(expr_shift(c, -(dgr - m)))
        for g in candidates:
            if not is_nonzero_certain(g):
                continue
            try:
                w_entries = []
                for e in entries:
                    coeffs = {}
                    for dgr, c in e.coeffs.items():
                        coeffs[dgr - m] = c / expr_shift(g, dgr - m)
                    w_entries.append([SkewPoly(ctx, coeffs)])
                w = SkewMatrix(ctx, w_entries, cols=1)
            except DivisionError:
                continue
            if _causality_of_vector(w):
                return w, True
    return v, False


def right_kernel(L: SkewMatrix) -> tuple[list[SkewMatrix], bool]:
    """Kernel basis over the ring (forward shifts permitted), then a causal
    normalisation pass; the flag reports whether every vector came out causal."""
    p, n = L.rows, L.cols
    res = smith_reduce(L, causal_only=False)
    if not res.ok:
        raise CertificateError(f"kernel reduction failed: {res.witness}")
    basis = []
    causal = True
    for j in range(res.rank, n):
        v = res.Q.take_cols([j])
        check = L * v
        if not check.is_zero():
            raise CertificateError("kernel vector failed re-verification")
        w, ok = _normalize_kernel_vector(v)
        basis.append(w)
        causal = causal and ok
    return basis, causal


# -- plain field linear algebra (degree-0 coefficient matrices) ---------------


def field_rank(rows: list[list[Expr]], ctx: Context) -> int:
    m = [list(r) for r in rows]
    nr = len(m)
    nc = len(m[0]) if nr else 0
    rank_ = 0
    for c in range(nc):
        piv = None
        for r in range(rank_, nr):
            if is_nonzero_certain(m[r][c]):
                piv = r
                break
        if piv is None:
            continue
        m[rank_], m[piv] = m[piv], m[rank_]
        pe = m[rank_][c]
        for r in range(nr):
            if r != rank_ and not is_zero(m[r][c]):
                f = m[r][c] / pe
                m[r] = [m[r][k] - f * m[rank_][k] for k in range(nc)]
        rank_ += 1
        if rank_ == nr:
            break
    return rank_


def field_inverse(rows: list[list[Expr]], ctx: Context) -> list[list[Expr]]:
    n = len(rows)
    m = [list(r) + [ctx.one() if i == j else ctx.zero() for j in range(n)] for i, r in enumerate(rows)]
    for c in range(n):
        piv = None
        for r in range(c, n):
            if is_nonzero_certain(m[r][c]):
                piv = r
                break
        if piv is None:
            raise DivisionError("singular coefficient matrix")
        m[c], m[piv] = m[piv], m[c]
        pe = m[c][c]
        m[c] = [e / pe for e in m[c]]
        for r in range(n):
            if r != c and not is_zero(m[r][c]):
                f = m[r][c]
                m[r] = [m[r][k] - f * m[c][k] for k in range(2 * n)]
    return [row[n:] for row in m]


def field_kernel(rows: list[list[Expr]], ctx: Context) -> list[list[Expr]]:
    """Basis of the right kernel of a field matrix, as column vectors."""
    nr = len(rows)
    nc = len(rows[0]) if nr else 0
    m = [list(r) for r in rows]
    pivots = []
    rank_ = 0
    for c in range(nc):
        piv = None
        for r in range(rank_, nr):
            if is_nonzero_certain(m[r][c]):
                piv = r
                break
        if piv is None:
            continue
        m[rank_], m[piv] = m[piv], m[rank_]
        pe = m[rank_][c]
        m[rank_] = [e / pe for e in m[rank_]]
        for r in range(nr):
            if r != rank_ and not is_zero(m[r][c]):
                f = m[r][c]
                m[r] = [m[r][k] - f * m[rank_][k] for k in range(nc)]
        pivots.append(c)
        rank_ += 1
    free = [c for c in range(nc) if c not in pivots]
    basis = []
    for fc in free:
        vec = [ctx.zero()] * nc
        vec[fc] = ctx.one()
        for r, pc in enumerate(pivots):
            vec[pc] = -m[r][fc]
        basis.append(vec)
    return basis


def field_right_inverse(rows: list[list[Expr]], ctx: Context) -> list[list[Expr]]:
    """Right inverse of a full-row-rank field matrix (cols x rows)."""
    nr = len(rows)
    nc = len(rows[0]) if nr else 0
    # Gauss with column pivots: find an invertible nr x nr column subset.
    m = [list(r) for r in rows]
    chosen: list[int] = []
    work = [list(r) for r in m]
    rank_ = 0
    for c in range(nc):
        piv = None
        for r in range(rank_, nr):
            if is_nonzero_certain(work[r][c]):
                piv = r
                break
        if piv is None:
            continue
        work[rank_], work[piv] = work[piv], work[rank_]
        pe = work[rank_][c]
        for r in range(nr):
            if r != rank_ and not is_zero(work[r][c]):
                f = work[r][c] / pe
                work[r] = [work[r][k] - f * work[rank_][k] for k in range(nc)]
        chosen.append(c)
        rank_ += 1
        if rank_ == nr:
            break
    if rank_ < nr:
        raise DivisionError("matrix does not have full row rank")
    sub = [[rows[i][j] for j in chosen] for i in range(nr)]
    sub_inv = field_inverse(sub, ctx)
    out = [[ctx.zero()] * nr for _ in range(nc)]
    for k, c in enumerate(chosen):
        for j in range(nr):
            out[c][j] = sub_inv[k][j]
    return out
