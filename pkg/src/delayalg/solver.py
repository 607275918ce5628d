"""Method-of-steps integration for retarded/neutral delayed ODEs.

The grid is uniform with 1/h an integer, so every unit delay lands on a
node and the integration restarts at each unit breakpoint.  Delayed state
values are read from per-step cubic Hermite interpolants; delayed
derivative values come from the stored derivative sequence (cubic Lagrange
between nodes), never from re-differentiated interpolants.  Derivative
samples are kept per unit interval with one-sided values at breakpoints,
which keeps the classical fourth-order one-step scheme at full order in
the presence of the derivative jumps the method of steps introduces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .ddae import DDAESystem, NeutralODE, ReductionResult
from .errors import CoverageError, EvalError, StepFailure
from .exprs import (
    Context,
    DelayedVar,
    Expr,
    SymbolicConstant,
    compile_fn,
    numeric_atoms,
    partial,
)

_EPS = 1e-9


class History:
    """Per-variable initial data on (-inf, t0]: values and derivatives."""

    def __init__(
        self,
        value_fns: Sequence[Callable[[float], float]],
        deriv_fns: Sequence[Callable[[float], float]],
        t0: float = 0.0,
        start: float = -math.inf,
    ):
        self.value_fns = list(value_fns)
        self.deriv_fns = list(deriv_fns)
        self.t0 = t0
        self.start = start
        self.n = len(self.value_fns)

    @classmethod
    def constants(cls, values: Sequence[float], t0: float = 0.0) -> "History":
        vals = [float(v) for v in values]
        return cls(
            [(lambda t, v=v: v) for v in vals],
            [(lambda t: 0.0) for _ in vals],
            t0=t0,
        )

    @classmethod
    def from_exprs(cls, exprs: Sequence[Expr], s_ctx: Context, t0: float = 0.0,
                   const_values: dict[str, float] | None = None) -> "History":
        const_values = const_values or {}
        value_fns = []
        deriv_fns = []
        s_atom = DelayedVar(1, 0)
        for e in exprs:
            de = partial(e, s_atom)
            value_fns.append(_compile_scalar(e, s_ctx, const_values))
            deriv_fns.append(_compile_scalar(de, s_ctx, const_values))
        return cls(value_fns, deriv_fns, t0=t0)

    def value(self, i: int, t: float) -> float:
        if t < self.start - _EPS:
            raise CoverageError(f"history does not cover t = {t}")
        return self.value_fns[i](t)

    def deriv(self, i: int, t: float) -> float:
        if t < self.start - _EPS:
            raise CoverageError(f"history does not cover t = {t}")
        return self.deriv_fns[i](t)


def _compile_scalar(e: Expr, s_ctx: Context, const_values: dict[str, float]):
    atoms = numeric_atoms(e)
    fn = compile_fn(e, atoms)
    slots = []
    for a in atoms:
        if isinstance(a, DelayedVar):
            if a.base != 1 or a.shift != 0:
                raise EvalError("history expressions may only use the time variable")
            slots.append(None)
        else:
            if a.name not in const_values:
                raise EvalError(f"history constant '{a.name}' has no numeric value")
            slots.append(float(const_values[a.name]))

    def call(t: float) -> float:
        args = [t if s is None else s for s in slots]
        return float(fn(*args))

    return call


class _CompiledExpr:
    """Positional compilation of an Expr over delayed atoms and constants."""

    def __init__(self, e: Expr, const_values: dict[str, float]):
        self.atoms = numeric_atoms(e)
        self.fn = compile_fn(e, self.atoms)
        self.slots: list[tuple] = []
        for a in self.atoms:
            if isinstance(a, DelayedVar):
                self.slots.append(("var", a.base - 1, a.shift))
            else:
                if a.name not in const_values:
                    raise EvalError(f"constant '{a.name}' has no numeric value")
                self.slots.append(("const", float(const_values[a.name])))
        self.is_static_zero = not self.slots and float(self.fn()) == 0.0

    def delays(self) -> set[int]:
        return {s[2] for s in self.slots if s[0] == "var"}

    def __call__(self, t: float, cur: Sequence[float], value_at) -> float:
        args = []
        for s in self.slots:
            if s[0] == "const":
                args.append(s[1])
            else:
                _, idx, shift = s
                args.append(cur[idx] if shift == 0 else value_at(idx, t - shift))
        try:
            out = self.fn(*args)
        except (OverflowError, ZeroDivisionError, ValueError) as err:
            raise StepFailure(f"right-hand side failed at t = {t}: {err}")
        if not math.isfinite(out):
            raise StepFailure(f"non-finite right-hand side at t = {t}")
        return out


@dataclass
class Trajectory:
    """Uniform-grid solution with per-unit-interval derivative samples."""

    n: int
    t0: float
    h: float
    steps_per_unit: int
    values: list[list[float]]  # [var][node]
    derivs: list[list[list[float]]]  # [interval][var][node-in-interval]
    history: History
    warnings: list[str] = field(default_factory=list)

    @property
    def node_count(self) -> int:
        return len(self.values[0])

    @property
    def t_end(self) -> float:
        return self.t0 + (self.node_count - 1) * self.h

    def times(self) -> list[float]:
        return [self.t0 + m * self.h for m in range(self.node_count)]

    def _node_index(self, t: float) -> Optional[int]:
        raw = (t - self.t0) / self.h
        m = round(raw)
        if abs(raw - m) < 1e-7 and 0 <= m < self.node_count:
            return int(m)
        return None

    def value_at(self, i: int, t: float) -> float:
        m = self._node_index(t)
        if m is not None:
            return self.values[i][m]
        if t < self.t0:
            return self.history.value(i, t)
        if t > self.t_end + _EPS:
            raise CoverageError(f"trajectory does not reach t = {t}")
        m0 = int(math.floor((t - self.t0) / self.h))
        m0 = min(m0, self.node_count - 2)
        ta = self.t0 + m0 * self.h
        s = (t - ta) / self.h
        y0, y1 = self.values[i][m0], self.values[i][m0 + 1]
        d0 = self._deriv_node_in_step(i, m0, left_node=True)
        d1 = self._deriv_node_in_step(i, m0, left_node=False)
        h = self.h
        h00 = (1 + 2 * s) * (1 - s) ** 2
        h10 = s * (1 - s) ** 2
        h01 = s * s * (3 - 2 * s)
        h11 = s * s * (s - 1)
        return h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1

    def _interval_of_node(self, m: int) -> tuple[int, int]:
        k, j = divmod(m, self.steps_per_unit)
        if k >= len(self.derivs):
            k = len(self.derivs) - 1
            j = m - k * self.steps_per_unit
        return k, j

    def _deriv_node_in_step(self, i: int, m0: int, left_node: bool) -> float:
        m = m0 if left_node else m0 + 1
        k, j = divmod(m0, self.steps_per_unit)
        return self.derivs[k][i][j + (0 if left_node else 1)]

    def deriv_at(self, i: int, t: float, side: str = "+") -> float:
        if t < self.t0 - _EPS or (abs(t - self.t0) < _EPS and side == "-"):
            return self.history.deriv(i, t)
        if t > self.t_end + _EPS:
            raise CoverageError(f"trajectory does not reach t = {t}")
        m = self._node_index(t)
        N = self.steps_per_unit
        if m is not None:
            k, j = divmod(m, N)
            if j == 0 and side == "-" and k > 0:
                return self.derivs[k - 1][i][N]
            if k >= len(self.derivs):
                k, j = len(self.derivs) - 1, m - (len(self.derivs) - 1) * N
            return self.derivs[k][i][j]
        # interior: cubic Lagrange through the derivative samples of the
        # containing unit interval
        k = int(math.floor((t - self.t0) / 1.0))
        k = min(max(k, 0), len(self.derivs) - 1)
        u0 = self.t0 + k * 1.0
        samples = self.derivs[k][i]
        pos = (t - u0) / self.h
        j0 = int(math.floor(pos)) - 1
        j0 = max(0, min(j0, len(samples) - 4))
        ts = [j0 + r for r in range(4)]
        out = 0.0
        for a in range(4):
            w = 1.0
            for b in range(4):
                if a != b:
                    w *= (pos - ts[b]) / (ts[a] - ts[b])
            out += w * samples[ts[a]]
        return out

    def to_rows(self) -> list[list[float]]:
        rows = []
        N = self.steps_per_unit
        for m, t in enumerate(self.times()):
            k, j = divmod(m, N)
            if k >= len(self.derivs):
                k, j = len(self.derivs) - 1, N
            row = [t] + [self.values[i][m] for i in range(self.n)]
            row += [self.derivs[k][i][j] for i in range(self.n)]
            rows.append(row)
        return rows


def solve_steps(
    ode: NeutralODE,
    hist: History,
    T: float,
    h: float,
    t0: float = 0.0,
    const_values: dict[str, float] | None = None,
    free_inputs: Sequence[Callable[[float], float]] | None = None,
    jump_tol: float = 1e-6,
) -> Trajectory:
    """Integrate interval by interval with the classical one-step scheme."""
    const_values = const_values or {}
    n = ode.n
    N = round(1.0 / h)
    if abs(N * h - 1.0) > 1e-12 or N < 4:
        raise StepFailure("1/h must be an integer (and at least 4)")
    if abs(round(T - t0) - (T - t0)) > 1e-12 or T <= t0:
        raise StepFailure("the horizon must span a whole number of unit intervals")
    units = round(T - t0)
    f_c = [_CompiledExpr(e, const_values) for e in ode.f]
    g_c = {
        d: [[_CompiledExpr(e, const_values) for e in row] for row in m]
        for d, m in ode.gmat.items()
    }
    free_c = [[_CompiledExpr(e, const_values) for e in row] for row in ode.free_cols]
    n_free = ode.n_free
    if n_free and free_inputs is None:
        free_inputs = [(lambda t: 0.0) for _ in range(n_free)]
    if any(d < 1 for d in ode.gmat):
        raise StepFailure("derivative delays must be at least one unit")

    values: list[list[float]] = [[] for _ in range(n)]
    derivs: list[list[list[float]]] = []
    traj = Trajectory(
        n=n, t0=t0, h=h, steps_per_unit=N, values=values, derivs=derivs, history=hist
    )

    def rhs(t: float, cur: list[float], side: str) -> list[float]:
        out = []
        for i in range(n):
            acc = f_c[i](t, cur, traj.value_at)
            for d, rowset in g_c.items():
                for l in range(n):
                    coeff_expr = rowset[i][l]
                    if coeff_expr.is_static_zero:
                        continue
                    coeff = coeff_expr(t, cur, traj.value_at)
                    if coeff != 0.0:
                        acc += coeff * traj.deriv_at(l, t - d, side=side)
            if n_free:
                for r in range(n_free):
                    coeff = free_c[i][r](t, cur, traj.value_at)
                    acc += coeff * free_inputs[r](t)
            if not math.isfinite(acc):
                raise StepFailure(f"non-finite derivative at t = {t}")
            out.append(acc)
        return out

    y = [hist.value(i, t0) for i in range(n)]
    for i in range(n):
        values[i].append(y[i])
    d_plus = rhs(t0, y, side="+")
    for i in range(n):
        if abs(d_plus[i] - hist.deriv(i, t0)) > jump_tol * (1 + abs(d_plus[i])):
            traj.warnings.append(
                f"history derivative of variable {i + 1} jumps at t0 "
                f"({hist.deriv(i, t0):.6g} -> {d_plus[i]:.6g}); "
                "the scheme restarts at unit breakpoints"
            )
            break

    for unit in range(units):
        u = t0 + unit
        dseq = [[0.0] * (N + 1) for _ in range(n)]
        derivs.append(dseq)
        d0 = rhs(u, y, side="+")
        for i in range(n):
            dseq[i][0] = d0[i]
        for m in range(N):
            t = u + m * h
            k1 = [dseq[i][m] for i in range(n)]
            y2 = [y[i] + 0.5 * h * k1[i] for i in range(n)]
            k2 = rhs(t + 0.5 * h, y2, side="+")
            y3 = [y[i] + 0.5 * h * k2[i] for i in range(n)]
            k3 = rhs(t + 0.5 * h, y3, side="+")
            y4 = [y[i] + h * k3[i] for i in range(n)]
            end_side = "-" if m == N - 1 else "+"
            k4 = rhs(t + h, y4, side=end_side)
            y = [
                y[i] + h / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i])
                for i in range(n)
            ]
            for i in range(n):
                values[i].append(y[i])
            dnew = rhs(t + h, y, side=end_side)
            for i in range(n):
                dseq[i][m + 1] = dnew[i]
    return traj


@dataclass
class MappedTrajectory:
    """Original-coordinate trajectory produced by mapping back through the
    inverse coordinate change, with chain-rule derivative samples."""

    n: int
    t0: float
    h: float
    steps_per_unit: int
    values: list[list[float]]
    derivs: list[list[list[float]]]
    history: Optional[History]

    def times(self) -> list[float]:
        return [self.t0 + m * self.h for m in range(len(self.values[0]))]

    def value_at(self, i: int, t: float) -> float:
        m = round((t - self.t0) / self.h)
        if abs((t - self.t0) / self.h - m) > 1e-7:
            raise CoverageError("mapped trajectories are sampled on the grid only")
        if m < 0:
            if self.history is None:
                raise CoverageError(f"no original history for t = {t}")
            return self.history.value(i, t)
        return self.values[i][int(m)]

    def deriv_at(self, i: int, t: float, side: str = "+") -> float:
        m = round((t - self.t0) / self.h)
        if abs((t - self.t0) / self.h - m) > 1e-7:
            raise CoverageError("mapped trajectories are sampled on the grid only")
        if m < 0 or (m == 0 and side == "-"):
            if self.history is None:
                raise CoverageError(f"no original history for t = {t}")
            return self.history.deriv(i, t)
        m = int(m)
        N = self.steps_per_unit
        k, j = divmod(m, N)
        if j == 0 and side == "-" and k > 0:
            return self.derivs[k - 1][i][N]
        if k >= len(self.derivs):
            k, j = len(self.derivs) - 1, m - (len(self.derivs) - 1) * N
        return self.derivs[k][i][j]

    def to_rows(self) -> list[list[float]]:
        rows = []
        N = self.steps_per_unit
        for m, t in enumerate(self.times()):
            k, j = divmod(m, N)
            if k >= len(self.derivs):
                k, j = len(self.derivs) - 1, N
            row = [t] + [self.values[i][m] for i in range(self.n)]
            row += [self.derivs[k][i][j] for i in range(self.n)]
            rows.append(row)
        return rows


def map_back(
    traj: Trajectory,
    inverse_exprs: Sequence[Expr],
    const_values: dict[str, float] | None = None,
    original_history: History | None = None,
    t_from: float = 0.0,
) -> MappedTrajectory:
    """Evaluate the inverse coordinate map (and its time derivative by the
    chain rule) along a reduced trajectory."""
    const_values = const_values or {}
    n_out = len(inverse_exprs)
    comp = [_CompiledExpr(e, const_values) for e in inverse_exprs]
    partials = []
    for e in inverse_exprs:
        terms = []
        for a in sorted(e.var_atoms(), key=lambda a: (a.base, a.shift)):
            terms.append((a, _CompiledExpr(partial(e, a), const_values)))
        partials.append(terms)
    needed = max(
        [0] + [a.shift for e in inverse_exprs for a in e.var_atoms()]
    )
    if traj.t0 - needed < traj.history.start - _EPS:
        raise CoverageError(
            f"inverse map needs {needed} units of past; history starts at "
            f"{traj.history.start}"
        )
    N = traj.steps_per_unit
    h = traj.h
    start_m = round((t_from - traj.t0) / h)
    if abs(start_m * h + traj.t0 - t_from) > 1e-9:
        raise CoverageError("map-back start must lie on the grid")
    times = traj.times()[start_m:]
    values = [[] for _ in range(n_out)]
    units_m = (len(times) - 1) // N
    derivs = [[[0.0] * (N + 1) for _ in range(n_out)] for _ in range(units_m)]

    def cur_at(t):
        return [traj.value_at(i, t) for i in range(traj.n)]

    for idx, t in enumerate(times):
        cur = cur_at(t)
        k, j = divmod(idx, N)
        for i in range(n_out):
            values[i].append(comp[i](t, cur, traj.value_at))
        # derivative samples: right-side at interval starts, left-side at ends
        for i in range(n_out):
            if j == 0:
                if k < units_m:
                    derivs[k][i][0] = _chain_deriv(partials[i], t, cur, traj, side="+")
                if k > 0:
                    derivs[k - 1][i][N] = _chain_deriv(partials[i], t, cur, traj, side="-")
            else:
                derivs[k][i][j] = _chain_deriv(partials[i], t, cur, traj, side="+")
    return MappedTrajectory(
        n=n_out,
        t0=t_from,
        h=h,
        steps_per_unit=N,
        values=values,
        derivs=derivs,
        history=original_history,
    )


def _chain_deriv(terms, t, cur, traj: Trajectory, side: str) -> float:
    out = 0.0
    for atom, coeff in terms:
        c = coeff(t, cur, traj.value_at)
        if c != 0.0:
            out += c * traj.deriv_at(atom.base - 1, t - atom.shift, side=side)
    return out


def residual(
    sys: DDAESystem,
    traj,
    const_values: dict[str, float] | None = None,
    t_start: float = 0.0,
    t_end: float | None = None,
) -> float:
    """Max-norm defect of E(x,d) x' - F(x) along a trajectory's grid."""
    const_values = const_values or {}
    p, n = sys.p, sys.n
    f_c = [_CompiledExpr(e, const_values) for e in sys.F]
    e_c: list[list[list[tuple[int, _CompiledExpr]]]] = []
    for i in range(p):
        row = []
        for j in range(n):
            entry = [
                (d, _CompiledExpr(c, const_values)) for d, c in sys.E[i, j].coeffs.items()
            ]
            row.append(entry)
        e_c.append(row)
    times = [t for t in traj.times() if t_start - _EPS <= t]
    if t_end is not None:
        times = [t for t in times if t <= t_end + _EPS]
    worst = 0.0
    for t in times:
        cur = [traj.value_at(i, t) for i in range(n)]
        side = "-" if t == times[-1] else "+"
        for i in range(p):
            lhs = 0.0
            for j in range(n):
                for d, coeff in e_c[i][j]:
                    c = coeff(t, cur, traj.value_at)
                    if c != 0.0:
                        lhs += c * traj.deriv_at(j, t - d, side=side)
            defect = abs(lhs - f_c[i](t, cur, traj.value_at))
            worst = max(worst, defect)
    return worst
