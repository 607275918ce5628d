import math
import random

import pytest

from delayalg.errors import EvalError, ExprSyntaxError, UnknownSymbolError
from delayalg.exprs import (
    Context,
    DelayedVar,
    causality_scan,
    eval_num,
    is_zero,
    partial,
    shift,
    substitute,
    transplant,
    zero_check,
)
from delayalg.parsing import parse_expr


def test_parse_first_intro_equation(ctx2):
    e = parse_expr("x1*x2[-1] + x2*x2[-1] + e1", ctx2)
    assert str(e) == "x1*x2[-1] + x2*x2[-1] + e1"


def test_parse_zero(ctx2):
    assert parse_expr("0", ctx2) == 0


def test_parse_unbalanced_bracket_position(ctx2):
    with pytest.raises(ExprSyntaxError) as err:
        parse_expr("x1[-2", ctx2)
    assert err.value.column == 6


def test_parse_unknown_symbol(ctx2):
    with pytest.raises(UnknownSymbolError):
        parse_expr("x1 + nope", ctx2)


def test_parse_forward_shift_rejected_by_default(ctx2):
    with pytest.raises(ExprSyntaxError):
        parse_expr("x1[+1]", ctx2)
    debug = Context(["x1"], allow_forward=True)
    e = parse_expr("x1[+1]", debug)
    assert causality_scan(e) == (False, -1, -1)


def test_is_zero_algebraic_identity(ctx2):
    e = parse_expr("(x1+x2)*(x1+x2) - x1*x1 - 2*x1*x2 - x2*x2", ctx2)
    v = zero_check(e)
    assert v.zero and not v.probabilistic


def test_is_zero_distinct_atoms(ctx2):
    assert not is_zero(parse_expr("x1[-1] - x1", ctx2))


def test_is_zero_exp_identity_probabilistic(ctx2):
    e = ctx2.exp(ctx2.var(1)) * ctx2.exp(-ctx2.var(1)) - 1
    v = zero_check(e)
    assert v.zero and v.probabilistic


def test_partial_remark1(ctx2):
    e = parse_expr("x1[-1]*x2 + x2*x2", ctx2)
    assert partial(e, DelayedVar(2, 0)) == parse_expr("x1[-1] + 2*x2", ctx2)


def test_partial_unrelated_variable(ctx2):
    assert partial(parse_expr("x1", ctx2), DelayedVar(2, 0)) == 0


def test_partial_coefficient_structure(ctx2):
    e = parse_expr("x2*x1[-2]*x1", ctx2)
    assert partial(e, DelayedVar(1, 0)) == parse_expr("x2*x1[-2]", ctx2)


def test_shift_basic(ctx2):
    e = parse_expr("x1*x2[-1]", ctx2)
    assert shift(e, 1) == parse_expr("x1[-1]*x2[-2]", ctx2)


def test_shift_identity_and_inverse(ctx2):
    e = parse_expr("x1*x2[-1] + e1/x2", ctx2)
    assert shift(e, 0) == e
    assert shift(shift(e, 3), -3) == e


def test_shift_is_ring_homomorphism(ctx2):
    e1 = parse_expr("x1 + x2[-1]*x2", ctx2)
    e2 = parse_expr("x1[-2] - 3*x2", ctx2)
    assert shift(e1 * e2, 2) == shift(e1, 2) * shift(e2, 2)


def test_partial_shift_commute(ctx2):
    e = parse_expr("x1*x2[-1] + x2*x2[-2]", ctx2)
    v = DelayedVar(2, 1)
    lhs = partial(shift(e, 2), DelayedVar(2, 3))
    rhs = shift(partial(e, v), 2)
    assert lhs == rhs


def test_substitute_example_rewrite(ctx2):
    # rewriting the second intro equation through x1 = z1/z2(-1), x2 = z2
    zctx = Context(["z1", "z2"], {"e2": True})
    b = parse_expr("x1*x2[-1] + x1[-1]*x2*x2[-2] + e2", ctx2)
    rules = {
        1: parse_expr("z1/z2[-1]", zctx),
        2: parse_expr("z2", zctx),
    }
    out = transplant(b, rules, zctx)
    assert out == parse_expr("z1 + z1[-1]*z2 + e2", zctx)


def test_substitute_empty_and_identity(ctx2):
    e = parse_expr("x1*x2[-1] + e1", ctx2)
    assert substitute(e, {}) == e
    assert substitute(e, {1: ctx2.var(1)}) == e


def test_eval_intro_equation(ctx2):
    e = parse_expr("x1*x2[-1] + x2*x2[-1] + e1", ctx2)
    val = eval_num(
        e,
        {
            DelayedVar(1, 0): 1.0,
            DelayedVar(2, 0): 1.0,
            DelayedVar(2, 1): 1.0,
            "e1": -2.0,
        },
    )
    assert val == 0.0


def test_eval_constant(ctx2):
    assert eval_num(parse_expr("5", ctx2), {}) == 5.0


def test_eval_zero_guard(ctx2):
    with pytest.raises(EvalError):
        eval_num(parse_expr("1/x1", ctx2), {DelayedVar(1, 0): 1e-14})


def test_causality_scan_examples(ctx2):
    fwd = Context(["x1", "x2"], allow_forward=True)
    e = parse_expr("x1[+1]/x2[+1]", fwd)
    assert causality_scan(e) == (False, -1, -1)
    assert causality_scan(parse_expr("x1*x2[-3]", ctx2)) == (True, 0, 3)
    assert causality_scan(parse_expr("e1", ctx2)) == (True, 0, 0)


def test_is_zero_reflexive_random(ctx2):
    rng = random.Random(4)
    pool = ["x1", "x2", "x1[-1]", "x2[-2]", "e1"]
    for _ in range(20):
        text = "+".join(rng.choice(pool) for _ in range(3))
        e = parse_expr(text, ctx2) / parse_expr(rng.choice(pool[:4]), ctx2)
        assert is_zero(e - e)


def test_canonical_soundness_random_ops(ctx2):
    rng = random.Random(9)
    pool = ["x1", "x2", "x1[-1]", "x2[-1]", "2", "e1"]

    def rand_expr():
        a = parse_expr(rng.choice(pool), ctx2)
        b = parse_expr(rng.choice(pool), ctx2)
        return a + b * parse_expr(rng.choice(pool), ctx2)

    for _ in range(25):
        e1, e2 = rand_expr(), rand_expr()
        assign = {
            DelayedVar(i, j): rng.uniform(0.5, 1.5)
            for i in (1, 2)
            for j in (0, 1, 2)
        }
        assign["e1"] = rng.uniform(0.5, 1.5)
        for op in ("add", "sub", "mul", "div"):
            if op == "add":
                combo, f = e1 + e2, lambda a, b: a + b
            elif op == "sub":
                combo, f = e1 - e2, lambda a, b: a - b
            elif op == "mul":
                combo, f = e1 * e2, lambda a, b: a * b
            else:
                if is_zero(e2):
                    continue
                combo, f = e1 / e2, lambda a, b: a / b
            try:
                lhs = eval_num(combo, assign)
                rhs = f(eval_num(e1, assign), eval_num(e2, assign))
            except EvalError:
                continue
            assert abs(lhs - rhs) <= 1e-9 * (1 + abs(rhs))


def test_exp_of_ln_constant_simplifies():
    ctx = Context(["x1"], {"c": True})
    assert ctx.exp(ctx.ln(ctx.const("c"))) == ctx.const("c")
    assert ctx.ln(ctx.exp(ctx.var(1))) == ctx.var(1)
    e = ctx.exp(ctx.var(1, 2) + 2 * ctx.ln(ctx.const("c")))
    assert e == ctx.const("c") * ctx.const("c") * ctx.exp(ctx.var(1, 2))


def test_division_by_unflagged_constant_warns():
    ctx = Context(["x1"], {"k": False})
    _ = ctx.var(1) / ctx.const("k")
    assert any("not declared nonzero" in w for w in ctx.warnings)
