import pytest

from delayalg.errors import IntegrationFailure
from delayalg.exprs import Context, DelayedVar, is_zero, partial
from delayalg.forms import (
    OneForm,
    PfaffianProblem,
    antiderivative,
    d_exactness,
    differential,
    integrate_pfaffian,
)
from delayalg.parsing import parse_expr, parse_skew
from delayalg.skew import SkewMatrix, SkewPoly


def test_differential_of_second_intro_equation(ctx3):
    b = parse_expr("x1*x2[-1] + x1[-1]*x2*x2[-2] + e2", ctx3)
    row = differential(b, (1, 2))
    assert row.entry(1) == parse_skew("x2[-1] + (x2*x2[-2])*d", ctx3)
    assert row.entry(2) == parse_skew(
        "x1[-1]*x2[-2] + x1*d + (x1[-1]*x2)*d^2", ctx3
    )


def test_differential_of_constant_is_zero_row(ctx3):
    row = differential(parse_expr("e1", ctx3), (1, 2, 3))
    assert row.row.is_zero()


def test_differential_triangular_example(ctx3):
    lam = parse_expr("x1[-1] + x2*x3[-2]", ctx3)
    row = differential(lam, (1, 2, 3))
    assert row.entry(1) == parse_skew("d", ctx3)
    assert row.entry(2) == parse_skew("x3[-2]", ctx3)
    assert row.entry(3) == parse_skew("x2*d^2", ctx3)


def test_differential_linearity(ctx3):
    a = parse_expr("x1*x2[-1]", ctx3)
    b = parse_expr("x3[-2]/x2", ctx3)
    da = differential(a, (1, 2, 3))
    db = differential(b, (1, 2, 3))
    dsum = differential(a + b, (1, 2, 3))
    assert (da + db).row == dsum.row


def test_exactness_of_a_differential(ctx3):
    assert d_exactness(differential(parse_expr("x1*x2[-1]", ctx3), (1, 2)))


def test_exactness_symmetric_pair(ctx3):
    row = SkewMatrix(
        ctx3,
        [[
            SkewPoly(ctx3, {1: parse_expr("x2[-2]", ctx3)}),
            SkewPoly(ctx3, {2: parse_expr("x1[-1]", ctx3)}),
        ]],
    )
    assert d_exactness(OneForm(row, (1, 2)))


def test_exactness_fails_on_asymmetric_pair(ctx3):
    row = SkewMatrix(
        ctx3,
        [[
            SkewPoly(ctx3, {1: ctx3.one()}),
            SkewPoly(ctx3, {2: parse_expr("x1[-1]/x2[-2]", ctx3)}),
        ]],
    )
    assert not d_exactness(OneForm(row, (1, 2)))


def test_pfaffian_product_potential(ctx3):
    p = PfaffianProblem(
        ctx3.one(),
        parse_expr("x1[-1]/x2[-2]", ctx3),
        DelayedVar(1, 1),
        DelayedVar(2, 2),
    )
    lam = integrate_pfaffian(p)
    assert lam == parse_expr("x1[-1]*x2[-2]", ctx3)


def test_pfaffian_second_product(ctx3):
    p = PfaffianProblem(
        ctx3.one(),
        parse_expr("x2[-1]/x3[-1]", ctx3),
        DelayedVar(2, 1),
        DelayedVar(3, 1),
    )
    assert integrate_pfaffian(p) == parse_expr("x2[-1]*x3[-1]", ctx3)


def test_pfaffian_zero_b_gives_coordinate(ctx3):
    p = PfaffianProblem(ctx3.one(), ctx3.zero(), DelayedVar(1, 1), DelayedVar(2, 2))
    assert integrate_pfaffian(p) == parse_expr("x1[-1]", ctx3)


def test_pfaffian_roundtrip_property(ctx3):
    cases = [
        ("x1[-1]/x2[-2]", DelayedVar(1, 1), DelayedVar(2, 2)),
        ("x2[-1]/x3[-1]", DelayedVar(2, 1), DelayedVar(3, 1)),
        ("1/x3[-1]", DelayedVar(1, 1), DelayedVar(2, 1)),
        ("x3[-1]*x1[-1]", DelayedVar(1, 1), DelayedVar(2, 1)),
    ]
    for text, v1, v2 in cases:
        b = parse_expr(text, ctx3)
        lam = integrate_pfaffian(PfaffianProblem(ctx3.one(), b, v1, v2))
        cross = ctx3.one() * partial(lam, v2) - b * partial(lam, v1)
        assert is_zero(cross)


def test_pfaffian_failure_lists_factor_families(ctx3):
    bad = PfaffianProblem(
        ctx3.one(),
        parse_expr("x1[-1]*x1[-1]/(x2[-2] + x1[-1]*x3[-1])", ctx3),
        DelayedVar(1, 1),
        DelayedVar(2, 2),
    )
    with pytest.raises(IntegrationFailure) as err:
        integrate_pfaffian(bad)
    families = {a.family for a in err.value.attempts}
    assert len(families) >= 4
    assert {"exact", "mu(v2)", "mu(v1)", "monomial-box"} <= families


def test_antiderivative_table(ctx3):
    v = DelayedVar(1, 0)
    assert antiderivative(parse_expr("x1*x1", ctx3), v) == parse_expr(
        "x1*x1*x1/3", ctx3
    )
    assert antiderivative(parse_expr("1/x1", ctx3), v) == ctx3.ln(ctx3.var(1))
    out = antiderivative(parse_expr("x2/(2*x1 + x3)", ctx3), v)
    assert is_zero(partial(out, v) - parse_expr("x2/(2*x1 + x3)", ctx3))
