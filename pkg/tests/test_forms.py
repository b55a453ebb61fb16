import numpy as np
import pytest
from hypothesis import given, strategies as st

from gdecomp.forms import CoefFunction, FieldForm, GeneratorForm, Payoff, parse_call, parse_form


def test_parse_call_basic():
    assert parse_call("poly(0, 0, 1)") == ("poly", (0.0, 0.0, 1.0))
    assert parse_call("zero") == ("zero", ())
    assert parse_call(" abs_z( 0.3 ) ") == ("abs_z", (0.3,))


@pytest.mark.parametrize("bad", ["poly(a)", "1poly(1)", "poly(1,", "poly(nan)", "poly(inf)"])
def test_parse_call_rejects(bad):
    with pytest.raises(ValueError):
        parse_call(bad)


def test_payoffs_evaluate():
    x = np.array([-2.0, -0.5, 0.0, 1.5])
    assert np.allclose(parse_form("poly(1,0,-2)", "payoff")(x), 1 - 2 * x**2)
    assert np.allclose(parse_form("abs(2)", "payoff")(x), 2 * np.abs(x))
    assert np.allclose(parse_form("pos(0.5)", "payoff")(x), np.maximum(x - 0.5, 0))
    assert np.allclose(parse_form("neg(0)", "payoff")(x), np.maximum(-x, 0))
    assert np.allclose(parse_form("constant(3)", "payoff")(x), 3.0)
    assert np.allclose(parse_form("table(-1,0,1,2)", "payoff")(x), np.interp(x, [-1, 1], [0, 2]))


def test_unknown_names_rejected():
    for kind in ("payoff", "coefficient", "generator", "field"):
        with pytest.raises(ValueError):
            parse_form("nosuch(1)", kind)
    with pytest.raises(ValueError):
        parse_form("poly(1)", "nokind")


def test_table_knots_must_increase():
    with pytest.raises(ValueError):
        Payoff("table", (1, 0, 0, 1))


def test_generator_lipschitz_and_values():
    g = GeneratorForm("affine", (-0.2, 0.5, 1.0))
    assert g.lipschitz == 0.5
    assert float(g(0, 0, 2.0, 1.0)) == pytest.approx(-0.4 + 0.5 + 1.0)
    assert GeneratorForm("abs_z", (0.3,)).lipschitz == 0.3
    assert GeneratorForm("zero").is_zero
    tab = GeneratorForm("table", (-1, -1, 1, 3))
    assert tab.lipschitz == pytest.approx(2.0)


def test_coefficient_linear():
    c = CoefFunction("linear", (1.0, -0.5))
    assert np.allclose(c(0.0, np.array([0.0, 2.0])), [1.0, 0.0])
    assert c.lipschitz == 0.5
    assert CoefFunction("constant", (0.0,)).is_zero


def test_field_forms():
    q = FieldForm("quadratic", (1.0, 2.0, 0.5))
    assert float(q(0.25, 1.0, 1.0)) == pytest.approx(1.0 + 2 * 0.75 + 0.5)
    assert not FieldForm("abs").smooth
    assert q.smooth


@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=5))
def test_describe_round_trips(params):
    p = Payoff("poly", params)
    again = parse_form(p.describe(), "payoff")
    assert again == p and hash(again) == hash(p)
    x = np.linspace(-2, 2, 7)
    assert np.array_equal(again(x), p(x))
