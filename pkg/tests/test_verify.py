import numpy as np
import pytest

from conftest import tabulate
from gdecomp.core import GeneratorSpec, ScalarField, SpaceGrid, TimeGrid
from gdecomp.forms import parse_form
from gdecomp.gbsde import solve_gbsde
from gdecomp.pde import auto_time_grid
from gdecomp.scenario import UpperExpectationEstimator, VolatilityControl
from gdecomp.verify import (
    PdeExpectation,
    axiom_suite,
    check_equivalence,
    check_supermartingale,
    dyadic_pairs,
    kink_columns,
    safe_window,
)


def test_dyadic_pairs():
    p = dyadic_pairs(1.0)
    assert len(p) == 36 and (0.0, 1.0) in p and all(s < t for s, t in p)


def test_safe_window(gc, small_space):
    w = safe_window(small_space, gc, 0.25)
    assert not w[0] and not w[-1]
    assert np.all(np.abs(small_space.x[w]) <= 3.0 + 1e-12)


@pytest.fixture(scope="module")
def field(small_space, small_time):
    def make(fn):
        return tabulate(fn, small_time, small_space)
    return make


def test_concave_passes_with_low_vol_margins(gc, coeffs, zero_gen, field):
    rep = check_supermartingale(field(lambda t, x: -(x**2) + 0 * t), zero_gen, coeffs, gc)
    assert rep.verdict == "pass" and rep.worst_violation == 0.0
    for m in rep.per_pair_margins:
        assert m.center_margin == pytest.approx(0.25 * (m.t1 - m.s), abs=1e-9)
    assert "no violation found" in rep.note


def test_convex_fails_with_high_vol_violation(gc, coeffs, zero_gen, field):
    rep = check_supermartingale(field(lambda t, x: x**2 + 0 * t), zero_gen, coeffs, gc)
    assert rep.verdict == "fail"
    for m in rep.per_pair_margins:
        assert m.violation == pytest.approx(m.t1 - m.s, abs=1e-9)


def test_g_solution_passes_with_zero_margin(gc, coeffs, small_space, small_time):
    gen = GeneratorSpec("abs_z(0.3)")
    sol = solve_gbsde(coeffs, gen, gc, ScalarField.from_function(np.cos, small_space), small_time, small_space)
    rep = check_supermartingale(sol.u, gen, coeffs, gc)
    assert rep.verdict == "pass"
    assert max(abs(m.min_margin) for m in rep.per_pair_margins) < 1e-12


def test_pairs_validated(gc, coeffs, zero_gen, field):
    u = field(lambda t, x: -(x**2) + 0 * t)
    with pytest.raises(ValueError):
        check_supermartingale(u, zero_gen, coeffs, gc, pairs=[])
    with pytest.raises(ValueError):
        check_supermartingale(u, zero_gen, coeffs, gc, pairs=[(0.5, 0.25)])
    with pytest.raises(ValueError):
        check_supermartingale(u, zero_gen, coeffs, gc, pairs=[(0.0, 0.3)])


def test_domain_too_small(gc, coeffs, zero_gen):
    s = SpaceGrid(-1.0, 1.0, 21)
    t = auto_time_grid(1.0, gc, coeffs, s, multiple=8)
    with pytest.raises(ValueError, match="domain too small"):
        check_supermartingale(tabulate(lambda tt, x: -(x**2) + 0 * tt, t, s), zero_gen, coeffs, gc, [(0.0, 1.0)])


@pytest.mark.parametrize(
    "fn,expected",
    [
        (lambda t, x: -(x**2) + 0 * t, "pass"),
        (lambda t, x: x**2 + 0 * t, "fail"),
        (lambda t, x: x**2 + (1 - t), "pass"),
        (lambda t, x: -(x**2) - 0.125 * (1 - t), "pass"),
        (lambda t, x: -(x**2) - 0.25 * (1 - t), "pass"),
        (lambda t, x: -(x**2) - 0.5 * (1 - t), "fail"),
    ],
)
def test_equivalence_on_smooth_candidates(gc, coeffs, zero_gen, field, fn, expected):
    rep = check_equivalence(field(fn), zero_gen, coeffs, gc)
    assert rep.status == "agree" and rep.verdict == expected and not rep.kink


def test_kink_is_flagged(gc, coeffs, zero_gen, field):
    rep = check_equivalence(field(lambda t, x: np.abs(x) + 0 * t), zero_gen, coeffs, gc)
    assert rep.kink and rep.kink_x and min(abs(x) for x in rep.kink_x) < 1e-9
    assert rep.verdict == "fail"
    assert not kink_columns(field(lambda t, x: np.cos(x) + t)).any()


def test_disagreement_band(gc, coeffs, zero_gen, field):
    # residual barely positive everywhere; the re-solve violation stays under tol
    rep = check_equivalence(field(lambda t, x: -(x**2) - 0.2500001 * (1 - t)), zero_gen, coeffs, gc, residual_tol=1e-9)
    assert rep.status == "indeterminate"
    assert rep.to_dict()["verdict"] == "indeterminate"


PAYOFFS = [parse_form(s, "payoff") for s in ("poly(0,0,1)", "poly(0,0,-1)", "abs(1)", "pos(0)", "neg(0)", "poly(0,0,1,0,0.1)")]


def test_axioms_pde_side(gc, ref_space):
    rep = axiom_suite(PdeExpectation(gc, ref_space), PAYOFFS, abs_tol=1e-6)
    assert rep.passed, rep.violations
    kinds = {c.axiom for c in rep.checks}
    assert kinds == {"constant", "monotonicity", "translation", "homogeneity", "subadditivity"}


def test_axioms_mc_side(gc, coeffs):
    ctrls = [VolatilityControl.constant(c, gc) for c in (0.5, 0.75, 1.0)]
    est = UpperExpectationEstimator(ctrls, coeffs, 0.0, TimeGrid(1.0, 32), 5000, 3)
    rep = axiom_suite(est, PAYOFFS)
    assert rep.passed
    assert rep.to_dict()["n_checks"] == len(rep.checks)


def test_axiom_suite_catches_a_broken_estimator(gc, ref_space):
    good = PdeExpectation(gc, ref_space)

    class Superadditive:
        def __call__(self, phi):
            e = good(phi)
            return type(e)(e.value**2 if e.value > 0 else e.value, 0.0, "bad", 0, "lower")

    rep = axiom_suite(Superadditive(), PAYOFFS[:3], abs_tol=1e-6)
    assert not rep.passed
