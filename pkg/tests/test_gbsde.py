import numpy as np
import pytest

from conftest import inner, tabulate
from gdecomp.core import CoefficientSpec, GCoefficients, GeneratorSpec, ScalarField, TimeGrid
from gdecomp.gbsde import comparison_check, pathwise_K, running_max_rise, solve_gbsde
from gdecomp.pde import PdeProblem, auto_time_grid
from gdecomp.scenario import VolatilityControl, feedback_control_from_field, sample_path, sample_paths


@pytest.fixture(scope="module")
def sol_x2(gc, coeffs, zero_gen, ref_space, ref_time):
    return solve_gbsde(coeffs, zero_gen, gc, ScalarField.from_function(lambda x: x**2, ref_space), ref_time, ref_space)


def test_solution_matches_closed_form(sol_x2, ref_space):
    m = inner(ref_space)
    t = sol_x2.u.time.t[:, None]
    assert np.max(np.abs(sol_x2.u.values - (ref_space.x**2 + (1 - t)))[:, m]) < 1e-3
    assert np.max(np.abs(sol_x2.z.values - 2 * ref_space.x)[:, m]) < 2e-2
    assert sol_x2.unreliable_columns == (0, 1, -2, -1)


def test_constant_terminal(gc, coeffs, zero_gen, small_space, small_time):
    s = solve_gbsde(coeffs, zero_gen, gc, ScalarField(small_space, np.full(small_space.n_points, 2.5)), small_time, small_space)
    assert np.all(s.u.values == 2.5) and np.all(s.z.values == 0.0)


def test_K_under_high_volatility_is_small(sol_x2, gc, coeffs, zero_gen, ref_time):
    batch = sample_paths(VolatilityControl.constant(1.0, gc), coeffs, 0.0, ref_time, 1, 200)
    K = pathwise_K(sol_x2, zero_gen, batch)
    assert np.all(K.values[:, 0] == 0.0)
    assert abs(K.terminal.mean()) < 0.02
    assert K.max_rise < 10 * np.sqrt(ref_time.dt)


def test_K_under_low_volatility(sol_x2, gc, coeffs, zero_gen, ref_time):
    batch = sample_paths(VolatilityControl.constant(0.5, gc), coeffs, 0.0, ref_time, 2, 200)
    K = pathwise_K(sol_x2, zero_gen, batch)
    assert K.terminal.mean() == pytest.approx(0.25 - 1.0, abs=0.02)
    assert K.max_rise < 0.05


def test_K_single_path_and_grid_mismatch(sol_x2, gc, coeffs, zero_gen, ref_time):
    p = sample_path(VolatilityControl.constant(1.0, gc), coeffs, 0.0, ref_time, (0, 0))
    assert pathwise_K(sol_x2, zero_gen, p).values.shape == (1, ref_time.n_steps + 1)
    q = sample_path(VolatilityControl.constant(1.0, gc), coeffs, 0.0, TimeGrid(1.0, 10), (0, 0))
    with pytest.raises(ValueError):
        pathwise_K(sol_x2, zero_gen, q)


def test_running_max_rise():
    k = np.array([[0.0, -1.0, 0.5, -2.0, -1.8]])
    assert running_max_rise(k)[0] == pytest.approx(1.5)


def _positive_rise(gc, coeffs, nx, seed):
    from gdecomp.core import SpaceGrid

    space = SpaceGrid(-6.0, 6.0, nx)
    time = auto_time_grid(1.0, gc, coeffs, space)
    gen = GeneratorSpec("abs_z(0.2)")
    sol = solve_gbsde(coeffs, gen, gc, ScalarField.from_function(lambda x: np.cos(x), space), time, space)
    rng = np.random.default_rng(seed)
    ctrl = VolatilityControl.piecewise(rng.uniform(0.5, 1.0, time.n_steps), gc)
    batch = sample_paths(ctrl, coeffs, 0.0, time, seed, 200)
    return pathwise_K(sol, gen, batch).max_rise / np.sqrt(time.dt)


def test_positive_K_increments_scale_with_sqrt_dt(gc, coeffs):
    c1 = _positive_rise(gc, coeffs, 61, 3)
    c2 = _positive_rise(gc, coeffs, 121, 3)
    # C = max rise / sqrt(dt) stays bounded under refinement
    assert c2 < 2.0 * c1 + 1.0


def test_feedback_control_nearly_optimal(gc, coeffs, zero_gen):
    from gdecomp.core import SpaceGrid

    phi = lambda x: np.cos(x)  # noqa: E731
    means = []
    for nx in (61, 121):
        space = SpaceGrid(-6.0, 6.0, nx)
        time = auto_time_grid(1.0, gc, coeffs, space)
        sol = solve_gbsde(coeffs, zero_gen, gc, ScalarField.from_function(phi, space), time, space)
        ctrl = feedback_control_from_field(sol.u, gc)
        K = pathwise_K(sol, zero_gen, sample_paths(ctrl, coeffs, 0.0, time, 4, 400))
        means.append(np.mean(np.abs(K.terminal)))
    assert means[1] < means[0]


def _problem(gc, coeffs, space, time, phi, gen=None):
    return PdeProblem(gc, coeffs, gen or GeneratorSpec.zero(), ScalarField.from_function(phi, space), time, space)


def test_comparison_shift(gc, coeffs, small_space, small_time):
    p1 = _problem(gc, coeffs, small_space, small_time, lambda x: x**2)
    p2 = _problem(gc, coeffs, small_space, small_time, lambda x: x**2 - 1)
    r = comparison_check(p1, p2)
    assert r.status == "pass" and r.min_margin == pytest.approx(1.0, abs=1e-9)
    same = comparison_check(p1, p1)
    assert same.status == "pass" and same.min_margin == 0.0


def test_comparison_generators(gc, coeffs, small_space, small_time):
    p1 = _problem(gc, coeffs, small_space, small_time, np.cos, GeneratorSpec("abs_z(0.3)"))
    p2 = _problem(gc, coeffs, small_space, small_time, np.cos)
    assert comparison_check(p1, p2).status == "pass"


def test_comparison_inconclusive(gc, coeffs, small_space, small_time):
    p1 = _problem(gc, coeffs, small_space, small_time, np.cos)
    p2 = _problem(gc, coeffs, small_space, small_time, np.sin)
    r = comparison_check(p1, p2)
    assert r.status == "inconclusive" and "terminal" in r.reason
    p3 = _problem(gc, coeffs, small_space, small_time, np.cos, GeneratorSpec("abs_z(0.3)"))
    assert comparison_check(p1, p3).status == "inconclusive"
    p4 = _problem(GCoefficients(0.4, 1.0), coeffs, small_space, small_time, np.cos)
    assert "dynamics" in comparison_check(p1, p4).reason
    p5 = _problem(gc, coeffs, small_space, TimeGrid(1.0, small_time.n_steps + 8), np.cos)
    assert "grids" in comparison_check(p1, p5).reason
