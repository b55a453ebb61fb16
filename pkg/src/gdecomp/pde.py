"""Explicit monotone finite differences for the backward G-PDE

    d_t u + G(sigma^2 u_xx + 2 h u_x + 2 f) + b u_x + g(t, x, u, sigma u_x) = 0,

optionally penalized by + n (target - u), marched from u(T, .) to t = 0.

Second and first derivatives inside G are centered; the transport term b u_x
is upwinded. Boundary nodes see a ghost value by linear extrapolation, i.e.
the second difference vanishes there. The penalty is treated implicitly, so
the stability bound does not depend on n.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    CoefficientSpec,
    GCoefficients,
    GeneratorSpec,
    ScalarField,
    SpaceGrid,
    SpaceTimeField,
    TimeGrid,
)


class CFLError(ValueError):
    """Time step too large for the explicit scheme."""

    def __init__(self, cfl: float, dt: float, dt_max: float):
        self.cfl = cfl
        self.dt = dt
        self.dt_max = dt_max
        super().__init__(f"CFL number {cfl:.4g} > 1 for dt={dt:.6g}; maximal admissible dt is {dt_max:.6g}")


@dataclass(frozen=True, eq=False)
class Penalty:
    n: float
    target: SpaceTimeField

    def __post_init__(self):
        if not (math.isfinite(self.n) and self.n >= 0):
            raise ValueError(f"penalty intensity must be >= 0, got {self.n}")


@dataclass(frozen=True, eq=False)
class PdeProblem:
    gc: GCoefficients
    coeffs: CoefficientSpec
    gen: GeneratorSpec
    terminal: ScalarField
    time: TimeGrid
    space: SpaceGrid
    penalty: Penalty | None = None

    def __post_init__(self):
        if self.terminal.grid != self.space:
            raise ValueError("terminal condition lives on a different spatial grid")
        if self.penalty is not None:
            tgt = self.penalty.target
            if tgt.time != self.time or tgt.space != self.space:
                raise ValueError("penalty target lives on different grids")


def _coefficient_maxima(coeffs: CoefficientSpec, time: TimeGrid, space: SpaceGrid):
    t = time.t[:, None]
    x = space.x[None, :]
    smax = float(np.max(np.abs(coeffs.sigma(t, x))))
    bmax = float(np.max(np.abs(coeffs.b(t, x))))
    hmax = float(np.max(np.abs(coeffs.h(t, x))))
    return smax, bmax, hmax


def _cfl_rate(gc, coeffs, time, space) -> float:
    smax, bmax, hmax = _coefficient_maxima(coeffs, time, space)
    dx = space.dx
    return gc.var_high * smax**2 / dx**2 + (bmax + gc.var_high * hmax) / dx


def cfl_number(gc: GCoefficients, coeffs: CoefficientSpec, time: TimeGrid, space: SpaceGrid) -> float:
    """dt * (var_high max sigma^2 / dx^2 + (max|b| + var_high max|h|) / dx)."""
    return time.dt * _cfl_rate(gc, coeffs, time, space)


def check_cfl(gc, coeffs, time, space) -> None:
    rate = _cfl_rate(gc, coeffs, time, space)
    cfl = time.dt * rate
    if cfl > 1.0 + 1e-12:
        raise CFLError(cfl, time.dt, 1.0 / rate if rate > 0 else math.inf)


def auto_time_grid(
    horizon: float,
    gc: GCoefficients,
    coeffs: CoefficientSpec,
    space: SpaceGrid,
    safety: float = 0.9,
    multiple: int = 1,
) -> TimeGrid:
    """Coarsest uniform time grid with CFL number <= safety.

    Coefficient maxima are taken over a provisional grid and the step count is
    rounded up to a multiple of ``multiple`` (handy for dyadic time pairs).
    """
    if not 0 < safety <= 1:
        raise ValueError("safety must be in (0, 1]")
    probe = TimeGrid(horizon, 64)
    rate = _cfl_rate(gc, coeffs, probe, space)
    n = max(1, math.ceil(horizon * rate / safety - 1e-9))
    n = multiple * math.ceil(n / multiple)
    grid = TimeGrid(horizon, n)
    while cfl_number(gc, coeffs, grid, space) > safety + 1e-12:
        n += multiple
        grid = TimeGrid(horizon, n)
    return grid


def spatial_differences(v: np.ndarray, dx: float):
    """Centered second/first differences and one-sided first differences
    along the last axis, with linear-extrapolation ghost nodes."""
    left = 2.0 * v[..., :1] - v[..., 1:2]
    right = 2.0 * v[..., -1:] - v[..., -2:-1]
    ext = np.concatenate([left, v, right], axis=-1)
    up, mid, down = ext[..., 2:], ext[..., 1:-1], ext[..., :-2]
    d2 = (up - 2.0 * mid + down) / dx**2
    d1 = (up - down) / (2.0 * dx)
    d_fwd = (up - mid) / dx
    d_bwd = (mid - down) / dx
    return d2, d1, d_fwd, d_bwd


def operator_rate(v, t, x, dx, gc, coeffs, gen) -> np.ndarray:
    """Discrete G(sigma^2 u_xx + 2 h u_x + 2 f) + b u_x + g at every node.

    Works row-wise on 2-d arrays when t is a column vector.
    """
    d2, d1, d_fwd, d_bwd = spatial_differences(v, dx)
    sig = coeffs.sigma(t, x)
    b = coeffs.b(t, x)
    h = coeffs.h(t, x)
    z = sig * d1
    arg = sig**2 * d2 + 2.0 * h * d1
    if gen.has_f:
        arg = arg + 2.0 * gen.f(t, x, v, z)
    transport = np.where(b >= 0.0, b * d_fwd, b * d_bwd)
    rate = gc.G(arg) + transport
    if not gen.form.is_zero:
        rate = rate + gen.g(t, x, v, z)
    return rate


def explicit_step(v, t, x, dx, dt, gc, coeffs, gen) -> np.ndarray:
    """One backward step v(t, .) -> v_explicit(t - dt, .), coefficients at t."""
    return v + dt * operator_rate(v, t, x, dx, gc, coeffs, gen)


def backward_sweep(
    gc: GCoefficients,
    coeffs: CoefficientSpec,
    gen: GeneratorSpec,
    time: TimeGrid,
    space: SpaceGrid,
    terminal_values,
    start: int | None = None,
    stop: int = 0,
    penalty: Penalty | None = None,
    check: bool = True,
) -> np.ndarray:
    """March from time index ``start`` (holding terminal_values) down to ``stop``.

    Returns rows stop..start (increasing time order) as a fresh array.
    """
    if start is None:
        start = time.n_steps
    if not 0 <= stop <= start <= time.n_steps:
        raise ValueError(f"need 0 <= stop <= start <= {time.n_steps}")
    if check:
        check_cfl(gc, coeffs, time, space)
    x = space.x
    dt = time.dt
    t = time.t
    out = np.empty((start - stop + 1, space.n_points))
    out[-1] = terminal_values
    v = out[-1]
    for i in range(start, stop, -1):
        v = explicit_step(v, t[i], x, space.dx, dt, gc, coeffs, gen)
        if penalty is not None and penalty.n > 0:
            nd = dt * penalty.n
            v = (v + nd * penalty.target.values[i - 1]) / (1.0 + nd)
        out[i - 1 - stop] = v
    return out


def solve_terminal_pde(p: PdeProblem) -> SpaceTimeField:
    rows = backward_sweep(p.gc, p.coeffs, p.gen, p.time, p.space, p.terminal.values, penalty=p.penalty)
    return SpaceTimeField(p.time, p.space, rows)


_ZERO_COEFFS = CoefficientSpec()


def g_normal_expectation(
    phi: ScalarField,
    t: float,
    x_query: float,
    gc: GCoefficients,
    space: SpaceGrid,
    time: TimeGrid | None = None,
) -> float:
    """E[phi(x_query + sqrt(t) X)] for X G-normal, via the G-heat equation."""
    if phi.grid != space:
        raise ValueError("phi lives on a different grid")
    margin = 6.0 * gc.sigma_high * math.sqrt(max(t, 0.0))
    if not space.x_min + margin <= x_query <= space.x_max - margin:
        raise ValueError(
            f"query {x_query} outside the safe window "
            f"[{space.x_min + margin:.4g}, {space.x_max - margin:.4g}] for t={t}"
        )
    if t == 0:
        return float(phi.at(x_query))
    if time is None:
        time = auto_time_grid(t, gc, _ZERO_COEFFS, space)
    elif not math.isclose(time.horizon, t, rel_tol=1e-12):
        raise ValueError(f"time grid horizon {time.horizon} != t = {t}")
    rows = backward_sweep(gc, _ZERO_COEFFS, GeneratorSpec.zero(), time, space, phi.values, stop=0)
    return float(np.interp(x_query, space.x, rows[0]))


@dataclass(frozen=True, eq=False)
class ResidualReport:
    """Pointwise residual d_t u + F(...) on interior nodes (NaN elsewhere)."""

    residual: np.ndarray
    max_violation: float
    max_abs: float
    note: str = "smooth-point check only"


def supersolution_residual(
    u: SpaceTimeField,
    gc: GCoefficients,
    coeffs: CoefficientSpec,
    gen: GeneratorSpec,
) -> ResidualReport:
    """Scheme defect (u_{i+1} - u_i)/dt + F(t_{i+1}, u_{i+1}) on rows 0..N-1.

    The operator is taken at the later node, as in the explicit solver, so a
    field produced by the solver has zero residual. Interior columns only. A
    viscosity supersolution has residual <= 0 wherever it is smooth.
    """
    M = u.space.n_points
    if M - 2 < 3:
        raise ValueError("need at least 3 interior spatial nodes")
    v = u.values
    dt = u.time.dt
    t = u.time.t[1:, None]
    x = u.space.x
    later = v[1:]
    r = (later - v[:-1]) / dt + operator_rate(later, t, x, u.space.dx, gc, coeffs, gen)
    out = np.full(v.shape, np.nan)
    out[:-1, 1:-1] = r[:, 1:-1]
    interior = r[:, 1:-1]
    return ResidualReport(out, max(0.0, float(np.max(interior))), float(np.max(np.abs(interior))))
