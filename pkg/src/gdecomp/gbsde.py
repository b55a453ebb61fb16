"""Markovian G-BSDEs through the PDE: Y_s = u(s, X_s), Z = sigma u_x.

``pathwise_K`` recovers the decreasing G-martingale part along simulated
paths by rearranging the backward equation with left-point (Ito) sums.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    CoefficientSpec,
    GCoefficients,
    GeneratorSpec,
    ScalarField,
    SpaceGrid,
    SpaceTimeField,
    TimeGrid,
    interp_linear,
)
from .pde import PdeProblem, solve_terminal_pde
from .scenario import ScenarioBatch, ScenarioPath


def z_field_values(u: SpaceTimeField, coeffs: CoefficientSpec) -> np.ndarray:
    """sigma * u_x: centered inside, one-sided in the two end columns."""
    v = u.values
    dx = u.space.dx
    d1 = np.empty_like(v)
    d1[:, 1:-1] = (v[:, 2:] - v[:, :-2]) / (2.0 * dx)
    d1[:, 0] = (v[:, 1] - v[:, 0]) / dx
    d1[:, -1] = (v[:, -1] - v[:, -2]) / dx
    return coeffs.sigma(u.time.t[:, None], u.space.x[None, :]) * d1


@dataclass(frozen=True, eq=False)
class GBsdeSolution:
    u: SpaceTimeField
    z: SpaceTimeField
    # columns where Z comes from one-sided differences; treat as unreliable
    unreliable_columns: tuple = field(default=(0, 1, -2, -1))

    def __post_init__(self):
        if not self.u.same_grids(self.z):
            raise ValueError("u and z must share grids")


def solve_gbsde(
    coeffs: CoefficientSpec,
    gen: GeneratorSpec,
    gc: GCoefficients,
    terminal: ScalarField,
    time: TimeGrid,
    space: SpaceGrid,
) -> GBsdeSolution:
    u = solve_terminal_pde(PdeProblem(gc, coeffs, gen, terminal, time, space))
    return GBsdeSolution(u, SpaceTimeField(time, space, z_field_values(u, coeffs)))


def _as_batch(path) -> ScenarioBatch:
    if isinstance(path, ScenarioBatch):
        return path
    return ScenarioBatch(
        path.time, path.dW[None], path.h[None], path.B[None], path.QV[None], path.X[None],
        path.seed[0], np.array([path.seed[1]]), "", path.gc,
    )


def lattice_along(values: np.ndarray, space: SpaceGrid, X: np.ndarray) -> np.ndarray:
    """values[i](X[:, i]) for every path and every time row."""
    out = np.empty_like(X)
    for i in range(X.shape[1]):
        out[:, i] = interp_linear(values[i], space, X[:, i])
    return out


@dataclass(frozen=True, eq=False)
class KSeries:
    values: np.ndarray  # (n_paths, N+1), K_0 = 0
    max_rise: float     # largest upward move max_{i<=j} (K_j - K_i), over all paths
    max_step: float     # largest single positive increment

    @property
    def terminal(self) -> np.ndarray:
        return self.values[:, -1]


def running_max_rise(k: np.ndarray) -> np.ndarray:
    """Per path, max over i <= j of k_j - k_i."""
    return np.max(k - np.minimum.accumulate(k, axis=-1), axis=-1)


def pathwise_K(sol: GBsdeSolution, gen: GeneratorSpec, path) -> KSeries:
    """K_t = Y_t - Y_0 + int g ds + int f d<B> - int Z dB along the path(s)."""
    batch = _as_batch(path)
    u = sol.u
    if batch.time != u.time:
        raise ValueError("path time grid differs from the solution's")
    X = batch.X
    dt = u.time.dt
    t = u.time.t[None, :]
    Y = lattice_along(u.values, u.space, X)
    Z = lattice_along(sol.z.values, u.space, X)
    g = gen.g(t[:, :-1], X[:, :-1], Y[:, :-1], Z[:, :-1])
    f = gen.f(t[:, :-1], X[:, :-1], Y[:, :-1], Z[:, :-1])
    dK = np.diff(Y, axis=1) + g * dt + f * np.diff(batch.QV, axis=1) - Z[:, :-1] * np.diff(batch.B, axis=1)
    K = np.zeros_like(X)
    K[:, 1:] = np.cumsum(dK, axis=1)
    return KSeries(K, float(np.max(running_max_rise(K))), float(max(0.0, np.max(dK))))


@dataclass(frozen=True)
class ComparisonReport:
    status: str            # "pass" | "fail" | "inconclusive"
    min_margin: float      # min over nodes of u1 - u2 (nan when inconclusive)
    tol: float
    reason: str = ""


def _generator_ordered(gen1, gen2, problem, n_samples: int = 9) -> bool:
    """Sampled check that g1 >= g2 and f1 >= f2 over the lattice and a (y, z) box."""
    tv = problem.terminal.values
    span = float(np.max(np.abs(tv))) + 1.0
    slope = float(np.max(np.abs(np.diff(tv)))) / problem.space.dx
    smax = float(np.max(np.abs(problem.coeffs.sigma(problem.time.t[:, None], problem.space.x[None, :]))))
    zmax = smax * slope + 1.0
    t = problem.time.t[:: max(1, problem.time.n_steps // 16)]
    x = problem.space.x[:: max(1, problem.space.n_points // 64)]
    y = np.linspace(-span, span, n_samples)
    z = np.linspace(-zmax, zmax, n_samples)
    T, Xg, Yg, Zg = np.meshgrid(t, x, y, z, indexing="ij")
    if np.any(gen1.g(T, Xg, Yg, Zg) < gen2.g(T, Xg, Yg, Zg)):
        return False
    return not np.any(gen1.f(T, Xg, Yg, Zg) < gen2.f(T, Xg, Yg, Zg))


def comparison_check(p1: PdeProblem, p2: PdeProblem, tol: float = 1e-8 + 1e-3) -> ComparisonReport:
    """Solve both problems and test u1 >= u2 - tol at every node.

    Returns "inconclusive" when the inputs are not ordered (terminal values on
    the grid, drivers on a sampled box) or do not share forward dynamics.
    """
    if p1.time != p2.time or p1.space != p2.space:
        return ComparisonReport("inconclusive", float("nan"), tol, "problems on different grids")
    if p1.gc != p2.gc or p1.coeffs.describe() != p2.coeffs.describe():
        return ComparisonReport("inconclusive", float("nan"), tol, "different forward dynamics")
    if np.any(p1.terminal.values < p2.terminal.values):
        return ComparisonReport("inconclusive", float("nan"), tol, "terminal values not ordered")
    if not _generator_ordered(p1.gen, p2.gen, p1):
        return ComparisonReport("inconclusive", float("nan"), tol, "generators not ordered")
    u1 = solve_terminal_pde(p1).values
    u2 = solve_terminal_pde(p2).values
    margin = float(np.min(u1 - u2))
    return ComparisonReport("pass" if margin >= -tol else "fail", margin, tol)
