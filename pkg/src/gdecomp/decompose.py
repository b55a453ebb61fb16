"""Penalization and nonlinear Doob-Meyer decomposition of a candidate u(t, x).

For each penalty intensity n the penalized PDE

    d_t v + F(v) + n (u - v) = 0,   v(T) = u(T)

is solved; v^n increases to u when u is a supermartingale representative.
The decomposition of Y = u(t, X_t) is delivered as two rate fields:

    rho   = d_t w + b w_x + g(t, x, w, sigma w_x)
    kappa = sigma^2 w_xx / 2 + h w_x + f(t, x, w, sigma w_x)

with dA = -(rho + kappa h_t^2) dt along a path driven by control h and
Z = sigma w_x, where w is u itself or, on the penalization route, the
converged iterate v^n. The same increments on v^n equal n (u - v^n) dt - dK^n.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .core import (
    CoefficientSpec,
    GCoefficients,
    GeneratorSpec,
    SpaceTimeField,
    check_same_grids,
)
from .gbsde import _as_batch, lattice_along, z_field_values
from .pde import Penalty, PdeProblem, solve_terminal_pde, spatial_differences


class NotSupermartingaleError(ValueError):
    """Penalization gap too large: the target is not a supermartingale at this resolution."""


def geometric_schedule(base: int = 2, max_power: int = 12, start_power: int = 0) -> list[float]:
    return [float(base**k) for k in range(start_power, max_power + 1)]


DEFAULT_SCHEDULE = geometric_schedule(2, 12)


@dataclass
class PenalizationReport:
    schedule: list
    gaps: list                  # sup |u - v^n| per n
    monotone_in_n: bool
    below_target: bool
    final_gap: float
    violations: list = field(default_factory=list)     # sup (v^n - u)^+ per n
    z_sup: list = field(default_factory=list)          # interior sup |z^n|
    penalty_mass: list = field(default_factory=list)   # sup_x n int_0^T (u - v^n) dt
    tol: float = 0.0
    u_sup: float = 0.0
    stop_reason: str = "schedule exhausted"
    time_modulus: float = 0.0

    @property
    def relative_final_gap(self) -> float:
        return self.final_gap / max(self.u_sup, 1e-300)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["relative_final_gap"] = self.relative_final_gap
        return out


def _time_modulus(u: SpaceTimeField, eps: float) -> float:
    k = max(1, int(math.floor(eps / u.time.dt + 1e-9)))
    v = u.values
    return max(float(np.max(np.abs(v[j:] - v[:-j]))) for j in range(1, min(k, u.time.n_steps) + 1))


def penalized_iterate(
    u: SpaceTimeField,
    gen: GeneratorSpec,
    coeffs: CoefficientSpec,
    gc: GCoefficients,
    schedule=None,
    tol: float | None = None,
    stop_rel_gap: float | None = None,
):
    """Solve the penalized PDE for each n in ``schedule``.

    Returns ``(fields, report)``. ``tol`` defaults to 1e-6 * max(1, sup|u|);
    ``stop_rel_gap`` (off by default) ends the sweep once sup|u - v^n| / sup|u|
    drops below it.
    """
    schedule = list(DEFAULT_SCHEDULE if schedule is None else schedule)
    if not schedule:
        raise ValueError("penalty schedule is empty")
    if any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("penalty schedule must be strictly increasing")
    if schedule[0] < 0:
        raise ValueError("penalty intensities must be >= 0")
    u_sup = u.sup_norm()
    if tol is None:
        tol = 1e-6 * max(1.0, u_sup)
    x = u.space.x[None, :]
    t = u.time.t[:, None]
    sig = coeffs.sigma(t, x)

    fields, gaps, viol, zsup, mass = [], [], [], [], []
    used = []
    stop_reason = "schedule exhausted"
    for n in schedule:
        prob = PdeProblem(gc, coeffs, gen, u.terminal, u.time, u.space, Penalty(float(n), u))
        v = solve_terminal_pde(prob)
        diff = u.values - v.values
        fields.append(v)
        used.append(float(n))
        gaps.append(float(np.max(np.abs(diff))))
        viol.append(float(max(0.0, np.max(-diff))))
        _, d1, _, _ = spatial_differences(v.values, u.space.dx)
        zsup.append(float(np.max(np.abs(sig * d1)[:, 2:-2])))
        mass.append(float(n * np.max(np.sum(diff[:-1], axis=0) * u.time.dt)))
        if stop_rel_gap is not None and gaps[-1] / max(u_sup, 1e-300) < stop_rel_gap:
            stop_reason = f"relative gap below {stop_rel_gap:g}"
            break

    monotone = all(np.all(b.values >= a.values - tol) for a, b in zip(fields, fields[1:]))
    report = PenalizationReport(
        schedule=used,
        gaps=gaps,
        monotone_in_n=bool(monotone),
        below_target=bool(all(vv <= tol for vv in viol)),
        final_gap=gaps[-1],
        violations=viol,
        z_sup=zsup,
        penalty_mass=mass,
        tol=float(tol),
        u_sup=u_sup,
        stop_reason=stop_reason,
        time_modulus=_time_modulus(u, u.time.horizon / 16),
    )
    return fields, report


def gaps_strictly_decreasing(report: PenalizationReport) -> bool:
    g = report.gaps
    return all(b < a for a, b in zip(g, g[1:]))


def rate_fields(w: SpaceTimeField, gen: GeneratorSpec, coeffs: CoefficientSpec):
    """(z, rho, kappa) value arrays for the field w; last row repeats row N-1."""
    v = w.values
    dt = w.time.dt
    t = w.time.t[:, None]
    x = w.space.x[None, :]
    z = z_field_values(w, coeffs)
    d2, d1, _, _ = spatial_differences(v, w.space.dx)
    dtv = np.empty_like(v)
    dtv[:-1] = (v[1:] - v[:-1]) / dt
    dtv[-1] = dtv[-2]
    sig = coeffs.sigma(t, x)
    zc = sig * d1
    rho = dtv + coeffs.b(t, x) * d1 + gen.g(t, x, v, zc)
    kappa = 0.5 * sig**2 * d2 + coeffs.h(t, x) * d1 + gen.f(t, x, v, zc)
    return z, rho, kappa


@dataclass(frozen=True, eq=False)
class DecompositionResult:
    u: SpaceTimeField
    z: SpaceTimeField
    rho: SpaceTimeField
    kappa: SpaceTimeField
    diagnostics: PenalizationReport
    gen: GeneratorSpec
    coeffs: CoefficientSpec
    gc: GCoefficients
    source: str = "target"      # "target" (w = u) or "penalized" (w = v^n, last n)
    w: SpaceTimeField | None = None
    unreliable_columns: tuple = (0, 1, -2, -1)

    def A(self, path) -> np.ndarray:
        """A along path(s) from the rate fields: (n_paths, N+1), A_0 = 0."""
        batch = _as_batch(path)
        if batch.time != self.u.time:
            raise ValueError("path time grid differs from the decomposition's")
        X = batch.X[:, :-1]
        rho = lattice_along(self.rho.values[:-1], self.u.space, X)
        kap = lattice_along(self.kappa.values[:-1], self.u.space, X)
        dA = -(rho + kap * batch.h**2) * self.u.time.dt
        A = np.zeros(batch.X.shape)
        A[:, 1:] = np.cumsum(dA, axis=1)
        return A

    def A_ito(self, path) -> np.ndarray:
        """Independent route: A_t = Y_0 - Y_t - int g ds - int f d<B> + int Z dB."""
        batch = _as_batch(path)
        w = self.w if self.w is not None else self.u
        if batch.time != w.time:
            raise ValueError("path time grid differs from the decomposition's")
        X = batch.X
        t = w.time.t[None, :-1]
        Y = lattice_along(w.values, w.space, X)
        Z = lattice_along(self.z.values, w.space, X)
        g = self.gen.g(t, X[:, :-1], Y[:, :-1], Z[:, :-1])
        f = self.gen.f(t, X[:, :-1], Y[:, :-1], Z[:, :-1])
        dA = -np.diff(Y, axis=1) - g * w.time.dt - f * np.diff(batch.QV, axis=1) + Z[:, :-1] * np.diff(batch.B, axis=1)
        A = np.zeros(X.shape)
        A[:, 1:] = np.cumsum(dA, axis=1)
        return A

    def envelope_violation(self) -> float:
        """max over interior nodes of (rho + G(2 kappa))^+ : the worst rate at
        which A could decrease under some admissible volatility."""
        worst = self.rho.values[:-1] + self.gc.G(2.0 * self.kappa.values[:-1])
        return float(max(0.0, np.max(worst[:, 1:-1])))


def extract_decomposition(
    u: SpaceTimeField,
    gen: GeneratorSpec,
    coeffs: CoefficientSpec,
    gc: GCoefficients,
    report: PenalizationReport,
    limit: SpaceTimeField | None = None,
    gap_tol: float | None = None,
) -> DecompositionResult:
    """Build (Z, A) for Y = u(t, X_t).

    Refuses unless every iterate stayed below u and the final gap is within
    ``gap_tol``; the penalty pulls v^n toward u from both sides, so a small
    gap alone does not certify the supermartingale property.

    With ``limit`` (the last penalized iterate), Z and the A-rates come from
    the penalization route; otherwise they are read off u directly.
    """
    if gap_tol is None:
        gap_tol = 5e-2 * u.sup_norm()
    if not report.below_target:
        worst = max(report.violations)
        raise NotSupermartingaleError(
            f"penalized iterates exceed the target by {worst:.4g} (> {report.tol:.3g}): "
            "target is not a supermartingale at this resolution"
        )
    if not report.final_gap <= gap_tol:
        raise NotSupermartingaleError(
            f"penalization gap {report.final_gap:.4g} exceeds {gap_tol:.4g} at n={report.schedule[-1]:g}: "
            "target is not a supermartingale at this resolution"
        )
    w = u
    source = "target"
    if limit is not None:
        check_same_grids(u, limit)
        w = limit
        source = "penalized"
    z, rho, kappa = rate_fields(w, gen, coeffs)
    mk = lambda a: SpaceTimeField(u.time, u.space, a)  # noqa: E731
    return DecompositionResult(
        u, mk(z), mk(rho), mk(kappa), report, gen, coeffs, gc, source, w,
    )


@dataclass(frozen=True)
class UniquenessReport:
    z_deviation: float
    a_deviation: float

    @property
    def max_deviation(self) -> float:
        return max(self.z_deviation, self.a_deviation)


def verify_uniqueness(d1: DecompositionResult, d2: DecompositionResult, paths) -> UniquenessReport:
    """Max |z1 - z2| over interior nodes and max |A1 - A2| along the given paths."""
    if not (d1.u.same_grids(d2.u) and np.array_equal(d1.u.values, d2.u.values)):
        raise ValueError("decompositions are of different targets")
    dz = float(np.max(np.abs(d1.z.values - d2.z.values)[:, 2:-2]))
    batches = paths if isinstance(paths, (list, tuple)) else [paths]
    da = 0.0
    for b in batches:
        da = max(da, float(np.max(np.abs(d1.A(b) - d2.A(b)))))
    return UniquenessReport(dz, da)


def perturbed(d: DecompositionResult, dz: float) -> DecompositionResult:
    """Copy of d with z shifted by dz (negative controls in tests)."""
    return replace(d, z=SpaceTimeField(d.z.time, d.z.space, d.z.values + dz))
