"""Scenario simulation of G-Brownian motion under volatility-controlled measures.

Under the measure attached to an adapted control h with values in the band,
B = int h dW, <B> = int h^2 dt, and the forward state follows

    dX = b dt + h_coef d<B> + sigma dB         (Euler-Maruyama).

Upper expectations are estimated as the max over a control family of
Monte-Carlo means, all controls sharing the same noise (common random numbers).

Noise
-----
Path ``k`` under master seed ``m`` draws its N(0, 1) increments from a Philox
4x64 counter-based generator keyed with the 128-bit integer ``(m << 64) | k``,
through ``numpy.random.Generator.standard_normal``. Each path therefore owns a
disjoint stream that does not depend on how paths are scheduled. Recorded in
run metadata as :data:`RNG_SCHEME`.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .core import CoefficientSpec, GCoefficients, SpaceTimeField, TimeGrid
from .pde import spatial_differences

RNG_SCHEME = "philox4x64(key=(master<<64)|path_index).standard_normal v1"
BLOCK_SIZE = 4096

_U64 = 1 << 64


def path_noise(master_seed: int, path_index: int, n_steps: int) -> np.ndarray:
    """Standard normal draws for one path; depends only on (master, index)."""
    if not (0 <= master_seed < _U64 and 0 <= path_index < _U64):
        raise ValueError("master_seed and path_index must be unsigned 64-bit integers")
    bitgen = np.random.Philox(key=(int(master_seed) << 64) | int(path_index))
    return np.random.Generator(bitgen).standard_normal(n_steps)


def noise_block(master_seed: int, indices, n_steps: int) -> np.ndarray:
    """Rows equal to :func:`path_noise` for each index, generated by rekeying
    one Philox instance (same stream, less constructor overhead)."""
    if not 0 <= master_seed < _U64:
        raise ValueError("master_seed must be an unsigned 64-bit integer")
    bitgen = np.random.Philox(counter=0, key=int(master_seed) << 64)
    gen = np.random.Generator(bitgen)
    out = np.empty((len(indices), n_steps))
    zeros = np.zeros(4, dtype=np.uint64)
    for r, k in enumerate(indices):
        if not 0 <= k < _U64:
            raise ValueError("path_index must be an unsigned 64-bit integer")
        bitgen.state = {
            "bit_generator": "Philox",
            "state": {"counter": zeros, "key": np.array([k, master_seed], dtype=np.uint64)},
            "buffer": zeros,
            "buffer_pos": 4,
            "has_uint32": 0,
            "uinteger": 0,
        }
        out[r] = gen.standard_normal(n_steps)
    return out


@dataclass(frozen=True, eq=False)
class VolatilityControl:
    """Constant, per-step piecewise, or Markov feedback volatility choice."""

    kind: str
    gc: GCoefficients
    value: float | None = None
    values: np.ndarray | None = None
    field: SpaceTimeField | None = None
    label: str = ""

    def __post_init__(self):
        gc = self.gc
        if self.kind == "constant":
            if self.value is None or not gc.contains(self.value):
                raise ValueError(f"constant control {self.value} outside band [{gc.sigma_low}, {gc.sigma_high}]")
        elif self.kind == "piecewise":
            vals = np.array(self.values, dtype=float)
            if vals.ndim != 1 or vals.size == 0 or not gc.contains(vals):
                raise ValueError("piecewise control values must be a nonempty 1-d array inside the band")
            vals.setflags(write=False)
            object.__setattr__(self, "values", vals)
        elif self.kind == "feedback":
            if self.field is None:
                raise ValueError("feedback control needs a field")
        else:
            raise ValueError(f"unknown control kind {self.kind!r}")

    @classmethod
    def constant(cls, c: float, gc: GCoefficients) -> "VolatilityControl":
        return cls("constant", gc, value=float(c))

    @classmethod
    def piecewise(cls, values, gc: GCoefficients, label: str = "") -> "VolatilityControl":
        return cls("piecewise", gc, values=values, label=label)

    @classmethod
    def alternating(cls, gc: GCoefficients, n_steps: int) -> "VolatilityControl":
        vals = np.where(np.arange(n_steps) % 2 == 0, gc.sigma_low, gc.sigma_high)
        return cls("piecewise", gc, values=vals, label="alternating")

    def describe(self) -> str:
        if self.kind == "constant":
            return f"constant({self.value!r})"
        if self.kind == "piecewise":
            return self.label or f"piecewise[{self.values.size}]"
        return self.label or "feedback"

    @cached_property
    def _high_mask(self) -> np.ndarray:
        # True where the centered second difference is >= 0 (ties go high);
        # second differences below rounding level of the field count as ties
        u = self.field.values
        d2, _, _, _ = spatial_differences(u, self.field.space.dx)
        tie = 64 * np.finfo(float).eps * (1.0 + np.max(np.abs(u))) / self.field.space.dx**2
        return d2 >= -tie

    def realize(self, i: int, t: float, x: np.ndarray) -> np.ndarray:
        """Control values at step i (time t) for states x."""
        if self.kind == "constant":
            return np.full(x.shape, self.value)
        if self.kind == "piecewise":
            if i >= self.values.size:
                raise ValueError(f"piecewise control has {self.values.size} steps, step {i} requested")
            return np.full(x.shape, self.values[i])
        fld = self.field
        row = min(int(round(t / fld.time.dt)), fld.time.n_steps)
        col = fld.space.nearest_index(x)
        return np.where(self._high_mask[row, col], self.gc.sigma_high, self.gc.sigma_low)


def feedback_control_from_field(u: SpaceTimeField, gc: GCoefficients, time=None, space=None) -> VolatilityControl:
    """Bang-bang control: sigma_high where u is convex in x, sigma_low where concave."""
    if time is not None and u.time != time:
        raise ValueError("field time grid differs from the run's")
    if space is not None and u.space != space:
        raise ValueError("field space grid differs from the run's")
    return VolatilityControl("feedback", gc, field=u, label="feedback")


@dataclass(frozen=True, eq=False)
class ScenarioPath:
    time: TimeGrid
    dW: np.ndarray
    h: np.ndarray
    B: np.ndarray
    QV: np.ndarray
    X: np.ndarray
    seed: tuple[int, int] = (0, 0)
    gc: GCoefficients | None = None


@dataclass(frozen=True, eq=False)
class ScenarioBatch:
    """Many paths under one control; arrays are (n_paths, n_steps[+1])."""

    time: TimeGrid
    dW: np.ndarray
    h: np.ndarray
    B: np.ndarray
    QV: np.ndarray
    X: np.ndarray
    master_seed: int
    indices: np.ndarray
    control: str = ""
    gc: GCoefficients | None = None

    @property
    def n_paths(self) -> int:
        return self.X.shape[0]

    def path(self, r: int) -> ScenarioPath:
        return ScenarioPath(
            self.time, self.dW[r], self.h[r], self.B[r], self.QV[r], self.X[r],
            (self.master_seed, int(self.indices[r])), self.gc,
        )


def _check_control_grid(ctrl: VolatilityControl, time: TimeGrid) -> None:
    if ctrl.kind == "piecewise" and ctrl.values.size != time.n_steps:
        raise ValueError(f"piecewise control has {ctrl.values.size} values for {time.n_steps} steps")
    if ctrl.kind == "feedback" and not math.isclose(ctrl.field.time.horizon, time.horizon, rel_tol=1e-12):
        raise ValueError("feedback field horizon differs from the path horizon")


def simulate(
    ctrl: VolatilityControl,
    coeffs: CoefficientSpec,
    x0: float,
    time: TimeGrid,
    normals: np.ndarray,
) -> tuple[np.ndarray, ...]:
    """Euler scheme for given standard normals (n_paths, n_steps)."""
    _check_control_grid(ctrl, time)
    n, N = normals.shape
    if N != time.n_steps:
        raise ValueError("noise length does not match the time grid")
    dt = time.dt
    # time-major work arrays keep per-step column access contiguous
    dW = math.sqrt(dt) * normals.T
    h = np.empty((N, n))
    B = np.empty((N + 1, n))
    QV = np.empty((N + 1, n))
    X = np.empty((N + 1, n))
    B[0] = 0.0
    QV[0] = 0.0
    X[0] = x0
    tt = time.t
    b, hc, sig = coeffs.b, coeffs.h, coeffs.sigma
    for i in range(N):
        xi = X[i]
        hi = ctrl.realize(i, tt[i], xi)
        h[i] = hi
        dB = hi * dW[i]
        dq = hi * hi * dt
        B[i + 1] = B[i] + dB
        QV[i + 1] = QV[i] + dq
        X[i + 1] = xi + b(tt[i], xi) * dt + hc(tt[i], xi) * dq + sig(tt[i], xi) * dB
    return tuple(np.ascontiguousarray(a.T) for a in (dW, h, B, QV, X))


def sample_path(
    ctrl: VolatilityControl,
    coeffs: CoefficientSpec,
    x0: float,
    time: TimeGrid,
    seed: tuple[int, int],
) -> ScenarioPath:
    master, k = seed
    normals = path_noise(master, k, time.n_steps)[None, :]
    dW, h, B, QV, X = simulate(ctrl, coeffs, x0, time, normals)
    return ScenarioPath(time, dW[0], h[0], B[0], QV[0], X[0], (int(master), int(k)), ctrl.gc)


def sample_paths(
    ctrl: VolatilityControl,
    coeffs: CoefficientSpec,
    x0: float,
    time: TimeGrid,
    master_seed: int,
    n_paths: int,
    first_index: int = 0,
) -> ScenarioBatch:
    idx = np.arange(first_index, first_index + n_paths)
    normals = noise_block(master_seed, idx, time.n_steps)
    dW, h, B, QV, X = simulate(ctrl, coeffs, x0, time, normals)
    return ScenarioBatch(time, dW, h, B, QV, X, int(master_seed), idx, ctrl.describe(), ctrl.gc)


def quadratic_variation_check(path: ScenarioPath, gc: GCoefficients | None = None, rtol: float = 1e-12) -> bool:
    """True iff <B> starts at 0, is nondecreasing and stays in [var_low t, var_high t]."""
    gc = gc or path.gc
    if gc is None:
        raise ValueError("path carries no volatility band; pass gc")
    qv = np.asarray(path.QV)
    t = path.time.t
    if qv[0] != 0.0:
        return False
    if np.any(np.diff(qv) < -rtol * (1.0 + np.abs(qv[1:]))):
        return False
    slack = rtol * (1.0 + np.abs(qv))
    return bool(np.all(qv >= gc.var_low * t - slack) and np.all(qv <= gc.var_high * t + slack))


@dataclass(frozen=True)
class ExpectationEstimate:
    value: float
    stderr: float
    control_descriptor: str
    n_paths: int
    bound_side: str
    per_control: tuple = field(default=())

    def __post_init__(self):
        if not self.stderr >= 0:
            raise ValueError("stderr must be nonnegative")
        if self.bound_side not in ("lower", "matched"):
            raise ValueError("bound_side is 'lower' or 'matched'")

    def to_dict(self, seed: int | None = None) -> dict:
        out = {
            "value": self.value,
            "stderr": self.stderr,
            "control": self.control_descriptor,
            "n_paths": self.n_paths,
            "bound_side": self.bound_side,
            "per_control": [
                {"control": c, "value": v, "stderr": s} for c, v, s in self.per_control
            ],
        }
        if seed is not None:
            out["seed"] = seed
        return out


class UpperExpectationEstimator:
    """Max-over-controls Monte-Carlo estimator with common random numbers.

    Terminal states for every control are simulated once (lazily) and reused
    for every payoff, so payoff comparisons see identical samples.
    """

    def __init__(
        self,
        controls,
        coeffs: CoefficientSpec,
        x0: float,
        time: TimeGrid,
        n_paths: int,
        master_seed: int,
        threads: int = 1,
    ):
        controls = list(controls)
        if not controls:
            raise ValueError("control family is empty")
        if n_paths < 100:
            raise ValueError("need at least 100 paths")
        for c in controls:
            _check_control_grid(c, time)
        self.controls = controls
        self.coeffs = coeffs
        self.x0 = float(x0)
        self.time = time
        self.n_paths = int(n_paths)
        self.master_seed = int(master_seed)
        self.threads = max(1, int(threads))

    def _block(self, start: int) -> np.ndarray:
        stop = min(start + BLOCK_SIZE, self.n_paths)
        normals = noise_block(self.master_seed, range(start, stop), self.time.n_steps)
        out = np.empty((len(self.controls), stop - start))
        for c, ctrl in enumerate(self.controls):
            out[c] = simulate(ctrl, self.coeffs, self.x0, self.time, normals)[4][:, -1]
        return out

    @cached_property
    def terminal_states(self) -> np.ndarray:
        """(n_controls, n_paths) array of X_T, in path-index order."""
        starts = range(0, self.n_paths, BLOCK_SIZE)
        if self.threads == 1:
            blocks = [self._block(s) for s in starts]
        else:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                blocks = list(pool.map(self._block, starts))
        return np.concatenate(blocks, axis=1)

    @property
    def bound_side(self) -> str:
        return "matched" if any(c.kind == "feedback" for c in self.controls) else "lower"

    def __call__(self, phi) -> ExpectationEstimate:
        vals = np.asarray(phi(self.terminal_states), dtype=float)
        means = vals.mean(axis=1)
        errs = vals.std(axis=1, ddof=1) / math.sqrt(self.n_paths)
        best = int(np.argmax(means))
        per = tuple((c.describe(), float(m), float(s)) for c, m, s in zip(self.controls, means, errs))
        return ExpectationEstimate(
            float(means[best]), float(errs[best]), self.controls[best].describe(),
            self.n_paths, self.bound_side, per,
        )


def estimate_upper_expectation(
    phi,
    controls,
    coeffs: CoefficientSpec,
    x0: float,
    time: TimeGrid,
    n_paths: int,
    master_seed: int,
    threads: int = 1,
) -> ExpectationEstimate:
    return UpperExpectationEstimator(controls, coeffs, x0, time, n_paths, master_seed, threads)(phi)
