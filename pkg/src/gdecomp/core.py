"""Domain types shared across the package.

All types are immutable after construction; arrays they hold are
read-only views, so instances can be shared between workers freely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .forms import CoefFunction, GeneratorForm, parse_form


def _frozen(a) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class GCoefficients:
    """Volatility band [sigma_low, sigma_high] of the G-function."""

    sigma_low: float
    sigma_high: float

    def __post_init__(self):
        lo, hi = self.sigma_low, self.sigma_high
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise ValueError("volatility band must be finite")
        if not 0 < lo <= hi:
            raise ValueError(f"need 0 < sigma_low <= sigma_high, got ({lo}, {hi})")

    @property
    def var_low(self) -> float:
        return self.sigma_low**2

    @property
    def var_high(self) -> float:
        return self.sigma_high**2

    def G(self, a):
        """Vectorized G(a) = (var_high * a^+ - var_low * a^-) / 2."""
        a = np.asarray(a, dtype=float)
        return 0.5 * (self.var_high * np.maximum(a, 0.0) - self.var_low * np.maximum(-a, 0.0))

    def argmax_vol(self, a):
        """Volatility in the band maximizing h^2 * a (ties at a = 0 go high)."""
        return np.where(np.asarray(a) >= 0.0, self.sigma_high, self.sigma_low)

    def contains(self, h, rtol: float = 1e-12) -> bool:
        h = np.asarray(h, dtype=float)
        slack = rtol * self.sigma_high
        return bool(np.all((h >= self.sigma_low - slack) & (h <= self.sigma_high + slack)))


def g_of(a: float, gc: GCoefficients) -> float:
    """Scalar G-function; rejects non-finite input."""
    a = float(a)
    if not math.isfinite(a):
        raise ValueError(f"G is defined on finite reals, got {a}")
    return float(gc.G(a))


@dataclass(frozen=True)
class SpaceGrid:
    x_min: float
    x_max: float
    n_points: int

    def __post_init__(self):
        if int(self.n_points) != self.n_points or self.n_points < 3:
            raise ValueError("SpaceGrid needs an integer n_points >= 3")
        if not (math.isfinite(self.x_min) and math.isfinite(self.x_max)) or self.x_min >= self.x_max:
            raise ValueError(f"need finite x_min < x_max, got [{self.x_min}, {self.x_max}]")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.n_points - 1)

    @cached_property
    def x(self) -> np.ndarray:
        return _frozen(np.linspace(self.x_min, self.x_max, self.n_points))

    def nearest_index(self, x):
        j = np.rint((np.asarray(x, dtype=float) - self.x_min) / self.dx)
        return np.clip(j, 0, self.n_points - 1).astype(np.intp)


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    n_steps: int

    def __post_init__(self):
        if not (math.isfinite(self.horizon) and self.horizon > 0):
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError("TimeGrid needs an integer n_steps >= 1")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @cached_property
    def t(self) -> np.ndarray:
        return _frozen(np.linspace(0.0, self.horizon, self.n_steps + 1))

    def index_of(self, t: float, rtol: float = 1e-9) -> int:
        """Index of node t; raises if t is not (numerically) a node."""
        k = round(t / self.dt)
        if not 0 <= k <= self.n_steps or abs(k * self.dt - t) > rtol * self.horizon:
            raise ValueError(f"time {t} is not a node of {self}")
        return int(k)


def interp_linear(values: np.ndarray, space: SpaceGrid, x) -> np.ndarray:
    """Linear interpolation on a uniform grid, clamped to the end nodes."""
    x = np.asarray(x, dtype=float)
    s = (x - space.x_min) / space.dx
    j = np.clip(np.floor(s), 0, space.n_points - 2).astype(np.intp)
    w = np.clip(s - j, 0.0, 1.0)
    return (1.0 - w) * values[..., j] + w * values[..., j + 1]


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: SpaceGrid
    values: np.ndarray

    def __post_init__(self):
        v = _frozen(self.values)
        if v.shape != (self.grid.n_points,):
            raise ValueError(f"expected {self.grid.n_points} values, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("ScalarField values must be finite")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, fn, grid: SpaceGrid) -> "ScalarField":
        return cls(grid, fn(grid.x))

    def at(self, x):
        return interp_linear(self.values, self.grid, x)


@dataclass(frozen=True, eq=False)
class SpaceTimeField:
    time: TimeGrid
    space: SpaceGrid
    values: np.ndarray

    def __post_init__(self):
        v = _frozen(self.values)
        shape = (self.time.n_steps + 1, self.space.n_points)
        if v.shape != shape:
            raise ValueError(f"expected shape {shape}, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("SpaceTimeField values must be finite")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, fn, time: TimeGrid, space: SpaceGrid) -> "SpaceTimeField":
        """Tabulate fn(t, x) (vectorized, broadcast over the lattice)."""
        t = time.t[:, None]
        x = space.x[None, :]
        return cls(time, space, np.broadcast_to(fn(t, x), (t.shape[0], x.shape[1])))

    def same_grids(self, other: "SpaceTimeField") -> bool:
        return self.time == other.time and self.space == other.space

    def slice(self, i: int) -> ScalarField:
        return ScalarField(self.space, self.values[i])

    @property
    def terminal(self) -> ScalarField:
        return self.slice(self.time.n_steps)

    def interp_row(self, i: int, x):
        return interp_linear(self.values[i], self.space, x)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))


def check_same_grids(*fields: SpaceTimeField) -> None:
    first = fields[0]
    for f in fields[1:]:
        if not first.same_grids(f):
            raise ValueError("fields are defined on different lattices")


@dataclass(frozen=True)
class GeneratorSpec:
    """Drivers of the BSDE: g for the dt term, optional f for the d<B> term.

    ``lipschitz=None`` means "use the forms' own constant"; a declared value
    smaller than the true constant is rejected.
    """

    form: GeneratorForm
    lipschitz: float | None = None
    f_form: GeneratorForm | None = None

    def __post_init__(self):
        if isinstance(self.form, str):
            object.__setattr__(self, "form", parse_form(self.form, "generator"))
        if isinstance(self.f_form, str):
            object.__setattr__(self, "f_form", parse_form(self.f_form, "generator"))
        true_l = self.form.lipschitz + (self.f_form.lipschitz if self.f_form else 0.0)
        if self.lipschitz is None:
            object.__setattr__(self, "lipschitz", true_l)
        elif not self.lipschitz >= true_l - 1e-15:
            raise ValueError(f"declared Lipschitz {self.lipschitz} below true constant {true_l}")

    @classmethod
    def zero(cls) -> "GeneratorSpec":
        return cls(GeneratorForm("zero"))

    def g(self, t, x, y, z):
        return self.form(t, x, y, z)

    def f(self, t, x, y, z):
        if self.f_form is None:
            return np.zeros(np.broadcast_shapes(np.shape(t), np.shape(x), np.shape(y), np.shape(z)))
        return self.f_form(t, x, y, z)

    @property
    def has_f(self) -> bool:
        return self.f_form is not None and not self.f_form.is_zero

    def describe(self) -> dict:
        out = {"g": self.form.describe(), "lipschitz": self.lipschitz}
        if self.f_form is not None:
            out["f"] = self.f_form.describe()
        return out


def generator_eval(gen: GeneratorSpec, which: str, t, x, y, z) -> float:
    if which == "g":
        fn = gen.form
    elif which == "f":
        if gen.f_form is None:
            raise ValueError("f driver requested but the generator has none")
        fn = gen.f_form
    else:
        raise ValueError(f"which must be 'g' or 'f', got {which!r}")
    return float(fn(t, x, y, z))


@dataclass(frozen=True)
class CoefficientSpec:
    """Coefficients of dX = b dt + h d<B> + sigma dB."""

    b: CoefFunction = CoefFunction("constant", (0.0,))
    h: CoefFunction = CoefFunction("constant", (0.0,))
    sigma: CoefFunction = CoefFunction("constant", (1.0,))

    def __post_init__(self):
        for name in ("b", "h", "sigma"):
            val = getattr(self, name)
            if isinstance(val, str):
                object.__setattr__(self, name, parse_form(val, "coefficient"))

    @property
    def lipschitz(self) -> float:
        return max(self.b.lipschitz, self.h.lipschitz, self.sigma.lipschitz)

    def describe(self) -> dict:
        return {"b": self.b.describe(), "h": self.h.describe(), "sigma": self.sigma.describe()}


# ---------------------------------------------------------------------------
# SpaceTimeField CSV


def _num(v: float) -> str:
    return format(float(v), ".16e")


def write_field_csv(field: SpaceTimeField, path, provenance: dict | None = None) -> None:
    """Write ``# t\\x, x_0, ...`` then one row per time node, 17 significant digits.

    Provenance, if given, goes on trailing ``#`` lines, which the reader skips.
    """
    lines = ["# t\\x, " + ", ".join(_num(x) for x in field.space.x)]
    for t, row in zip(field.time.t, field.values):
        lines.append(_num(t) + ", " + ", ".join(_num(v) for v in row))
    if provenance:
        for key in sorted(provenance):
            lines.append(f"# {key}: {provenance[key]}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_field_csv(path) -> SpaceTimeField:
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith("# t\\x,"):
        raise ValueError(f"{path}: missing '# t\\x, ...' header")
    xs = np.array([float(s) for s in text[0][len("# t\\x,"):].split(",")])
    rows = [ln for ln in text[1:] if ln.strip() and not ln.startswith("#")]
    data = np.array([[float(s) for s in ln.split(",")] for ln in rows])
    if data.ndim != 2 or data.shape[1] != xs.size + 1:
        raise ValueError(f"{path}: ragged rows")
    space = SpaceGrid(float(xs[0]), float(xs[-1]), xs.size)
    ts = data[:, 0]
    if ts[0] != 0.0:
        raise ValueError(f"{path}: time axis must start at 0")
    time = TimeGrid(float(ts[-1]), ts.size - 1)
    if not np.allclose(xs, space.x, rtol=0, atol=1e-9 * space.dx):
        raise ValueError(f"{path}: nonuniform spatial grid")
    if not np.allclose(ts, time.t, rtol=0, atol=1e-9 * time.dt):
        raise ValueError(f"{path}: nonuniform time grid")
    return SpaceTimeField(time, space, data[:, 1:])
