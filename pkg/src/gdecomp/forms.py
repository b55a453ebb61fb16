"""Closed registry of named parametric functions.

Every user-facing function in a run (terminal payoffs, SDE coefficients,
BSDE drivers, analytic target fields) is one of the forms below, written
as ``name(p1, p2, ...)`` in configs. Each form evaluates vectorized over
numpy arrays and knows its own Lipschitz constant where that makes sense.
"""

from __future__ import annotations

import math
import re

import numpy as np

_FORM_RE = re.compile(r"^\s*([a-z_][a-z0-9_]*)\s*(?:\((.*)\))?\s*$")


def parse_call(text: str) -> tuple[str, tuple[float, ...]]:
    """Split ``'name(1, -2.5)'`` into ``('name', (1.0, -2.5))``."""
    m = _FORM_RE.match(text)
    if m is None:
        raise ValueError(f"cannot parse form {text!r}; expected name(args)")
    name, args = m.group(1), m.group(2)
    if args is None or not args.strip():
        return name, ()
    try:
        params = tuple(float(a) for a in args.split(","))
    except ValueError:
        raise ValueError(f"non-numeric argument in form {text!r}") from None
    if not all(math.isfinite(p) for p in params):
        raise ValueError(f"non-finite argument in form {text!r}")
    return name, params


def _fmt(params) -> str:
    return ",".join(repr(float(p)) for p in params)


def _table(params, what):
    if len(params) < 4 or len(params) % 2:
        raise ValueError(f"{what} table needs pairs k0,v0,k1,v1,... (at least two)")
    knots = np.asarray(params[0::2], dtype=float)
    vals = np.asarray(params[1::2], dtype=float)
    if np.any(np.diff(knots) <= 0):
        raise ValueError(f"{what} table knots must be strictly increasing")
    return knots, vals


class Form:
    """Base for registry forms: a name, numeric parameters, canonical text."""

    kind = "form"

    def __init__(self, name: str, params=()):
        self.name = name
        self.params = tuple(float(p) for p in params)

    def describe(self) -> str:
        if not self.params:
            return self.name
        return f"{self.name}({_fmt(self.params)})"

    def __repr__(self):
        return f"<{self.kind} {self.describe()}>"

    def __eq__(self, other):
        return type(self) is type(other) and self.describe() == other.describe()

    def __hash__(self):
        return hash((type(self).__name__, self.describe()))


# ---------------------------------------------------------------------------
# terminal payoffs phi(x)


class Payoff(Form):
    kind = "payoff"

    def __init__(self, name, params=()):
        super().__init__(name, params)
        p = self.params
        if name == "constant":
            if len(p) != 1:
                raise ValueError("constant(c) takes one parameter")
        elif name == "poly":
            if not p:
                raise ValueError("poly(c0, c1, ...) needs coefficients")
        elif name in ("abs", "pos", "neg", "cos", "gauss"):
            if len(p) > 1:
                raise ValueError(f"{name} takes at most one parameter")
        elif name == "table":
            self._knots, self._vals = _table(p, "payoff")
        else:
            raise ValueError(f"unknown payoff form {name!r}")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        p = self.params
        name = self.name
        if name == "constant":
            return np.full_like(x, p[0])
        if name == "poly":
            # Horner, highest degree first
            out = np.zeros_like(x)
            for c in reversed(p):
                out = out * x + c
            return out
        if name == "abs":
            return (p[0] if p else 1.0) * np.abs(x)
        if name == "pos":
            return np.maximum(x - (p[0] if p else 0.0), 0.0)
        if name == "neg":
            return np.maximum((p[0] if p else 0.0) - x, 0.0)
        if name == "cos":
            return np.cos((p[0] if p else 1.0) * x)
        if name == "gauss":
            w = p[0] if p else 1.0
            return np.exp(-0.5 * (x / w) ** 2)
        return np.interp(x, self._knots, self._vals)


# ---------------------------------------------------------------------------
# SDE coefficients b, h, sigma as functions of (t, x)


class CoefFunction(Form):
    kind = "coefficient"

    def __init__(self, name, params=()):
        super().__init__(name, params)
        p = self.params
        if name == "constant":
            if len(p) != 1:
                raise ValueError("constant(c) takes one parameter")
        elif name == "linear":
            if len(p) != 2:
                raise ValueError("linear(alpha, beta) takes two parameters")
        elif name == "table":
            self._knots, self._vals = _table(p, "coefficient")
        else:
            raise ValueError(f"unknown coefficient form {name!r}")

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        shape = np.broadcast_shapes(t.shape, x.shape)
        p = self.params
        if self.name == "constant":
            return np.full(shape, p[0])
        if self.name == "linear":
            return np.broadcast_to(p[0] + p[1] * x, shape).astype(float)
        return np.broadcast_to(np.interp(x, self._knots, self._vals), shape).astype(float)

    @property
    def lipschitz(self) -> float:
        if self.name == "constant":
            return 0.0
        if self.name == "linear":
            return abs(self.params[1])
        return float(np.max(np.abs(np.diff(self._vals) / np.diff(self._knots))))

    @property
    def is_zero(self) -> bool:
        return self.name == "constant" and self.params[0] == 0.0


# ---------------------------------------------------------------------------
# BSDE drivers g(t, x, y, z)


class GeneratorForm(Form):
    kind = "generator"

    def __init__(self, name, params=()):
        super().__init__(name, params)
        p = self.params
        if name == "zero":
            if p:
                raise ValueError("zero takes no parameters")
        elif name == "affine":
            if len(p) != 3:
                raise ValueError("affine(a, b, c) takes three parameters")
        elif name == "abs_z":
            if len(p) != 1:
                raise ValueError("abs_z(mu) takes one parameter")
        elif name == "table":
            # piecewise-linear in z, flat outside the knots
            self._knots, self._vals = _table(p, "generator")
        else:
            raise ValueError(f"unknown generator form {name!r}")

    def __call__(self, t, x, y, z):
        y = np.asarray(y, dtype=float)
        z = np.asarray(z, dtype=float)
        shape = np.broadcast_shapes(np.shape(t), np.shape(x), y.shape, z.shape)
        p = self.params
        if self.name == "zero":
            return np.zeros(shape)
        if self.name == "affine":
            return np.broadcast_to(p[0] * y + p[1] * z + p[2], shape).astype(float)
        if self.name == "abs_z":
            return np.broadcast_to(p[0] * np.abs(z), shape).astype(float)
        return np.broadcast_to(np.interp(z, self._knots, self._vals), shape).astype(float)

    @property
    def lipschitz(self) -> float:
        p = self.params
        if self.name == "zero":
            return 0.0
        if self.name == "affine":
            return max(abs(p[0]), abs(p[1]))
        if self.name == "abs_z":
            return abs(p[0])
        return float(np.max(np.abs(np.diff(self._vals) / np.diff(self._knots))))

    @property
    def is_zero(self) -> bool:
        return self.name == "zero"


# ---------------------------------------------------------------------------
# analytic candidate fields u(t, x) on [0, T]


class FieldForm(Form):
    """``quadratic(a, c, d)``: a*x^2 + c*(T - t) + d;  ``abs(s)``: s*|x|."""

    kind = "field"

    def __init__(self, name, params=()):
        super().__init__(name, params)
        p = self.params
        if name == "quadratic":
            if len(p) != 3:
                raise ValueError("quadratic(a, c, d) takes three parameters")
        elif name == "abs":
            if len(p) > 1:
                raise ValueError("abs takes at most one parameter")
        else:
            raise ValueError(f"unknown field form {name!r}")

    def __call__(self, t, x, horizon):
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        p = self.params
        if self.name == "quadratic":
            return p[0] * x**2 + p[1] * (horizon - t) + p[2]
        return (p[0] if p else 1.0) * np.abs(x) + 0.0 * t

    @property
    def smooth(self) -> bool:
        return self.name != "abs"


_KINDS = {
    "payoff": Payoff,
    "coefficient": CoefFunction,
    "generator": GeneratorForm,
    "field": FieldForm,
}


def parse_form(text: str, kind: str) -> Form:
    name, params = parse_call(text)
    try:
        cls = _KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown form kind {kind!r}") from None
    return cls(name, params)
