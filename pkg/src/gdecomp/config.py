"""Run configuration: sectioned key = value files (INI) or the same schema as JSON.

Parsing fills defaults, normalizes every value (floats via ``repr``, forms
via their canonical text) and serializes to a canonical INI text whose
sha256 identifies the run.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

from .forms import parse_call, parse_form

SECTION_ORDER = ("g", "grid", "generator", "coeffs", "problem", "penalty", "mc", "verify", "io")


class ConfigError(ValueError):
    pass


def _float(v) -> float:
    x = float(v)
    if not math.isfinite(x):
        raise ValueError(f"non-finite value {v!r}")
    return x


def _int(v) -> int:
    try:
        return int(str(v).strip())
    except ValueError:
        pass
    f = float(v)
    if f != int(f):
        raise ValueError(f"expected an integer, got {v!r}")
    return int(f)


def _auto_int(v):
    return "auto" if str(v).strip().lower() == "auto" else _int(v)


def _opt_float(v):
    return None if str(v).strip().lower() in ("", "none", "auto") else _float(v)


def _form(kind):
    def conv(v):
        return parse_form(str(v), kind).describe()
    return conv


def _opt_form(kind):
    def conv(v):
        s = str(v).strip()
        return None if s.lower() in ("", "none") else parse_form(s, kind).describe()
    return conv


def _target(v):
    s = str(v).strip()
    if s.lower() in ("", "none"):
        return None
    if s.startswith("csv:"):
        return s
    return parse_form(s, "field").describe()


def _schedule(v) -> list[float]:
    """``'1,2,4'`` or ``'geometric(base, max_power[, start_power])'``."""
    s = str(v).strip()
    if s.startswith("geometric"):
        _, p = parse_call(s)
        if len(p) not in (2, 3):
            raise ValueError("geometric(base, max_power[, start_power])")
        base, kmax = int(p[0]), int(p[1])
        k0 = int(p[2]) if len(p) == 3 else 0
        return [float(base**k) for k in range(k0, kmax + 1)]
    vals = [_float(x) for x in s.replace(";", ",").split(",") if x.strip()]
    if not vals:
        raise ValueError("empty schedule")
    return vals


def _controls(v) -> list[str]:
    out = []
    for item in _split_top(str(v)):
        name, params = parse_call(item)
        if name in ("low", "high", "alternating", "feedback") and not params:
            out.append(name)
        elif name == "constant" and len(params) == 1:
            out.append(f"constant({params[0]!r})")
        else:
            raise ValueError(f"unknown control {item!r}; use low, high, alternating, feedback or constant(c)")
    if not out:
        raise ValueError("empty control list")
    return out


def _split_top(s: str) -> list[str]:
    """Split on commas that are not inside parentheses."""
    parts, depth, cur = [], 0, []
    for ch in s:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    if "".join(cur).strip():
        parts.append("".join(cur).strip())
    return [p for p in parts if p]


def _pairs(v):
    """``'dyadic(3)'`` or ``'0:0.5, 0.25:1'``."""
    s = str(v).strip()
    if s.startswith("dyadic"):
        _, p = parse_call(s)
        return f"dyadic({int(p[0]) if p else 3})"
    out = []
    for item in s.replace(";", ",").split(","):
        if item.strip():
            a, b = item.split(":")
            out.append((_float(a), _float(b)))
    if not out:
        raise ValueError("empty pair list")
    return out


def _str(v) -> str:
    return str(v).strip()


_R = object()  # marker: required key

SCHEMA = {
    "g": {"sigma_low": (_float, _R), "sigma_high": (_float, _R)},
    "grid": {
        "x_min": (_float, -8.0), "x_max": (_float, 8.0), "nx": (_int, 401),
        "T": (_float, 1.0), "nt": (_auto_int, "auto"),
    },
    "generator": {
        "g": (_form("generator"), "zero"), "f": (_opt_form("generator"), None),
        "lipschitz": (_opt_float, None),
    },
    "coeffs": {
        "b": (_form("coefficient"), "constant(0.0)"), "h": (_form("coefficient"), "constant(0.0)"),
        "sigma": (_form("coefficient"), "constant(1.0)"),
    },
    "problem": {
        "terminal": (_opt_form("payoff"), None), "target": (_target, None),
        "t": (_opt_float, None), "x": (_float, 0.0),
    },
    "penalty": {
        "schedule": (_schedule, "geometric(2,12)"), "gap_tol": (_opt_float, None),
        "stop_rel_gap": (_opt_float, None),
    },
    "mc": {
        "n_paths": (_int, 1000), "master_seed": (_int, 0),
        "controls": (_controls, "low, high, alternating"), "nt": (_int, 64),
        "x0": (_float, 0.0), "export_paths": (_int, 10),
    },
    "verify": {"pairs": (_pairs, "dyadic(3)"), "tol": (_opt_float, None)},
    "io": {"out": (_str, "out")},
}


@dataclass(frozen=True)
class RunConfig:
    sections: dict  # section -> {key: normalized value}; only sections that were given

    def has(self, section: str) -> bool:
        return section in self.sections

    def section(self, name: str) -> dict:
        if name not in self.sections:
            raise ConfigError(f"missing [{name}] section")
        return self.sections[name]

    def get(self, section: str, key: str):
        """Value from a section, falling back to the schema default if absent."""
        if section in self.sections:
            return self.sections[section][key]
        default = SCHEMA[section][key][1]
        if default is _R:
            raise ConfigError(f"missing [{section}] section")
        return SCHEMA[section][key][0](default) if default is not None else None

    def require(self, *names: str) -> None:
        for n in names:
            self.section(n)

    def canonical(self) -> str:
        lines = []
        for sec in SECTION_ORDER:
            if sec not in self.sections:
                continue
            lines.append(f"[{sec}]")
            for key in sorted(self.sections[sec]):
                lines.append(f"{key} = {_render(self.sections[sec][key])}")
            lines.append("")
        return "\n".join(lines)

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def to_json(self) -> dict:
        return {s: dict(self.sections[s]) for s in SECTION_ORDER if s in self.sections}


def _render(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        if v and isinstance(v[0], tuple):
            return ", ".join(f"{a!r}:{b!r}" for a, b in v)
        return ", ".join(_render(x) for x in v)
    return str(v)


def _normalize(raw: dict) -> RunConfig:
    out = {}
    for sec, items in raw.items():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
        schema = SCHEMA[sec]
        vals = {}
        for key, val in items.items():
            if key not in schema:
                raise ConfigError(f"unknown key {key!r} in [{sec}]")
            try:
                vals[key] = schema[key][0](val)
            except (ValueError, TypeError) as e:
                raise ConfigError(f"[{sec}] {key}: {e}") from None
        for key, (conv, default) in schema.items():
            if key in vals:
                continue
            if default is _R:
                raise ConfigError(f"[{sec}] missing required key {key!r}")
            vals[key] = conv(default) if default is not None else None
        out[sec] = vals
    return RunConfig(out)


def _read_raw(path) -> dict:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    if p.suffix.lower() == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: {e}") from None
        if not isinstance(data, dict) or not all(isinstance(v, dict) for v in data.values()):
            raise ConfigError(f"{path}: expected an object of sections")
        return {s: {k: _json_value(v) for k, v in items.items()} for s, items in data.items()}
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as e:
        raise ConfigError(str(e)) from None
    return {s: dict(cp[s]) for s in cp.sections()}


def _json_value(v):
    if isinstance(v, list):
        if v and isinstance(v[0], list):
            return ", ".join(f"{a}:{b}" for a, b in v)
        return ", ".join(str(x) for x in v)
    return "none" if v is None else str(v)


def apply_overrides(raw: dict, overrides) -> dict:
    raw = {s: dict(items) for s, items in raw.items()}
    for ov in overrides or ():
        key, sep, value = ov.partition("=")
        sec, dot, name = key.strip().partition(".")
        if not sep or not dot or not name:
            raise ConfigError(f"override {ov!r} must look like section.key=value")
        raw.setdefault(sec, {})[name] = value.strip()
    return raw


def load_config(path=None, overrides=()) -> RunConfig:
    raw = _read_raw(path) if path is not None else {}
    return _normalize(apply_overrides(raw, overrides))


def parse_config_text(text: str, overrides=()) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(str(e)) from None
    return _normalize(apply_overrides({s: dict(cp[s]) for s in cp.sections()}, overrides))
