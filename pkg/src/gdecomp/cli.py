"""``gdecomp`` command line: one subcommand per pipeline.

Exit codes: 0 success or pass, 1 usage/config error, 2 verification failure,
3 indeterminate, 4 CFL (numerical precondition) failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .core import (
    CoefficientSpec,
    GCoefficients,
    GeneratorSpec,
    ScalarField,
    SpaceGrid,
    SpaceTimeField,
    TimeGrid,
    read_field_csv,
    write_field_csv,
)
from .decompose import NotSupermartingaleError, extract_decomposition, penalized_iterate
from .forms import parse_call, parse_form
from .gbsde import pathwise_K, solve_gbsde
from .pde import CFLError, PdeProblem, auto_time_grid, cfl_number, solve_terminal_pde
from .scenario import (
    RNG_SCHEME,
    UpperExpectationEstimator,
    VolatilityControl,
    feedback_control_from_field,
    quadratic_variation_check,
    sample_paths,
)
from .verify import check_equivalence, dyadic_pairs

EXIT_OK, EXIT_CONFIG, EXIT_FAIL, EXIT_INDETERMINATE, EXIT_CFL = 0, 1, 2, 3, 4
SCHEMA_VERSION = 1
SUBCOMMANDS = ("gexpect", "pde", "gbsde", "paths", "decompose", "verify")


def fmt_sci(v: float, digits: int = 3) -> str:
    """1.0 -> '1.000e0', 0.00012 -> '1.200e-4'."""
    if not math.isfinite(v):
        return str(v)
    mant, exp = f"{v:.{digits}e}".split("e")
    return f"{mant}e{int(exp)}"


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


class Run:
    """Objects built from a config plus the output-writing helpers."""

    def __init__(self, cfg: RunConfig, out: Path, threads: int = 1):
        self.cfg = cfg
        self.out = out
        self.threads = threads
        g = cfg.section("g")
        self.gc = GCoefficients(g["sigma_low"], g["sigma_high"])
        self.coeffs = CoefficientSpec(cfg.get("coeffs", "b"), cfg.get("coeffs", "h"), cfg.get("coeffs", "sigma"))
        self.gen = GeneratorSpec(cfg.get("generator", "g"), cfg.get("generator", "lipschitz"), cfg.get("generator", "f"))

    # grids -------------------------------------------------------------
    @property
    def space(self) -> SpaceGrid:
        gr = self.cfg.section("grid")
        return SpaceGrid(gr["x_min"], gr["x_max"], gr["nx"])

    def time(self, horizon: float | None = None, space: SpaceGrid | None = None) -> TimeGrid:
        gr = self.cfg.section("grid")
        horizon = gr["T"] if horizon is None else horizon
        if gr["nt"] == "auto":
            return auto_time_grid(horizon, self.gc, self.coeffs, space or self.space, multiple=8)
        return TimeGrid(horizon, gr["nt"])

    def terminal(self, space: SpaceGrid) -> ScalarField:
        text = self.cfg.section("problem")["terminal"]
        if text is None:
            raise ConfigError("[problem] terminal is required for this subcommand")
        return ScalarField.from_function(parse_form(text, "payoff"), space)

    def target(self) -> SpaceTimeField:
        text = self.cfg.section("problem")["target"]
        if text is None:
            raise ConfigError("[problem] target is required for this subcommand")
        if text.startswith("csv:"):
            fld = read_field_csv(text[4:])
            print(f"warning: CSV target {text[4:]} is accepted without growth/continuity checks", file=sys.stderr)
            return fld
        form = parse_form(text, "field")
        time = self.time()
        return SpaceTimeField.from_function(lambda t, x: form(t, x, time.horizon), time, self.space)

    def controls(self, n_steps: int, field: SpaceTimeField | None = None) -> list[VolatilityControl]:
        out = []
        for item in self.cfg.get("mc", "controls"):
            name, params = parse_call(item)
            if name == "low":
                out.append(VolatilityControl.constant(self.gc.sigma_low, self.gc))
            elif name == "high":
                out.append(VolatilityControl.constant(self.gc.sigma_high, self.gc))
            elif name == "constant":
                out.append(VolatilityControl.constant(params[0], self.gc))
            elif name == "alternating":
                out.append(VolatilityControl.alternating(self.gc, n_steps))
            elif name == "feedback":
                if field is None:
                    raise ConfigError("feedback control needs a solved field; add [problem] terminal")
                out.append(feedback_control_from_field(field, self.gc))
        return out

    # output ------------------------------------------------------------
    def provenance(self, space: SpaceGrid | None = None, time: TimeGrid | None = None, rng: bool = False) -> dict:
        out = {"config_sha256": self.cfg.digest(), "tool_version": f"gdecomp {__version__}"}
        if space is not None:
            out["space_grid"] = f"[{space.x_min!r}, {space.x_max!r}] nx={space.n_points}"
        if time is not None:
            out["time_grid"] = f"T={time.horizon!r} nt={time.n_steps}"
        if rng:
            out["rng_scheme"] = RNG_SCHEME
        return out

    def write_field(self, sub: str, name: str, field: SpaceTimeField) -> None:
        write_field_csv(field, self.out / f"{sub}_{name}.csv", self.provenance(field.space, field.time))

    def write_series(self, sub: str, name: str, time: TimeGrid, rows) -> None:
        """Per-path series: header '# control, path, t_0, ...', one row per path."""
        lines = ["# control, path, " + ", ".join(format(t, ".16e") for t in time.t)]
        for label, idx, vals in rows:
            lines.append(f"{label}, {int(idx)}, " + ", ".join(format(float(v), ".16e") for v in vals))
        for key, val in sorted(self.provenance(None, time, rng=True).items()):
            lines.append(f"# {key}: {val}")
        (self.out / f"{sub}_{name}.csv").write_text("\n".join(lines) + "\n")

    def write_report(self, sub: str, body: dict, space=None, time=None, rng=False) -> None:
        doc = {"schema": SCHEMA_VERSION, "subcommand": sub, "provenance": self.provenance(space, time, rng)}
        doc.update(body)
        text = json.dumps(_clean(doc), sort_keys=True, indent=2, allow_nan=False)
        (self.out / f"{sub}_report.json").write_text(text + "\n")


# ---------------------------------------------------------------------------
# pipelines; each returns (exit code, summary line)


def _gexpect(run: Run):
    run.cfg.require("grid", "problem")
    space = run.space
    prob = run.cfg.section("problem")
    t = prob["t"] if prob["t"] is not None else run.cfg.section("grid")["T"]
    x = prob["x"]
    time = run.time(t)
    phi = run.terminal(space)
    u = solve_terminal_pde(PdeProblem(run.gc, run.coeffs, GeneratorSpec.zero(), phi, time, space))
    value = float(u.interp_row(0, x))
    # discretization indicator: same problem on every other node
    coarse = SpaceGrid(space.x_min, space.x_max, (space.n_points + 1) // 2)
    ct = auto_time_grid(t, run.gc, run.coeffs, coarse)
    uc = solve_terminal_pde(PdeProblem(run.gc, run.coeffs, GeneratorSpec.zero(), ScalarField.from_function(parse_form(prob["terminal"], "payoff"), coarse), ct, coarse))
    tol = abs(value - float(uc.interp_row(0, x)))
    body = {"value": value, "scheme_error_indicator": tol, "t": t, "x": x, "cfl": cfl_number(run.gc, run.coeffs, time, space)}
    rng = False
    if run.cfg.has("mc"):
        mc = run.cfg.section("mc")
        mtime = TimeGrid(t, mc["nt"])
        est = UpperExpectationEstimator(
            run.controls(mtime.n_steps, u), run.coeffs, x, mtime, mc["n_paths"], mc["master_seed"], run.threads,
        )(parse_form(prob["terminal"], "payoff"))
        body["monte_carlo"] = est.to_dict(mc["master_seed"])
        body["monte_carlo"]["within_3_stderr_of_pde"] = bool(est.value <= value + 3.0 * est.stderr + tol)
        rng = True
    run.write_field("gexpect", "u", u)
    run.write_report("gexpect", body, space, time, rng)
    return EXIT_OK, f"{fmt_sci(value)} ± {fmt_sci(tol, 1)}"


def _pde(run: Run):
    run.cfg.require("grid", "problem")
    space = run.space
    time = run.time()
    u = solve_terminal_pde(PdeProblem(run.gc, run.coeffs, run.gen, run.terminal(space), time, space))
    x = run.cfg.section("problem")["x"]
    value = float(u.interp_row(0, x))
    run.write_field("pde", "u", u)
    run.write_report("pde", {"u0_at_x": value, "x": x, "cfl": cfl_number(run.gc, run.coeffs, time, space),
                             "generator": run.gen.describe(), "coeffs": run.coeffs.describe()}, space, time)
    return EXIT_OK, f"u(0, {x!r}) = {fmt_sci(value)}"


def _gbsde(run: Run):
    run.cfg.require("grid", "problem")
    space = run.space
    time = run.time()
    sol = solve_gbsde(run.coeffs, run.gen, run.gc, run.terminal(space), time, space)
    x = run.cfg.section("problem")["x"]
    body = {"Y0_at_x": float(sol.u.interp_row(0, x)), "x": x, "z_unreliable_columns": list(sol.unreliable_columns)}
    rng = False
    if run.cfg.has("mc"):
        mc = run.cfg.section("mc")
        stats = []
        for ctrl in run.controls(time.n_steps, sol.u):
            batch = sample_paths(ctrl, run.coeffs, mc["x0"], time, mc["master_seed"], mc["n_paths"])
            K = pathwise_K(sol, run.gen, batch)
            stats.append({"control": ctrl.describe(), "mean_K_T": float(K.terminal.mean()),
                          "max_abs_K_T": float(np.max(np.abs(K.terminal))),
                          "max_rise": K.max_rise, "max_positive_increment": K.max_step})
        body["K"] = {"per_control": stats, "n_paths": mc["n_paths"], "note": "checked on sampled controls only"}
        rng = True
    run.write_field("gbsde", "u", sol.u)
    run.write_field("gbsde", "z", sol.z)
    run.write_report("gbsde", body, space, time, rng)
    return EXIT_OK, f"Y_0 = {fmt_sci(body['Y0_at_x'])}"


def _paths(run: Run):
    run.cfg.require("mc")
    mc = run.cfg.section("mc")
    time = TimeGrid(run.cfg.get("grid", "T"), mc["nt"])
    field = None
    if "feedback" in mc["controls"]:
        run.cfg.require("grid", "problem")
        space = run.space
        field = solve_terminal_pde(PdeProblem(run.gc, run.coeffs, run.gen, run.terminal(space), run.time(), space))
    stats = []
    rows = {"B": [], "QV": [], "X": []}
    all_ok = True
    for ctrl in run.controls(time.n_steps, field):
        batch = sample_paths(ctrl, run.coeffs, mc["x0"], time, mc["master_seed"], mc["n_paths"])
        ok = all(quadratic_variation_check(batch.path(r)) for r in range(batch.n_paths))
        all_ok &= ok
        stats.append({"control": ctrl.describe(), "mean_B_T": float(batch.B[:, -1].mean()),
                      "var_B_T": float(batch.B[:, -1].var(ddof=1)), "mean_QV_T": float(batch.QV[:, -1].mean()),
                      "mean_X_T": float(batch.X[:, -1].mean()), "qv_within_band": ok})
        for r in range(min(mc["export_paths"], batch.n_paths)):
            for k in rows:
                rows[k].append((ctrl.describe(), batch.indices[r], getattr(batch, k)[r]))
    for k, rr in rows.items():
        run.write_series("paths", k, time, rr)
    run.write_report("paths", {"per_control": stats, "n_paths": mc["n_paths"], "seed": mc["master_seed"]}, None, time, True)
    return (EXIT_OK if all_ok else EXIT_FAIL), f"{mc['n_paths']} paths x {len(stats)} controls, <B> within band: {str(all_ok).lower()}"


def _decompose(run: Run):
    run.cfg.require("problem")
    u = run.target()
    pen = {k: run.cfg.get("penalty", k) for k in ("schedule", "gap_tol", "stop_rel_gap")}
    fields, rep = penalized_iterate(u, run.gen, run.coeffs, run.gc, pen["schedule"], stop_rel_gap=pen["stop_rel_gap"])
    body = {"penalization": rep.to_dict()}
    try:
        dec = extract_decomposition(u, run.gen, run.coeffs, run.gc, rep, gap_tol=pen["gap_tol"])
    except NotSupermartingaleError as e:
        body["refused"] = str(e)
        run.write_report("decompose", body, u.space, u.time)
        return EXIT_FAIL, f"refused: {e}"
    run.write_field("decompose", "v", fields[-1])
    run.write_field("decompose", "z", dec.z)
    run.write_field("decompose", "rho", dec.rho)
    run.write_field("decompose", "kappa", dec.kappa)
    body["envelope_violation"] = dec.envelope_violation()
    stats, rows = [], []
    mc = {k: run.cfg.get("mc", k) for k in ("n_paths", "master_seed", "x0", "export_paths")}
    for ctrl in run.controls(u.time.n_steps, u):
        batch = sample_paths(ctrl, run.coeffs, mc["x0"], u.time, mc["master_seed"], mc["n_paths"])
        A = dec.A(batch)
        stats.append({"control": ctrl.describe(), "min_increment": float(np.min(np.diff(A, axis=1))),
                      "mean_A_T": float(A[:, -1].mean()), "max_A_T": float(A[:, -1].max())})
        rows.extend((ctrl.describe(), batch.indices[r], A[r]) for r in range(min(mc["export_paths"], batch.n_paths)))
    body["A"] = {"per_control": stats, "n_paths": mc["n_paths"], "seed": mc["master_seed"]}
    run.write_series("decompose", "A", u.time, rows)
    run.write_report("decompose", body, u.space, u.time, True)
    return EXIT_OK, f"final gap {fmt_sci(rep.final_gap)} at n={rep.schedule[-1]:g}"


def _verify(run: Run):
    run.cfg.require("problem")
    u = run.target()
    pairs = run.cfg.get("verify", "pairs")
    if isinstance(pairs, str):
        _, p = parse_call(pairs)
        pairs = dyadic_pairs(u.time.horizon, int(p[0]))
    rep = check_equivalence(u, run.gen, run.coeffs, run.gc, pairs, run.cfg.get("verify", "tol"))
    body = {"equivalence": rep.to_dict()}
    run.write_report("verify", body, u.space, u.time)
    code = {"agree": EXIT_OK if rep.supermartingale == "pass" else EXIT_FAIL,
            "indeterminate": EXIT_INDETERMINATE, "disagree": EXIT_FAIL}[rep.status]
    line = f"verdict: {rep.verdict}"
    if rep.status == "agree" and rep.verdict == "pass":
        line += f" (no violation found at resolution nx={u.space.n_points}, nt={u.time.n_steps})"
    if rep.kink:
        line += " [kink flagged]"
    return code, line


PIPELINES = {"gexpect": _gexpect, "pde": _pde, "gbsde": _gbsde, "paths": _paths, "decompose": _decompose, "verify": _verify}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gdecomp", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"gdecomp {__version__}")
    sub = ap.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI or .json run configuration")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override a config value")
        p.add_argument("--out", help="output directory (default: [io] out)")
        p.add_argument("--threads", type=int, default=1, help="worker threads; never changes results")
        p.add_argument("--seed", type=int, help="master seed (overrides [mc] master_seed)")
    return ap


def run(subcommand: str, config_path=None, overrides=(), out=None, threads: int = 1, seed: int | None = None) -> int:
    overrides = list(overrides)
    if seed is not None:
        if not 0 <= seed < 1 << 64:
            print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
            return EXIT_CONFIG
        overrides.append(f"mc.master_seed={seed}")
    try:
        cfg = load_config(config_path, overrides)
        cfg.require("g")
        outdir = Path(out if out is not None else cfg.get("io", "out"))
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "config.ini").write_text(cfg.canonical())
        (outdir / "VERSION").write_text(f"gdecomp {__version__}\nnumpy {np.__version__}\n")
        code, line = PIPELINES[subcommand](Run(cfg, outdir, max(1, threads)))
    except CFLError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CFL
    except (ConfigError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    print(line)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return run(args.subcommand, args.config, args.set, args.out, args.threads, args.seed)


if __name__ == "__main__":
    sys.exit(main())
