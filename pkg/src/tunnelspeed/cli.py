"""Command-line interface.

Every subcommand writes ``<command>.summary.json`` plus its tables into the
output directory (``--out``, else ``$TUNNELSPEED_OUTPUT_DIR``, else ``.``).

Exit codes: 0 success, 1 physics-level error, 2 usage error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import analysis, analytic as an, bbm, guidance
from .errors import InvalidRegime, TunnelSpeedError
from .io import (
    COMMANDS,
    OUTPUT_DIR_ENV,
    RunConfig,
    RunSummary,
    default_output_dir,
    emit_results,
    load_config_file,
    read_csv_columns,
)

PARAM_FLAGS = ("E", "V0", "J", "m", "hbar")

STEP_DEFAULTS = {"E": 0.5, "V0": 1.0, "J": 0.0, "m": 1.0, "hbar": 1.0}
# |delta| = 101 hbar J: deep in the asymptotic regime
WAVEGUIDE_DEFAULTS = {"E": 0.5, "V0": 0.0, "J": 0.005, "m": 1.0, "hbar": 1.0}

STEP_COMMANDS = {"solve-step", "bbm-run", "dwell", "sweep"}

OPTION_DEFAULTS: dict[str, dict] = {
    "solve-waveguide": {"x_max": 10.0, "n_points": 201},
    "solve-step": {"x_min": None, "x_max": None, "n_points": 201},
    "population": {"x_max": 10.0, "n_points": 201},
    "fit-speed": {
        "input": None,
        "synthetic": "exact",
        "x_max": None,
        "n_points": 50,
        "counts": 0,
        "max_scaled_x": 0.1,
        "p_cutoff": 0.05,
        "seed": bbm.DEFAULT_SEED,
    },
    "trajectory": {"system": "step", "x0": 0.5, "t_end": 10.0, "k_add": 0.0, "rtol": 1e-9, "atol": 1e-12},
    "bbm-run": {
        "n": 100_000,
        "seed": bbm.DEFAULT_SEED,
        "left_extent": None,
        "bins": 200,
        "bin_range": None,
        "dump_trajectories": 0,
    },
    "dwell": {},
    "invariance": {"alpha": [0.1, 0.5, 2.0, 10.0], "mode": "both", "form": "asymptotic", "x_max": 10.0, "n_points": 100},
    "sweep": {"axes": None, "mc_n": 0, "seed": bbm.DEFAULT_SEED},
}

DEFAULT_SWEEP_AXES = {"E_over_V0": [float(v) for v in np.geomspace(0.01, 0.99, 50)]}


@dataclass
class Runtime:
    quiet: bool = False
    workers: int = 1
    timing: bool = False


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# parsing
# --------------------------------------------------------------------------


def _values_spec(text: str) -> list[float]:
    """``a:b:n`` for ``n`` evenly spaced values, ``log:a:b:n`` for geometric, else a comma list."""
    parts = text.split(":")
    try:
        if parts[0] == "log" and len(parts) == 4:
            return [float(v) for v in np.geomspace(float(parts[1]), float(parts[2]), int(parts[3]))]
        if len(parts) == 3:
            return [float(v) for v in np.linspace(float(parts[0]), float(parts[1]), int(parts[2]))]
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad value spec {text!r}: {exc}") from None


def _axis(text: str):
    name, sep, spec = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected NAME=SPEC, got {text!r}")
    return name.strip(), _values_spec(spec)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tunnelspeed",
        description="Particle speed in evanescent regimes: analytic solutions, guidance laws, BBM Monte Carlo.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__import__('tunnelspeed').__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("physical parameters (natural units by default)")
    for name in PARAM_FLAGS:
        g.add_argument(f"--{name}", type=float, default=None)
    o = common.add_argument_group("output")
    o.add_argument("--config", help="JSON config file (a previous *.summary.json also works); flags override it")
    o.add_argument("--format", choices=("csv", "json"), default=None, help="table format (default csv)")
    o.add_argument("--out", dest="output_dir", default=None, help=f"output directory (default ${OUTPUT_DIR_ENV} or .)")
    o.add_argument("--quiet", action="store_true", help="suppress progress on stderr")
    o.add_argument("--timing", action="store_true", help="record wall time in the summary (breaks byte determinism)")

    helps = {
        "solve-waveguide": "wavenumbers and fields of the coupled waveguides",
        "solve-step": "reflecting-step coefficients and density",
        "population": "exact and asymptotic relative population vs x",
        "fit-speed": "extract v from quadratic population growth",
        "trajectory": "integrate the standard guiding equation",
        "bbm-run": "bidirectional Bohmian Monte Carlo at the step",
        "dwell": "QM and BBM dwell times at the step",
        "invariance": "dilation invariance of the relative population",
        "sweep": "dwell-time identity over a parameter grid",
    }
    subs = {c: sub.add_parser(c, parents=[common], help=helps[c], description=helps[c]) for c in COMMANDS}

    def grid_args(p):
        p.add_argument("--x-max", type=float, default=None)
        p.add_argument("--n-points", type=int, default=None)

    grid_args(subs["solve-waveguide"])
    grid_args(subs["population"])
    grid_args(subs["solve-step"])
    subs["solve-step"].add_argument("--x-min", type=float, default=None)

    p = subs["fit-speed"]
    p.add_argument("--input", default=None, help="CSV with columns x,p_a; otherwise synthesize from the parameters")
    p.add_argument("--synthetic", choices=("exact", "asymptotic"), default=None)
    grid_args(p)
    p.add_argument("--counts", type=int, default=None, help="binomial counts per point (0: noiseless)")
    p.add_argument("--max-scaled-x", type=float, default=None, help="fit window bound on J x / v (default 0.1)")
    p.add_argument("--p-cutoff", type=float, default=None)
    p.add_argument("--seed", type=int, default=None, help=f"noise seed (default {bbm.DEFAULT_SEED})")

    p = subs["trajectory"]
    p.add_argument("--system", choices=("step", "waveguide", "plane"), default=None)
    p.add_argument("--x0", type=float, default=None)
    p.add_argument("--t-end", type=float, default=None)
    p.add_argument("--k-add", type=float, default=None, help="constant current added to j")
    p.add_argument("--rtol", type=float, default=None)
    p.add_argument("--atol", type=float, default=None)

    p = subs["bbm-run"]
    p.add_argument("--n", type=int, default=None, help="number of particles (default 100000)")
    p.add_argument("--seed", type=int, default=None, help=f"run seed (default {bbm.DEFAULT_SEED})")
    p.add_argument("--left-extent", type=float, default=None, help="injection distance L (default pi/k)")
    p.add_argument("--bins", type=int, default=None)
    p.add_argument("--bin-range", type=float, default=None, help="histogram range (default 5/(2 kappa))")
    p.add_argument("--dump-trajectories", type=int, default=None, help=f"dump the first N lifecycles (N <= {bbm.TRAJECTORY_CAP})")
    p.add_argument("--workers", type=int, default=1, help="worker processes; results do not depend on it")

    p = subs["invariance"]
    p.add_argument("--alpha", type=_values_spec, default=None, help="comma list or a:b:n")
    p.add_argument("--mode", choices=("space", "time", "both"), default=None)
    p.add_argument("--form", choices=("asymptotic", "exact"), default=None)
    grid_args(p)

    p = subs["sweep"]
    p.add_argument("--E-over-V0", dest="e_over_v0", type=_values_spec, default=None,
                   help="E/V0 values: comma list, a:b:n or log:a:b:n (default log:0.01:0.99:50)")
    p.add_argument("--axis", type=_axis, action="append", default=None, help="extra axis NAME=SPEC, repeatable")
    p.add_argument("--mc-n", type=int, default=None, help="Monte Carlo particles per row (0: analytic only)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    return parser


def _validate(cfg: RunConfig) -> None:
    try:
        params = an.PhysicalParams(**cfg.params)
    except ValueError as exc:
        name = str(exc).split()[0]
        raise UsageError(f"argument --{name}: {exc}") from None
    opts = cfg.options
    if cfg.command in STEP_COMMANDS - {"sweep"} or (cfg.command == "trajectory" and opts["system"] == "step"):
        try:
            an.step_solution(params)
        except InvalidRegime as exc:
            flag = "--J" if params.J != 0 else "--E"
            raise UsageError(f"argument {flag}: InvalidRegime: {exc}") from None
    if cfg.command == "bbm-run":
        if opts["n"] < 1:
            raise UsageError("argument --n: must be >= 1")
        if not 0 <= opts["seed"] < 2**64:
            raise UsageError("argument --seed: must fit in 64 bits")
        if opts["dump_trajectories"] > bbm.TRAJECTORY_CAP:
            raise UsageError(f"argument --dump-trajectories: at most {bbm.TRAJECTORY_CAP}")
    if cfg.command == "fit-speed" and opts["input"] is None and params.J <= 0:
        raise UsageError("argument --J: synthetic fit data needs J > 0")
    if cfg.command == "invariance" and any(a <= 0 for a in opts["alpha"]):
        raise UsageError("argument --alpha: scales must be > 0")


def parse(argv=None) -> tuple[RunConfig, Runtime]:
    parser = build_parser()
    ns = parser.parse_args(argv)
    command = ns.command
    file_cfg = {}
    if ns.config:
        try:
            file_cfg = load_config_file(ns.config)
        except (OSError, ValueError) as exc:
            parser.error(f"argument --config: cannot read {ns.config}: {exc}")
        if file_cfg.get("command", command) != command:
            parser.error(f"argument --config: file is for {file_cfg['command']!r}, not {command!r}")

    base = STEP_DEFAULTS if command in STEP_COMMANDS or command == "trajectory" else WAVEGUIDE_DEFAULTS
    params = {**base, **file_cfg.get("params", {})}
    for name in PARAM_FLAGS:
        if getattr(ns, name) is not None:
            params[name] = getattr(ns, name)

    options = {**OPTION_DEFAULTS[command], **file_cfg.get("options", {})}
    unknown = set(options) - set(OPTION_DEFAULTS[command])
    if unknown:
        parser.error(f"argument --config: unknown option(s) {sorted(unknown)} for {command}")
    for key in OPTION_DEFAULTS[command]:
        if key == "axes":
            continue
        value = getattr(ns, key, None)
        if value is not None:
            options[key] = value
    if command == "sweep":
        axes = dict(options["axes"] or {})
        if ns.e_over_v0 is not None:
            axes["E_over_V0"] = ns.e_over_v0
        for name, values in ns.axis or []:
            axes[name] = values
        options["axes"] = axes or dict(DEFAULT_SWEEP_AXES)

    cfg = RunConfig(
        command=command,
        params=params,
        options=options,
        format=ns.format or file_cfg.get("format", "csv"),
        output_dir=ns.output_dir or file_cfg.get("output_dir") or default_output_dir(),
    )
    try:
        _validate(cfg)
    except UsageError as exc:
        parser.error(str(exc))
    return cfg, Runtime(quiet=ns.quiet, workers=getattr(ns, "workers", 1), timing=ns.timing)


def parse_config(argv=None) -> RunConfig:
    return parse(argv)[0]


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def _xs(lo, hi, n):
    return np.linspace(lo, hi, n)


def cmd_solve_waveguide(cfg, params, rt):
    sol = an.compute_wavenumbers(params)
    xs = _xs(0.0, cfg.options["x_max"], cfg.options["n_points"])
    psi_m, psi_a = an.waveguide_fields(sol, xs)
    results = {
        "delta": params.delta,
        "k0": sol.k0,
        "k1": sol.k1,
        "k2": sol.k2,
        "v": an.characteristic_speed(params),
    }
    rows = zip(xs, psi_m.real, psi_m.imag, psi_a.real, psi_a.imag)
    return results, {"fields": (["x", "psi_m_re", "psi_m_im", "psi_a_re", "psi_a_im"], list(rows))}


def cmd_solve_step(cfg, params, rt):
    sol = an.step_solution(params)
    o = cfg.options
    lo = -sol.period if o["x_min"] is None else o["x_min"]
    hi = 5 / (2 * sol.kappa) if o["x_max"] is None else o["x_max"]
    xs = _xs(lo, hi, o["n_points"])
    results = {
        "k": sol.k,
        "kappa": sol.kappa,
        "r": sol.r,
        "t": sol.t,
        "t_abs2": sol.t_abs2,
        "j_in": sol.j_in,
        "v_R": sol.v_R,
        "a": bbm.entry_probability(sol),
    }
    return results, {"density": (["x", "rho"], list(zip(xs, an.step_density(sol, xs))))}


def cmd_population(cfg, params, rt):
    sol = an.compute_wavenumbers(params)
    xs = _xs(0.0, cfg.options["x_max"], cfg.options["n_points"])
    exact = an.relative_population_exact(sol, xs)
    v = an.characteristic_speed(params)
    asym = an.relative_population_asymptotic(params.J, v, xs, 1 if params.delta > 0 else -1) if v > 0 else np.full_like(xs, np.nan)
    results = {"delta": params.delta, "v": v, "J": params.J}
    return results, {"population": (["x", "p_a_exact", "p_a_asymptotic"], list(zip(xs, exact, asym)))}


def cmd_fit_speed(cfg, params, rt):
    o = cfg.options
    if o["input"] is not None:
        try:
            samples = np.asarray(read_csv_columns(o["input"], ["x", "p_a"]))
        except ValueError as exc:
            raise UsageError(f"argument --input: {exc}") from None
        v_true = None
    else:
        v_true = an.characteristic_speed(params)
        x_max = o["x_max"] if o["x_max"] is not None else o["max_scaled_x"] * v_true / params.J
        xs = _xs(x_max / o["n_points"], x_max, o["n_points"])
        samples = analysis.population_samples(params, xs, o["synthetic"])
        if o["counts"] > 0:
            rng = np.random.default_rng(o["seed"])
            samples[:, 1] = analysis.binomial_noise(samples[:, 1], o["counts"], rng)
    fit = analysis.fit_speed(samples, params.J, o["max_scaled_x"], o["p_cutoff"])
    results = fit.as_dict()
    if v_true is not None:
        results["v_true"] = v_true
        results["relative_error"] = abs(fit.v_hat - v_true) / v_true
    rows = [(x, p, fit.j_over_v**2 * x * x) for x, p in samples]
    return results, {"samples": (["x", "p_a", "p_a_fit"], rows)}


def cmd_trajectory(cfg, params, rt):
    o = cfg.options
    if o["system"] == "step":
        field = guidance.step_velocity_field(an.step_solution(params), k_add=o["k_add"])
    elif o["system"] == "waveguide":
        field = guidance.waveguide_velocity_field(an.compute_wavenumbers(params))
    else:
        k = math.sqrt(2 * params.m * params.E) / params.hbar
        field = guidance.scattering_velocity_field(k, 0.0, params, k_add=o["k_add"])
    sc = guidance.StepControl(rtol=o["rtol"], atol=o["atol"])
    rec = guidance.integrate_trajectory(field, o["x0"], o["t_end"], sc)
    results = {
        "system": o["system"],
        "field": field.description,
        "terminated": rec.terminated,
        "t_final": rec.t[-1],
        "x_final": rec.x[-1],
        "n_samples": len(rec.t),
    }
    return results, {"trajectory": (["t", "x"], rec.samples)}


def cmd_bbm_run(cfg, params, rt):
    o = cfg.options
    config = bbm.BbmConfig(
        params=params,
        n_particles=o["n"],
        seed=o["seed"],
        left_extent=o["left_extent"],
        histogram_bins=o["bins"],
        bin_range=o["bin_range"],
    )
    sol = an.step_solution(params)
    est = bbm.run_ensemble(config, workers=rt.workers)
    results = {
        **est.summary(),
        "a_analytic": bbm.entry_probability(sol),
        "tau_qm": analysis.qm_dwell_time(sol),
        "tau_bbm_analytic": bbm.bbm_dwell_analytic(sol),
        "mean_turning_point_analytic": 1 / (2 * sol.kappa),
        "seed": config.seed,
    }
    e = est.bin_edges
    kappa = sol.kappa
    rho_ref = sol.t_abs2 * (np.exp(-2 * kappa * e[:-1]) - np.exp(-2 * kappa * e[1:])) / (2 * kappa * np.diff(e))
    rows = list(zip(e[:-1], e[1:], est.density_hist_plus, est.density_hist_minus,
                    est.density_stderr_plus, est.density_stderr_minus, rho_ref))
    tables = {"histogram": (["x_lo", "x_hi", "rho_plus", "rho_minus", "stderr_plus", "stderr_minus", "rho_qm"], rows)}
    if o["dump_trajectories"] > 0:
        traj = bbm.dump_trajectories(config, o["dump_trajectories"])
        tables["trajectories"] = (["particle", "t", "x", "sigma", "event"], traj)
    return results, tables


def cmd_dwell(cfg, params, rt):
    sol = an.step_solution(params)
    tau_qm = analysis.qm_dwell_time(sol)
    tau_bbm = bbm.bbm_dwell_analytic(sol)
    return {
        "tau_qm": tau_qm,
        "tau_qm_quadrature": analysis.qm_dwell_time_quadrature(sol),
        "tau_bbm": tau_bbm,
        "relative_difference": abs(tau_qm - tau_bbm) / tau_qm,
        "a": bbm.entry_probability(sol),
        "kappa": sol.kappa,
        "v_R": sol.v_R,
        "j_in": sol.j_in,
    }, {}


def cmd_invariance(cfg, params, rt):
    o = cfg.options
    xs = _xs(0.0, o["x_max"], o["n_points"])
    modes = ("space", "time") if o["mode"] == "both" else (o["mode"],)
    reports = [analysis.invariance_check(params, a, m, xs, form=o["form"]) for m in modes for a in o["alpha"]]
    cols = ["mode", "alpha", "max_abs_deviation", "v_ratio", "v_expected_ratio", "pass"]
    rows = [[r.as_dict()[c] for c in cols] for r in reports]
    return {"all_pass": all(r.passed for r in reports), "n_checks": len(reports)}, {"reports": (cols, rows)}


def cmd_sweep(cfg, params, rt):
    o = cfg.options
    grid = analysis.expand_grid(params, o["axes"])
    mc = bbm.BbmConfig(params=params, n_particles=o["mc_n"], seed=o["seed"]) if o["mc_n"] > 0 else None
    rows = analysis.sweep(grid, mc)
    ok = [r for r in rows if not r["error"]]
    worst = max((r["tau_rel_diff"] for r in ok), default=0.0)
    cols = analysis.SWEEP_COLUMNS
    return {"n_rows": len(rows), "n_errors": len(rows) - len(ok), "max_tau_rel_diff": worst}, {
        "rows": (cols, [[r[c] for c in cols] for r in rows])
    }


HANDLERS = {
    "solve-waveguide": cmd_solve_waveguide,
    "solve-step": cmd_solve_step,
    "population": cmd_population,
    "fit-speed": cmd_fit_speed,
    "trajectory": cmd_trajectory,
    "bbm-run": cmd_bbm_run,
    "dwell": cmd_dwell,
    "invariance": cmd_invariance,
    "sweep": cmd_sweep,
}


def run(cfg: RunConfig, rt: Runtime | None = None) -> RunSummary:
    rt = rt or Runtime()
    params = an.PhysicalParams(**cfg.params)
    start = time.perf_counter()
    results, tables = HANDLERS[cfg.command](cfg, params, rt)
    elapsed = time.perf_counter() - start
    summary = RunSummary(config=cfg, results=results, wall_time=elapsed if rt.timing else None)
    paths = emit_results(summary, tables)
    if not rt.quiet:
        print(f"{cfg.command}: done in {elapsed:.3f} s; wrote {', '.join(str(p) for p in paths)}", file=sys.stderr)
    return summary


def main(argv=None) -> int:
    cfg, rt = parse(argv)
    try:
        run(cfg, rt)
    except UsageError as exc:
        print(f"tunnelspeed {cfg.command}: error: {exc}", file=sys.stderr)
        return 2
    except TunnelSpeedError as exc:
        print(f"tunnelspeed {cfg.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"tunnelspeed {cfg.command}: I/O error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
