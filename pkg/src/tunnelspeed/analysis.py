"""Dwell times, speed extraction from population growth, dilation checks, sweeps."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np
from scipy.integrate import quad

from . import analytic as an
from .analytic import PhysicalParams, StepSolution
from .bbm import BbmConfig, bbm_dwell_analytic, entry_probability, run_ensemble
from .errors import DegenerateFit, FitWindowTooWide, TunnelSpeedError

INVARIANCE_TOL = 1e-12
_MAX_TRIMS = 20


def qm_dwell_time(sol: StepSolution) -> float:
    """Integrated evanescent density over incident flux, ``|t|^2 / (2 kappa j_in)``."""
    return sol.t_abs2 / (2 * sol.kappa * sol.j_in)


def qm_dwell_time_quadrature(sol: StepSolution) -> float:
    integral, _ = quad(lambda x: float(an.step_density(sol, x)), 0.0, math.inf, epsabs=0.0, epsrel=1e-12, limit=200)
    return integral / sol.j_in


# --------------------------------------------------------------------------
# speed from quadratic population growth
# --------------------------------------------------------------------------


@dataclass
class FitResult:
    v_hat: float
    j_over_v: float
    rms_residual: float
    n_points: int
    x_max_over_scale: float

    def as_dict(self) -> dict:
        return {
            "v_hat": self.v_hat,
            "j_over_v": self.j_over_v,
            "rms_residual": self.rms_residual,
            "n_points": self.n_points,
            "x_max_over_scale": self.x_max_over_scale,
        }


def _quadratic_slope(x, p):
    x2 = x * x
    return float(np.dot(x2, p) / np.dot(x2, x2))


def fit_speed(
    samples: Iterable[tuple[float, float]],
    J: float,
    max_scaled_x: float = 0.1,
    p_cutoff: float = 0.05,
) -> FitResult:
    """Fit ``p_a = (J x / v)^2`` through the origin and return ``v``.

    Only samples with ``x > 0`` and ``p_a <= p_cutoff`` are used. The window is
    then trimmed to ``J x / v_hat <= max_scaled_x`` and refitted until stable.
    """
    if not J > 0:
        raise ValueError("J must be > 0 to convert the fitted rate into a speed")
    arr = np.asarray(list(samples), dtype=float).reshape(-1, 2)
    x, p = arr[:, 0], arr[:, 1]
    keep = (x > 0) & (p <= p_cutoff)
    x, p = x[keep], p[keep]
    if x.size < 3 or np.unique(x).size < 2:
        raise DegenerateFit(f"need >= 3 samples at >= 2 distinct x > 0 below p_a = {p_cutoff}; got {x.size}")

    slope = _quadratic_slope(x, p)
    if slope <= 0:
        raise DegenerateFit(f"non-positive quadratic coefficient {slope:.3e}")
    # dropping the widest samples steepens the fit, which can push the new
    # edge back over the bound; repeat until the window is self-consistent
    for _ in range(_MAX_TRIMS):
        window = x * math.sqrt(slope) <= max_scaled_x
        if window.all():
            break
        x, p = x[window], p[window]
        if x.size < 3 or np.unique(x).size < 2:
            raise FitWindowTooWide(f"fewer than 3 samples within J x / v <= {max_scaled_x}")
        slope = _quadratic_slope(x, p)
        if slope <= 0:
            raise DegenerateFit(f"non-positive quadratic coefficient {slope:.3e}")

    rate = math.sqrt(slope)
    v_hat = J / rate
    scaled_max = float(np.max(x) * rate)
    if scaled_max > max_scaled_x * (1 + 1e-12):
        raise FitWindowTooWide(f"largest J x / v_hat = {scaled_max:.4g} exceeds {max_scaled_x}")
    resid = p - slope * x * x
    return FitResult(
        v_hat=v_hat,
        j_over_v=rate,
        rms_residual=float(np.sqrt(np.mean(resid**2))),
        n_points=int(x.size),
        x_max_over_scale=scaled_max,
    )


def binomial_noise(p, counts: int, rng: np.random.Generator):
    """Replace each probability by a binomial estimate from ``counts`` trials."""
    p = np.clip(np.asarray(p, dtype=float), 0.0, 1.0)
    return rng.binomial(counts, p) / counts


def population_samples(params: PhysicalParams, xs, form: str = "exact"):
    """``(x, p_a)`` pairs from the exact or asymptotic relative population."""
    xs = np.asarray(xs, dtype=float)
    if form == "exact":
        p = an.relative_population_exact(an.compute_wavenumbers(params), xs)
    elif form == "asymptotic":
        p = an.relative_population_asymptotic(
            params.J, an.characteristic_speed(params), xs, 1 if params.delta > 0 else -1
        )
    else:
        raise ValueError(f"form must be 'exact' or 'asymptotic', got {form!r}")
    return np.column_stack([xs, p])


# --------------------------------------------------------------------------
# dilation invariance
# --------------------------------------------------------------------------


@dataclass
class InvarianceReport:
    mode: str
    alpha: float
    max_abs_deviation: float
    v_ratio: float
    v_expected_ratio: float
    passed: bool

    def as_dict(self) -> dict:
        return {
            "mode": self.mode,
            "alpha": self.alpha,
            "max_abs_deviation": self.max_abs_deviation,
            "v_ratio": self.v_ratio,
            "v_expected_ratio": self.v_expected_ratio,
            "pass": self.passed,
        }


def invariance_check(
    params: PhysicalParams,
    alpha: float,
    mode: str,
    sample_xs: Sequence[float],
    form: str = "asymptotic",
    tol: float = INVARIANCE_TOL,
) -> InvarianceReport:
    """Compare the relative population before and after a dilation.

    In ``space`` mode position ``x`` maps to ``alpha * x``; in ``time`` mode
    positions are unchanged. The speed must scale by ``alpha`` or
    ``1/alpha`` respectively.
    """
    new = an.dilation_transform(params, alpha, mode)
    xs = np.asarray(sample_xs, dtype=float)
    xs_new = alpha * xs if mode == "space" else xs
    v, v_new = an.characteristic_speed(params), an.characteristic_speed(new)
    if form == "asymptotic":
        sign = 1 if params.delta > 0 else -1
        before = an.relative_population_asymptotic(params.J, v, xs, sign)
        after = an.relative_population_asymptotic(new.J, v_new, xs_new, sign)
    elif form == "exact":
        before = an.relative_population_exact(an.compute_wavenumbers(params), xs)
        after = an.relative_population_exact(an.compute_wavenumbers(new), xs_new)
    else:
        raise ValueError(f"form must be 'exact' or 'asymptotic', got {form!r}")
    dev = float(np.max(np.abs(after - before))) if xs.size else 0.0
    expected = alpha if mode == "space" else 1 / alpha
    ratio = v_new / v if v > 0 else math.nan
    speed_ok = v == 0 or math.isclose(ratio, expected, rel_tol=1e-14)
    return InvarianceReport(mode, alpha, dev, ratio, expected, dev < tol and speed_ok)


# --------------------------------------------------------------------------
# sweeps
# --------------------------------------------------------------------------

SWEEP_AXES = ("E", "V0", "J", "m", "hbar", "E_over_V0")

SWEEP_COLUMNS = [
    "E", "V0", "J", "m", "hbar",
    "k", "kappa", "v_R", "v", "a", "tau_qm", "tau_bbm", "tau_rel_diff",
    "mc_dwell_mean", "mc_dwell_stderr", "mc_entered_fraction", "error",
]


def expand_grid(base: PhysicalParams, axes: dict[str, Sequence[float]]) -> list[PhysicalParams]:
    """Cartesian product of ``axes`` over ``base``, last axis varying fastest.

    ``E_over_V0`` sets ``E = ratio * V0`` after the other axes are applied.
    Invalid combinations are kept as ``(overrides, error)`` tuples.
    """
    unknown = set(axes) - set(SWEEP_AXES)
    if unknown:
        raise ValueError(f"unknown sweep axes {sorted(unknown)}; allowed: {SWEEP_AXES}")
    names = list(axes)
    points = []
    for combo in itertools.product(*(axes[n] for n in names)):
        over = dict(zip(names, combo))
        ratio = over.pop("E_over_V0", None)
        values = {**base.as_dict(), **over}
        if ratio is not None:
            values["E"] = ratio * values["V0"]
        try:
            points.append(PhysicalParams(**values))
        except ValueError as exc:
            points.append((values, str(exc)))
    return points


def sweep_row(params: PhysicalParams, mc: BbmConfig | None = None) -> dict:
    sol = an.step_solution(params)
    tau_qm = qm_dwell_time(sol)
    tau_bbm = bbm_dwell_analytic(sol)
    row = {
        **params.as_dict(),
        "k": sol.k,
        "kappa": sol.kappa,
        "v_R": sol.v_R,
        "v": an.characteristic_speed(params),
        "a": entry_probability(sol),
        "tau_qm": tau_qm,
        "tau_bbm": tau_bbm,
        "tau_rel_diff": abs(tau_qm - tau_bbm) / tau_qm,
    }
    if mc is not None:
        est = run_ensemble(replace(mc, params=params))
        row.update(
            mc_dwell_mean=est.dwell_mean,
            mc_dwell_stderr=est.dwell_stderr,
            mc_entered_fraction=est.entered_fraction,
        )
    return row


def sweep(grid: Iterable, mc: BbmConfig | None = None) -> list[dict]:
    """Evaluate every grid point in order; failures are recorded in ``error``."""
    rows = []
    for point in grid:
        if isinstance(point, tuple):
            values, err = point
            row = dict(values)
            row["error"] = err
        else:
            try:
                row = sweep_row(point, mc)
                row["error"] = ""
            except TunnelSpeedError as exc:
                row = {**point.as_dict(), "error": f"{type(exc).__name__}: {exc}"}
        rows.append({c: row.get(c, "") for c in SWEEP_COLUMNS})
    return rows
