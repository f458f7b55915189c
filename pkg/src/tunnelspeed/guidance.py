"""Standard guiding law ``v = j / rho`` and trajectory integration.

Also provides the constant-offset flux family ``j' = j + k_add``, the only
divergence-free modification available to a stationary 1D current.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np

from .analytic import (
    PhysicalParams,
    StepSolution,
    WaveguideSolution,
    step_density,
    step_wavefunction,
    waveguide_field_derivatives,
    waveguide_fields,
)
from .errors import SingularityEncountered, ZeroDensity

NODE_EPS = 1e-12


def probability_current(psi, dpsi_dx, params: PhysicalParams):
    """``(hbar/m) Im(conj(psi) * dpsi/dx)``."""
    return params.hbar / params.m * np.imag(np.conj(psi) * dpsi_dx)


def standard_velocity(j, rho, node_eps: float = NODE_EPS):
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= node_eps):
        raise ZeroDensity(f"density {float(np.min(rho)):.3e} at or below node threshold {node_eps:g}")
    out = np.asarray(j, dtype=float) / rho
    return out[()] if out.ndim == 0 else out


def modified_velocity(j, k_add: float, rho, node_eps: float = NODE_EPS):
    """Velocity from the shifted current ``j + k_add`` (``k_add`` constant)."""
    return standard_velocity(np.asarray(j, dtype=float) + k_add, rho, node_eps)


# --------------------------------------------------------------------------
# velocity fields
# --------------------------------------------------------------------------


@dataclass
class VelocityField:
    """A 1D velocity field on ``domain``.

    ``density`` is optional; when given, the integrator uses it to detect
    density nodes before evaluating ``evaluator`` there.
    """

    evaluator: Callable[[float], float]
    domain: tuple[float, float]
    description: str = ""
    density: Callable[[float], float] | None = None

    def __call__(self, x: float) -> float:
        return float(self.evaluator(x))


def step_velocity_field(sol: StepSolution, k_add: float = 0.0, left_extent: float | None = None) -> VelocityField:
    """Guiding field for the reflecting step.

    With ``k_add = 0`` this is the standard law, which vanishes on both sides
    because the total reflection leaves no current anywhere.
    """
    p = sol.params
    lo = -(left_extent if left_extent is not None else sol.period)

    def current(x):
        psi = step_wavefunction(sol, x)
        if x < 0:
            dpsi = 1j * sol.k * (np.exp(1j * sol.k * x) - sol.r * np.exp(-1j * sol.k * x))
        else:
            dpsi = -sol.kappa * psi
        return probability_current(psi, dpsi, p)

    def v(x):
        return modified_velocity(current(x), k_add, step_density(sol, x))

    desc = "step, standard guidance" if k_add == 0 else f"step, current offset {k_add:g}"
    return VelocityField(v, (lo, math.inf), desc, density=lambda x: step_density(sol, x))


def waveguide_velocity_field(sol: WaveguideSolution, x_max: float = math.inf) -> VelocityField:
    """Total guiding velocity ``(j_m + j_a) / (rho_m + rho_a)`` for ``x >= 0``."""
    p = sol.params

    def parts(x):
        psi_m, psi_a = waveguide_fields(sol, x)
        d_m, d_a = waveguide_field_derivatives(sol, x)
        j = probability_current(psi_m, d_m, p) + probability_current(psi_a, d_a, p)
        rho = abs(psi_m) ** 2 + abs(psi_a) ** 2
        return j, rho

    return VelocityField(
        lambda x: standard_velocity(*parts(x)),
        (0.0, x_max),
        "coupled waveguides, standard guidance",
        density=lambda x: parts(x)[1],
    )


def scattering_velocity_field(k: float, r: complex, params: PhysicalParams, k_add: float = 0.0, domain=(-math.inf, math.inf)) -> VelocityField:
    """Field of ``exp(ikx) + r exp(-ikx)``; ``r = 0`` gives a plane wave."""

    def psi(x):
        return np.exp(1j * k * x) + r * np.exp(-1j * k * x)

    def dpsi(x):
        return 1j * k * (np.exp(1j * k * x) - r * np.exp(-1j * k * x))

    def rho(x):
        return abs(psi(x)) ** 2

    def v(x):
        return modified_velocity(probability_current(psi(x), dpsi(x), params), k_add, rho(x))

    return VelocityField(v, domain, f"plane-wave superposition r={r}", density=rho)


def constant_field(v0: float, domain=(-math.inf, math.inf)) -> VelocityField:
    return VelocityField(lambda x: v0, domain, f"constant {v0:g}")


# --------------------------------------------------------------------------
# integration
# --------------------------------------------------------------------------

Termination = Literal["reached_t_end", "hit_boundary", "stuck", "singular"]


@dataclass
class StepControl:
    rtol: float = 1e-9
    atol: float = 1e-12
    h_init: float = 1e-3
    h_min: float = 1e-14
    h_max: float = math.inf
    stuck_eps: float = 1e-12
    stuck_duration: float = 1e3
    node_eps: float = NODE_EPS
    max_steps: int = 1_000_000


@dataclass
class TrajectoryRecord:
    t: list[float] = field(default_factory=list)
    x: list[float] = field(default_factory=list)
    terminated: Termination = "reached_t_end"

    def append(self, t, x):
        self.t.append(float(t))
        self.x.append(float(x))

    @property
    def samples(self) -> list[tuple[float, float]]:
        return list(zip(self.t, self.x))

    def as_arrays(self):
        return np.asarray(self.t), np.asarray(self.x)


def _rk4(f, x, h):
    k1 = f(x)
    k2 = f(x + 0.5 * h * k1)
    k3 = f(x + 0.5 * h * k2)
    k4 = f(x + h * k3)
    return x + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6


def integrate_trajectory(
    field: VelocityField,
    x0: float,
    t_end: float,
    step_control: StepControl | None = None,
    t0: float = 0.0,
) -> TrajectoryRecord:
    """Integrate ``dx/dt = v(x)`` with classic RK4 and step doubling.

    The local error of a full step is estimated against two half steps
    (Richardson, ``err = |x_half - x_full| / 15``). Terminates at ``t_end``,
    on leaving ``field.domain``, at a density node (status ``singular``), or
    after ``stuck_duration`` of ``|v| < stuck_eps`` (status ``stuck``).
    """
    sc = step_control or StepControl()
    lo, hi = field.domain
    if not lo <= x0 <= hi:
        raise ValueError(f"x0 = {x0} outside field domain {field.domain}")
    rec = TrajectoryRecord()
    rec.append(t0, x0)

    def near_node(x):
        return field.density is not None and field.density(x) < sc.node_eps

    def f(x):
        if x < lo or x > hi:
            # evaluate at the clamped edge so the stage stays defined;
            # the boundary check below ends the run
            x = min(max(x, lo), hi)
        return field(x)

    t, x = t0, float(x0)
    if near_node(x):
        rec.terminated = "singular"
        return rec
    h = min(sc.h_init, sc.h_max, t_end - t0) if t_end > t0 else 0.0
    stuck_since = t if abs(f(x)) < sc.stuck_eps else None
    steps = 0
    while t < t_end:
        if stuck_since is not None and t - stuck_since >= sc.stuck_duration:
            rec.terminated = "stuck"
            return rec
        h = min(h, t_end - t, sc.h_max)
        try:
            full = _rk4(f, x, h)
            half = _rk4(f, _rk4(f, x, 0.5 * h), 0.5 * h)
        except ZeroDensity:
            err, ok = math.inf, False
        else:
            err = abs(half - full) / 15
            tol = sc.atol + sc.rtol * max(abs(x), abs(half))
            ok = err <= tol and math.isfinite(half)
        if not ok:
            h *= 0.25 if not math.isfinite(err) else max(0.1, 0.9 * (tol / err) ** 0.2)
            if h < sc.h_min:
                if near_node(x + math.copysign(sc.h_min, f(x))) or near_node(x):
                    rec.terminated = "singular"
                    return rec
                raise SingularityEncountered(f"step size underflow at t={t:.6g}, x={x:.6g}")
            continue
        t += h
        x = half + (half - full) / 15
        rec.append(t, x)
        steps += 1
        if x <= lo or x >= hi:
            rec.terminated = "hit_boundary"
            return rec
        if near_node(x):
            rec.terminated = "singular"
            return rec
        if abs(f(x)) < sc.stuck_eps:
            if stuck_since is None:
                stuck_since = t
        else:
            stuck_since = None
        if steps >= sc.max_steps:
            raise SingularityEncountered(f"exceeded {sc.max_steps} steps before t_end")
        h = h * min(5.0, 0.9 * (tol / err) ** 0.2) if err > 0 else h * 5.0
    if stuck_since is not None and stuck_since <= t0:
        rec.terminated = "stuck"
    else:
        rec.terminated = "reached_t_end"
    return rec


def occupancy_positions(rec: TrajectoryRecord, times) -> np.ndarray:
    """Positions at the requested times by linear interpolation of the record."""
    t, x = rec.as_arrays()
    return np.interp(times, t, x)
