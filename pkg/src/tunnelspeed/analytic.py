"""Closed-form stationary solutions.

Two systems are covered:

* the coupled waveguide pair behind a potential step (main guide ``m`` and
  auxiliary guide ``a``, coupled at rate ``J`` for ``x >= 0``), and
* the plain reflecting step ``V(x) = V0 * (x >= 0)`` below the barrier.

Every function that takes a position accepts a scalar or an array and returns
the same shape. Complex wavenumbers are plain Python ``complex`` values.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, replace
from typing import Literal

import numpy as np

from .errors import DegenerateParameter, InvalidRegime, ZeroDensity

DEGENERACY_EPS = 1e-12

# above this |Im(k1 x)| use the sech form: no overflow, and p_a cannot round past 1/2
_LARGE_ARG = 1.0


@dataclass(frozen=True)
class PhysicalParams:
    """Mass, action quantum, incident energy, step height and coupling rate.

    Natural units (``hbar = m = 1``) are the default. ``delta`` is always
    derived from ``(E, V0, J)``.
    """

    E: float
    V0: float = 0.0
    J: float = 0.0
    m: float = 1.0
    hbar: float = 1.0

    def __post_init__(self):
        for name in ("E", "V0", "J", "m", "hbar"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value!r}")
            object.__setattr__(self, name, value)
        if self.m <= 0:
            raise ValueError(f"m must be > 0, got {self.m}")
        if self.hbar <= 0:
            raise ValueError(f"hbar must be > 0, got {self.hbar}")
        if self.E <= 0:
            raise ValueError(f"E must be > 0, got {self.E}")
        if self.J < 0:
            raise ValueError(f"J must be >= 0, got {self.J}")

    @property
    def delta(self) -> float:
        """Kinetic energy in the step region, ``E + hbar*J - V0``."""
        return self.E + self.hbar * self.J - self.V0

    def as_dict(self) -> dict:
        return {"E": self.E, "V0": self.V0, "J": self.J, "m": self.m, "hbar": self.hbar}


def _finish(out, scalar_input):
    return out[()] if scalar_input else out


def _positions(x, nonnegative=False):
    arr = np.asarray(x, dtype=float)
    if nonnegative and np.any(arr < 0):
        raise ValueError("positions must be >= 0 on the coupled-waveguide side")
    return arr, arr.ndim == 0


# --------------------------------------------------------------------------
# coupled waveguides
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class WaveguideSolution:
    params: PhysicalParams
    k0: float
    k1: complex
    k2: complex

    @property
    def amplitude(self) -> complex:
        """Main-guide amplitude at the step, ``2 k0 / (k0 + k2)``."""
        return 2 * self.k0 / (self.k0 + self.k2)


def _principal_sqrt(z: complex) -> complex:
    # adding +0.0 clears a negative-zero imaginary part, which would
    # otherwise put sqrt(-x) on the -i branch
    z = complex(z.real, z.imag + 0.0)
    return cmath.sqrt(z)


def compute_wavenumbers(params: PhysicalParams, eps: float = DEGENERACY_EPS) -> WaveguideSolution:
    """Wavenumbers ``k0, k1, k2`` of the coupled-guide solution.

    ``k2`` uses the principal square root in every regime, so for
    ``|delta| < hbar*J`` both ``k1`` and ``k2`` are genuinely complex.
    """
    hJ = params.hbar * params.J
    d = params.delta
    shifted = d + hJ
    if abs(shifted) < eps:
        raise DegenerateParameter(
            f"delta + hbar*J = {shifted:.3e} is within {eps:g} of zero; k1 is singular"
        )
    sign = 1.0 if shifted > 0 else -1.0
    disc = _principal_sqrt(complex(d * d - hJ * hJ))
    inner = d + sign * disc
    k2 = math.sqrt(params.m) / params.hbar * _principal_sqrt(inner)
    if k2 == 0:
        raise DegenerateParameter("k2 vanished; k1 is singular")
    k1 = params.m * params.J / (params.hbar * k2)
    k0 = math.sqrt(2 * params.m * params.E) / params.hbar
    return WaveguideSolution(params=params, k0=k0, k1=complex(k1), k2=complex(k2))


def waveguide_fields(sol: WaveguideSolution, x):
    """Return ``(psi_m, psi_a)`` at positions ``x >= 0``."""
    x, scalar = _positions(x, nonnegative=True)
    carrier = sol.amplitude * np.exp(1j * sol.k2 * x)
    psi_m = np.cos(sol.k1 * x) * carrier
    psi_a = -1j * np.sin(sol.k1 * x) * carrier
    return _finish(psi_m, scalar), _finish(psi_a, scalar)


def waveguide_field_derivatives(sol: WaveguideSolution, x):
    """Analytic ``d/dx`` of ``(psi_m, psi_a)``."""
    x, scalar = _positions(x, nonnegative=True)
    k1, k2 = sol.k1, sol.k2
    carrier = sol.amplitude * np.exp(1j * k2 * x)
    c, s = np.cos(k1 * x), np.sin(k1 * x)
    dpsi_m = (-k1 * s + 1j * k2 * c) * carrier
    dpsi_a = -1j * (k1 * c + 1j * k2 * s) * carrier
    return _finish(dpsi_m, scalar), _finish(dpsi_a, scalar)


def _sin2_over_total(re_arg, im_arg):
    """``|sin z|^2 / (|sin z|^2 + |cos z|^2)`` for ``z = re_arg + i*im_arg``.

    Uses ``|sin z|^2 = sin^2 a + sinh^2 b`` and ``|cos z|^2 + |sin z|^2 =
    cosh 2b``; large ``|b|`` goes through ``1/2 - cos(2a) sech(2b) / 2``.
    """
    a = np.asarray(re_arg, dtype=float)
    b = np.abs(np.asarray(im_arg, dtype=float))
    big = b > _LARGE_ARG
    bs = np.where(big, 0.0, b)
    small_form = (np.sin(a) ** 2 + np.sinh(bs) ** 2) / np.cosh(2 * bs)
    bb = np.where(big, b, _LARGE_ARG)
    sech2b = 2 * np.exp(-2 * bb) / (1 + np.exp(-4 * bb))
    big_form = 0.5 - 0.5 * np.cos(2 * a) * sech2b
    return np.where(big, big_form, small_form)


def relative_population_exact(sol: WaveguideSolution, x):
    """Fraction of the density in the auxiliary guide at ``x``."""
    x, scalar = _positions(x, nonnegative=True)
    amp = sol.amplitude
    if not np.isfinite(amp) or amp == 0:
        raise ZeroDensity("coupled-guide amplitude vanishes")
    z_re = sol.k1.real * x
    z_im = sol.k1.imag * x
    return _finish(_sin2_over_total(z_re, z_im), scalar)


def relative_population_asymptotic(J: float, v: float, x, delta_sign: int | str = 1):
    """Relative population for ``|delta| >> hbar*J``; depends only on ``J*x/v``.

    ``delta_sign`` selects the propagating (``+1``, sin/cos) or evanescent
    (``-1``, sinh/cosh) form.
    """
    if J < 0:
        raise ValueError("J must be >= 0")
    if v <= 0:
        raise ValueError("v must be > 0")
    sign = _parse_sign(delta_sign)
    x, scalar = _positions(x, nonnegative=True)
    u = J * x / v
    if sign > 0:
        out = np.sin(u) ** 2
    else:
        out = _sin2_over_total(np.zeros_like(u), u)
    return _finish(out, scalar)


def _parse_sign(s) -> int:
    if s in (1, "+", "+1", "positive"):
        return 1
    if s in (-1, "-", "-1", "negative"):
        return -1
    raise ValueError(f"delta_sign must be +1 or -1, got {s!r}")


def characteristic_speed(params: PhysicalParams) -> float:
    """``sqrt(2 |delta| / m)``; identical for propagating and evanescent regimes."""
    return math.sqrt(2 * abs(params.delta) / params.m)


# --------------------------------------------------------------------------
# reflecting step
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class StepSolution:
    params: PhysicalParams
    k: float
    kappa: float
    r: complex
    t: complex

    @property
    def j_in(self) -> float:
        """Incident flux of the unit-amplitude plane wave."""
        return self.params.hbar * self.k / self.params.m

    @property
    def v_R(self) -> float:
        """Speed in the evanescent region, ``sqrt(2 (V0 - E) / m)``."""
        p = self.params
        return math.sqrt(2 * (p.V0 - p.E) / p.m)

    @property
    def t_abs2(self) -> float:
        return abs(self.t) ** 2

    @property
    def period(self) -> float:
        """Spatial period ``pi / k`` of the left-region density."""
        return math.pi / self.k


def step_solution(params: PhysicalParams) -> StepSolution:
    if params.J != 0:
        raise InvalidRegime(f"the reflecting step is uncoupled; got J = {params.J}")
    if params.E >= params.V0:
        raise InvalidRegime(
            f"step analysis needs 0 < E < V0 (evanescent); got E = {params.E}, V0 = {params.V0}"
        )
    k = math.sqrt(2 * params.m * params.E) / params.hbar
    kappa = math.sqrt(2 * params.m * (params.V0 - params.E)) / params.hbar
    r = (k - 1j * kappa) / (k + 1j * kappa)
    t = 2 * k / (k + 1j * kappa)
    return StepSolution(params=params, k=k, kappa=kappa, r=r, t=t)


def step_wavefunction(sol: StepSolution, x):
    x, scalar = _positions(x)
    left = x < 0
    xl = np.where(left, x, 0.0)
    xr = np.where(left, 0.0, x)
    psi = np.where(
        left,
        np.exp(1j * sol.k * xl) + sol.r * np.exp(-1j * sol.k * xl),
        sol.t * np.exp(-sol.kappa * xr),
    )
    return _finish(psi, scalar)


def left_density(sol: StepSolution, x):
    """Standing-wave density ``|exp(ikx) + r exp(-ikx)|^2`` (uses ``|r| = 1``)."""
    x, scalar = _positions(x)
    ph = 2 * sol.k * x
    out = 2 * (1 + sol.r.real * np.cos(ph) + sol.r.imag * np.sin(ph))
    # roundoff can push the nodes to -1e-16
    return _finish(np.maximum(out, 0.0), scalar)


def left_density_antiderivative(sol: StepSolution, x):
    x, scalar = _positions(x)
    ph = 2 * sol.k * x
    out = 2 * x + (sol.r.real * np.sin(ph) - sol.r.imag * np.cos(ph)) / sol.k
    return _finish(out, scalar)


def step_density(sol: StepSolution, x):
    x, scalar = _positions(x)
    left = x < 0
    out = np.empty_like(x)
    out[left] = left_density(sol, x[left])
    out[~left] = sol.t_abs2 * np.exp(-2 * sol.kappa * x[~left])
    return _finish(out, scalar)


# --------------------------------------------------------------------------
# dilations
# --------------------------------------------------------------------------


def dilation_transform(
    params: PhysicalParams, alpha: float, mode: Literal["space", "time"]
) -> PhysicalParams:
    """Rescale coordinates at fixed ``hbar``.

    ``space``: ``x -> alpha x`` takes ``m -> m / alpha**2`` with energies and
    ``J`` unchanged, so wavenumbers scale as ``1/alpha`` and ``v -> alpha v``.

    ``time``: ``t -> alpha t`` takes ``J -> J / alpha``, energies ``-> /alpha``
    and ``m -> alpha m``, so wavenumbers are unchanged and ``v -> v / alpha``.

    Both leave ``J x / v`` and hence the relative population invariant.
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    if mode == "space":
        return replace(params, m=params.m / alpha**2)
    if mode == "time":
        return replace(
            params,
            E=params.E / alpha,
            V0=params.V0 / alpha,
            J=params.J / alpha,
            m=params.m * alpha,
        )
    raise ValueError(f"mode must be 'space' or 'time', got {mode!r}")
