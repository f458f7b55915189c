"""Event-driven Monte Carlo of the bidirectional Bohmian model at a reflecting step.

Each particle carries a direction label ``sigma = +1/-1``. In the left region
(``x < 0``) both directions move with the local speed ``2 j_L / rho_L(x)``;
in the evanescent region they move at constant speed ``v_R`` and right-movers
reverse at an exponentially distributed turning point.

Particles are injected as right-movers at ``x = -L``. At ``x = 0`` a
right-mover enters with probability ``a`` or is reflected on the spot.
A particle's lifecycle ends when it returns to ``-L`` as a left-mover.

Randomness is counter-based: particle ``i`` draws from a Philox stream keyed
by the run seed with counter ``(0, i, 0, 0)``, so any subset of particles can
be simulated anywhere, in any order, with identical results.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy.optimize import brentq

from .analytic import (
    PhysicalParams,
    StepSolution,
    left_density_antiderivative,
    step_solution,
)

DEFAULT_SEED = 20250706
DRAWS_PER_PARTICLE = 2  # entry decision, turning point
TRAJECTORY_CAP = 1000
_REDUCE_CHUNK = 8192


# --------------------------------------------------------------------------
# random numbers
# --------------------------------------------------------------------------


def particle_raw(seed: int, index: int, n: int = DRAWS_PER_PARTICLE) -> np.ndarray:
    """First ``n`` raw 64-bit words of particle ``index``'s substream."""
    bitgen = np.random.Philox(key=seed, counter=[0, index, 0, 0])
    return bitgen.random_raw(n)


def particle_uniforms(seed: int, start: int, stop: int) -> np.ndarray:
    """``(stop - start, 2)`` array: column 0 in ``[0, 1)``, column 1 in ``(0, 1]``."""
    raw = np.empty((stop - start, DRAWS_PER_PARTICLE), dtype=np.uint64)
    for row, i in enumerate(range(start, stop)):
        raw[row] = particle_raw(seed, i)
    mant = raw >> np.uint64(11)
    u = np.empty(raw.shape)
    u[:, 0] = mant[:, 0] * 2.0**-53
    u[:, 1] = (mant[:, 1] + 1.0) * 2.0**-53
    return u


def turning_point_from_uniform(kappa: float, u):
    """Inverse CDF of ``p(x) = 2 kappa exp(-2 kappa x)`` for ``u`` in ``(0, 1]``."""
    return -np.log(u) / (2 * kappa)


def sample_turning_point(kappa: float, rng: np.random.Generator, size=None):
    if kappa <= 0:
        raise ValueError("kappa must be > 0")
    # 1 - U maps [0, 1) onto (0, 1] and keeps the log finite
    return turning_point_from_uniform(kappa, 1.0 - rng.random(size))


# --------------------------------------------------------------------------
# model quantities
# --------------------------------------------------------------------------


def entry_probability(sol: StepSolution) -> float:
    """Density-matching entry probability ``|t|^2 v_R / (2 j_in)``."""
    # equals 2 k kappa / (k^2 + kappa^2) <= 1; roundoff overshoots at k = kappa
    return min(sol.t_abs2 * sol.v_R / (2 * sol.j_in), 1.0)


def bbm_dwell_analytic(sol: StepSolution) -> float:
    """Mean evanescent-region residence per incident particle, ``a / (kappa v_R)``."""
    return entry_probability(sol) / (sol.kappa * sol.v_R)


def left_time_of_flight(sol: StepSolution, x_from: float, x_to: float, j_L: float | None = None):
    """Travel time between two left-region points at speed ``2 j_L / rho_L``.

    Closed form ``|F(x_to) - F(x_from)| / (2 j_L)`` with ``F`` the
    antiderivative of the standing-wave density; finite across density nodes.
    """
    if np.any(np.asarray(x_from) > 0) or np.any(np.asarray(x_to) > 0):
        raise ValueError("left-region positions must be <= 0")
    j_L = sol.j_in if j_L is None else j_L
    F = left_density_antiderivative
    return np.abs(F(sol, x_to) - F(sol, x_from)) / (2 * j_L)


def left_position_after(sol: StepSolution, x_from: float, dt: float, direction: int, j_L: float | None = None) -> float:
    """Invert the left-region time of flight: where is the particle after ``dt``?"""
    j_L = sol.j_in if j_L is None else j_L
    target = float(left_density_antiderivative(sol, x_from)) + direction * 2 * j_L * dt
    if dt == 0:
        return float(x_from)
    # F(x) - 2x is bounded by 2/k, so the root lies within this bracket
    pad = 2.0 / sol.k + 1.0
    lo, hi = (x_from, x_from + direction * (dt * j_L + pad))
    lo, hi = min(lo, hi), max(lo, hi)
    return brentq(lambda y: float(left_density_antiderivative(sol, y)) - target, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps)


# --------------------------------------------------------------------------
# configuration, state, results
# --------------------------------------------------------------------------


@dataclass
class BbmConfig:
    params: PhysicalParams
    n_particles: int = 100_000
    seed: int = DEFAULT_SEED
    left_extent: float | None = None  # None: one density period pi/k
    histogram_bins: int = 200
    bin_range: float | None = None  # None: 5 / (2 kappa)

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValueError("n_particles must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.left_extent is not None and not self.left_extent > 0:
            raise ValueError("left_extent must be > 0")
        if self.histogram_bins < 1:
            raise ValueError("histogram_bins must be >= 1")
        if self.bin_range is not None and not self.bin_range > 0:
            raise ValueError("bin_range must be > 0")

    def resolved(self, sol: StepSolution) -> tuple[float, float]:
        L = self.left_extent if self.left_extent is not None else sol.period
        R = self.bin_range if self.bin_range is not None else 5 / (2 * sol.kappa)
        return L, R


@dataclass
class ParticleState:
    x: float
    sigma: int
    region: Literal["left", "right"]
    turning_point: float | None = None
    clock: float = 0.0
    residence_right: float = 0.0

    def check(self):
        """Internal consistency of the direction label, region and turning point."""
        assert self.sigma in (1, -1)
        assert (self.region == "right") == (self.x > 0) or self.x == 0
        assert (self.turning_point is not None) == (self.region == "right" and self.sigma == 1)


@dataclass
class ParticleOutcome:
    index: int
    entered: bool
    residence_right: float
    x_star: float | None
    total_time: float
    trajectory: list[tuple[float, float, int, str]] | None = None


@dataclass
class BbmEstimates:
    n_particles: int
    dwell_mean: float
    dwell_stderr: float
    entered_fraction: float
    entered_stderr: float
    mean_turning_point: float
    turning_point_stderr: float
    mean_lifetime: float
    bin_edges: np.ndarray = field(repr=False)
    density_hist_plus: np.ndarray = field(repr=False)
    density_hist_minus: np.ndarray = field(repr=False)
    density_stderr_plus: np.ndarray = field(repr=False)
    density_stderr_minus: np.ndarray = field(repr=False)

    def summary(self) -> dict:
        return {
            "n_particles": self.n_particles,
            "dwell_mean": self.dwell_mean,
            "dwell_stderr": self.dwell_stderr,
            "entered_fraction": self.entered_fraction,
            "entered_stderr": self.entered_stderr,
            "mean_turning_point": self.mean_turning_point,
            "turning_point_stderr": self.turning_point_stderr,
            "mean_lifetime": self.mean_lifetime,
        }


# --------------------------------------------------------------------------
# single particle
# --------------------------------------------------------------------------


def simulate_particle(
    config: BbmConfig,
    sol: StepSolution,
    particle_index: int,
    record: bool = False,
    samples_per_leg: int = 8,
) -> ParticleOutcome:
    """Run one lifecycle event by event.

    With ``record=True`` the trajectory is returned as ``(t, x, sigma, event)``
    rows; left-region legs get ``samples_per_leg`` interior points obtained by
    inverting the time of flight.
    """
    L, _ = config.resolved(sol)
    a = entry_probability(sol)
    u_entry, u_turn = particle_uniforms(config.seed, particle_index, particle_index + 1)[0]
    v_R = sol.v_R

    state = ParticleState(x=-L, sigma=1, region="left")
    rows = [] if record else None
    x_star = None
    entered = False

    def log(event):
        if rows is not None:
            rows.append((state.clock, state.x, state.sigma, event))

    def left_leg(x_to):
        dt = float(left_time_of_flight(sol, state.x, x_to))
        if rows is not None:
            for s in range(1, samples_per_leg + 1):
                frac = s / (samples_per_leg + 1)
                xs = left_position_after(sol, state.x, frac * dt, state.sigma)
                rows.append((state.clock + frac * dt, xs, state.sigma, "left"))
        state.clock += dt
        state.x = x_to

    log("inject")
    while True:
        state.check()
        if state.region == "left" and state.sigma == 1:
            left_leg(0.0)
            log("boundary")
            if u_entry < a:
                entered = True
                x_star = float(turning_point_from_uniform(sol.kappa, u_turn))
                state.region = "right"
                state.turning_point = x_star
            else:
                state.sigma = -1
                log("reflect")
        elif state.region == "right" and state.sigma == 1:
            dt = (state.turning_point - state.x) / v_R
            state.clock += dt
            state.residence_right += dt
            state.x = state.turning_point
            state.turning_point = None
            state.sigma = -1
            log("turn")
        elif state.region == "right":
            dt = state.x / v_R
            state.clock += dt
            state.residence_right += dt
            state.x = 0.0
            state.region = "left"
            log("cross")
        else:
            left_leg(-L)
            log("exit")
            break

    return ParticleOutcome(
        index=particle_index,
        entered=entered,
        residence_right=state.residence_right,
        x_star=x_star,
        total_time=state.clock,
        trajectory=rows,
    )


# --------------------------------------------------------------------------
# ensemble
# --------------------------------------------------------------------------


@dataclass
class _Batch:
    entered: np.ndarray
    x_star: np.ndarray  # nan where not entered
    residence: np.ndarray
    lifetime: np.ndarray


def simulate_batch(config: BbmConfig, sol: StepSolution, start: int, stop: int) -> _Batch:
    """Vectorised equivalent of ``simulate_particle`` for indices ``[start, stop)``."""
    L, _ = config.resolved(sol)
    a = entry_probability(sol)
    u = particle_uniforms(config.seed, start, stop)
    entered = u[:, 0] < a
    x_star = np.where(entered, turning_point_from_uniform(sol.kappa, u[:, 1]), np.nan)
    residence = np.where(entered, 2 * np.nan_to_num(x_star) / sol.v_R, 0.0)
    left_round_trip = 2 * float(left_time_of_flight(sol, -L, 0.0))
    return _Batch(entered, x_star, residence, left_round_trip + residence)


def _batch_task(args):
    config, start, stop = args
    return simulate_batch(config, step_solution(config.params), start, stop)


def _chunks(n: int, workers: int):
    size = max(1, math.ceil(n / (4 * workers)))
    return [(s, min(s + size, n)) for s in range(0, n, size)]


def _stderr(values: np.ndarray) -> float:
    n = values.size
    return float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0


def run_ensemble(config: BbmConfig, workers: int = 1) -> BbmEstimates:
    """Simulate ``config.n_particles`` lifecycles and reduce to estimators.

    Output is independent of ``workers``: particles are keyed by index, and
    the reduction runs over the index-ordered arrays in fixed-size chunks.
    """
    sol = step_solution(config.params)
    n = config.n_particles
    if workers <= 1:
        batches = [simulate_batch(config, sol, 0, n)]
    else:
        tasks = [(config, s, e) for s, e in _chunks(n, workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            batches = list(pool.map(_batch_task, tasks))
    entered = np.concatenate([b.entered for b in batches])
    x_star = np.concatenate([b.x_star for b in batches])
    residence = np.concatenate([b.residence for b in batches])
    lifetime = np.concatenate([b.lifetime for b in batches])

    stars = x_star[entered]
    f = float(entered.mean())
    edges, hist, hist_err = _sojourn_histogram(config, sol, x_star)
    return BbmEstimates(
        n_particles=n,
        dwell_mean=float(residence.mean()),
        dwell_stderr=_stderr(residence),
        entered_fraction=f,
        entered_stderr=math.sqrt(f * (1 - f) / n),
        mean_turning_point=float(stars.mean()) if stars.size else math.nan,
        turning_point_stderr=_stderr(stars),
        mean_lifetime=float(lifetime.mean()),
        bin_edges=edges,
        # the inbound leg retraces [0, x*] at the same speed, so both
        # directions deposit identical sojourn times per particle
        density_hist_plus=hist,
        density_hist_minus=hist.copy(),
        density_stderr_plus=hist_err,
        density_stderr_minus=hist_err.copy(),
    )


def _sojourn_histogram(config: BbmConfig, sol: StepSolution, x_star: np.ndarray):
    """Time-in-bin density for one direction, scaled by the injection rate ``j_in``.

    A particle with turning point ``x*`` spends ``overlap(bin, [0, x*]) / v_R``
    in each bin per leg. Dividing the mean sojourn per incident particle by
    the bin width and multiplying by ``j_in`` gives a stationary density.
    """
    _, R = config.resolved(sol)
    nb = config.histogram_bins
    edges = np.linspace(0.0, R, nb + 1)
    width = edges[1:] - edges[:-1]
    n = x_star.size
    s1 = np.zeros(nb)
    s2 = np.zeros(nb)
    reach = np.nan_to_num(x_star, nan=0.0)
    for c in range(0, n, _REDUCE_CHUNK):
        xs = reach[c : c + _REDUCE_CHUNK, None]
        tau = np.clip(xs - edges[None, :-1], 0.0, width[None, :]) / sol.v_R
        s1 += tau.sum(axis=0)
        s2 += (tau * tau).sum(axis=0)
    mean = s1 / n
    var = np.maximum(s2 / n - mean**2, 0.0) * (n / (n - 1)) if n > 1 else np.zeros(nb)
    scale = sol.j_in / width
    return edges, scale * mean, scale * np.sqrt(var / n)


def dump_trajectories(config: BbmConfig, n: int, cap: int = TRAJECTORY_CAP, samples_per_leg: int = 8):
    """Trajectory rows ``(particle, t, x, sigma, event)`` for the first ``n`` particles."""
    if n > cap:
        raise ValueError(f"trajectory dump limited to {cap} particles, asked for {n}")
    sol = step_solution(config.params)
    rows = []
    for i in range(n):
        out = simulate_particle(config, sol, i, record=True, samples_per_leg=samples_per_leg)
        rows.extend((i, t, x, s, ev) for t, x, s, ev in out.trajectory)
    return rows
