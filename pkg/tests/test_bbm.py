import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats
from scipy.integrate import quad

from tunnelspeed.analysis import qm_dwell_time
from tunnelspeed.analytic import PhysicalParams, left_density, step_solution
from tunnelspeed.bbm import (
    BbmConfig,
    bbm_dwell_analytic,
    dump_trajectories,
    entry_probability,
    left_position_after,
    left_time_of_flight,
    particle_uniforms,
    run_ensemble,
    sample_turning_point,
    simulate_batch,
    simulate_particle,
    turning_point_from_uniform,
)

SYM = PhysicalParams(E=0.5, V0=1.0)


class TestTurningPoint:
    def test_inverse_cdf(self):
        assert turning_point_from_uniform(1.0, math.exp(-1)) == pytest.approx(0.5, rel=1e-15)
        assert turning_point_from_uniform(2.5, math.exp(-1)) == pytest.approx(0.2, rel=1e-15)
        assert turning_point_from_uniform(1.0, 1.0) == 0

    def test_mean(self):
        kappa = 1.7
        x = sample_turning_point(kappa, np.random.default_rng(1), 1_000_000)
        se = x.std(ddof=1) / math.sqrt(x.size)
        assert abs(x.mean() - 1 / (2 * kappa)) < 4 * se
        assert np.all(x >= 0) and np.all(np.isfinite(x))

    def test_ks(self):
        x = sample_turning_point(1.0, np.random.default_rng(2), 100_000)
        assert stats.kstest(x, lambda y: 1 - np.exp(-2 * y)).pvalue > 0.05

    def test_rejects_bad_kappa(self):
        with pytest.raises(ValueError):
            sample_turning_point(0.0, np.random.default_rng())


class TestEntryProbability:
    def test_symmetric(self):
        assert entry_probability(step_solution(SYM)) == 1.0

    def test_value(self):
        # k^2 = 0.4, kappa^2 = 1.6: 2 k kappa / (k^2 + kappa^2) = 1.6 / 2
        assert entry_probability(step_solution(PhysicalParams(E=0.2, V0=1.0))) == pytest.approx(0.8, rel=1e-14)

    @settings(max_examples=300, deadline=None)
    @given(st.floats(1e-4, 1 - 1e-4), st.floats(0.01, 100.0), st.floats(0.1, 10.0), st.floats(0.1, 10.0))
    def test_closed_form_and_bounds(self, ratio, V0, m, hbar):
        sol = step_solution(PhysicalParams(E=ratio * V0, V0=V0, m=m, hbar=hbar))
        a = entry_probability(sol)
        k, kap = sol.k, sol.kappa
        assert a == pytest.approx(2 * k * kap / (k * k + kap * kap), rel=1e-12)
        # AM-GM: 2 k kappa <= k^2 + kappa^2
        assert 0 < a <= 1


class TestDwellAnalytic:
    def test_symmetric(self):
        assert bbm_dwell_analytic(step_solution(SYM)) == pytest.approx(1.0, rel=1e-15)

    @settings(max_examples=300, deadline=None)
    @given(st.floats(1e-3, 0.999), st.floats(0.01, 100.0), st.floats(0.1, 10.0), st.floats(0.1, 10.0))
    def test_equals_qm(self, ratio, V0, m, hbar):
        sol = step_solution(PhysicalParams(E=ratio * V0, V0=V0, m=m, hbar=hbar))
        tq = qm_dwell_time(sol)
        assert abs(bbm_dwell_analytic(sol) - tq) / tq < 1e-12

    def test_vanishes_for_tall_step(self):
        taus = [bbm_dwell_analytic(step_solution(PhysicalParams(E=0.5, V0=V0))) for V0 in (1e1, 1e3, 1e5, 1e7)]
        assert all(b < a for a, b in zip(taus, taus[1:]))
        assert taus[-1] < 1e-9


class TestLeftFlight:
    def test_zero_distance(self):
        sol = step_solution(SYM)
        assert left_time_of_flight(sol, -1.3, -1.3) == 0

    def test_matches_quadrature(self):
        sol = step_solution(SYM)
        ref, _ = quad(lambda x: float(left_density(sol, x)), -math.pi, 0.0, epsabs=0, epsrel=1e-13, points=[-3 * math.pi / 4])
        assert left_time_of_flight(sol, -math.pi, 0.0) == pytest.approx(ref / (2 * sol.j_in), rel=1e-10)

    @pytest.mark.parametrize("E", [0.1, 0.5, 0.9])
    def test_full_period(self, E):
        sol = step_solution(PhysicalParams(E=E, V0=1.0))
        dt = left_time_of_flight(sol, -math.pi / sol.k, 0.0)
        assert dt == pytest.approx(math.pi / (sol.k * sol.j_in), rel=1e-13)

    def test_symmetric_in_direction(self):
        sol = step_solution(PhysicalParams(E=0.3, V0=1.0))
        assert left_time_of_flight(sol, -2.0, -0.5) == left_time_of_flight(sol, -0.5, -2.0)

    def test_rejects_right_region(self):
        with pytest.raises(ValueError):
            left_time_of_flight(step_solution(SYM), -1.0, 0.5)

    @pytest.mark.parametrize("direction", [1, -1])
    def test_inversion(self, direction):
        sol = step_solution(PhysicalParams(E=0.3, V0=1.0))
        x0 = -1.0 if direction > 0 else -0.2
        for dt in (0.01, 0.3, 1.1):
            x1 = left_position_after(sol, x0, dt, direction)
            assert (x1 - x0) * direction > 0
            assert left_time_of_flight(sol, x0, x1) == pytest.approx(dt, rel=1e-10)


class TestSingleParticle:
    def test_reflection_branch(self):
        p = PhysicalParams(E=0.05, V0=1.0)
        sol = step_solution(p)
        a = entry_probability(sol)
        cfg = BbmConfig(params=p, n_particles=1, seed=11)
        u = particle_uniforms(cfg.seed, 0, 50)
        idx = int(np.flatnonzero(u[:, 0] >= a)[0])
        out = simulate_particle(cfg, sol, idx)
        assert not out.entered and out.residence_right == 0 and out.x_star is None

    def test_entered_branch(self):
        sol = step_solution(PhysicalParams(E=0.3, V0=1.0))
        cfg = BbmConfig(params=sol.params, n_particles=1, seed=5)
        u = particle_uniforms(cfg.seed, 0, 50)
        idx = int(np.flatnonzero(u[:, 0] < entry_probability(sol))[0])
        out = simulate_particle(cfg, sol, idx)
        assert out.entered
        assert out.residence_right == pytest.approx(2 * out.x_star / sol.v_R, rel=1e-15)
        assert out.x_star == turning_point_from_uniform(sol.kappa, u[idx, 1])

    def test_lifecycle_events(self):
        sol = step_solution(PhysicalParams(E=0.3, V0=1.0))
        cfg = BbmConfig(params=sol.params, n_particles=1, seed=3)
        L = sol.period
        for i in range(20):
            out = simulate_particle(cfg, sol, i, record=True, samples_per_leg=3)
            rows = out.trajectory
            events = [r[3] for r in rows if r[3] != "left"]
            assert events[:2] == ["inject", "boundary"]
            assert events[-1] == "exit"
            assert events[2:-1] == (["turn", "cross"] if out.entered else ["reflect"])
            t = [r[0] for r in rows]
            assert all(b >= a for a, b in zip(t, t[1:]))
            for _, x, sigma, ev in rows:
                assert -L - 1e-12 <= x
                if x > 0:
                    # right-movers only until the turn
                    assert ev in ("turn",) or sigma == 1
            assert rows[-1][1] == -L and rows[-1][0] == pytest.approx(out.total_time)

    def test_batch_matches_event_driven(self):
        p = PhysicalParams(E=0.2, V0=1.0)
        sol = step_solution(p)
        cfg = BbmConfig(params=p, n_particles=300, seed=99)
        batch = simulate_batch(cfg, sol, 100, 300)
        for row, i in enumerate(range(100, 300)):
            out = simulate_particle(cfg, sol, i)
            assert out.entered == batch.entered[row]
            assert out.residence_right == batch.residence[row]
            assert out.total_time == pytest.approx(batch.lifetime[row], rel=1e-13)

    def test_mean_residence_per_entering_particle(self):
        # a = 1, kappa = 1, v_R = 1: mean residence 1 / (kappa v_R) = 1
        cfg = BbmConfig(params=SYM, n_particles=20_000, seed=4)
        sol = step_solution(SYM)
        b = simulate_batch(cfg, sol, 0, cfg.n_particles)
        res = b.residence[b.entered]
        assert b.entered.all()
        assert abs(res.mean() - 1.0) < 3 * res.std(ddof=1) / math.sqrt(res.size)


class TestEnsemble:
    def test_single_reflected_particle(self):
        p = PhysicalParams(E=0.01, V0=1.0)
        a = entry_probability(step_solution(p))
        seed = next(s for s in range(100) if particle_uniforms(s, 0, 1)[0, 0] >= a)
        est = run_ensemble(BbmConfig(params=p, n_particles=1, seed=seed))
        assert est.dwell_mean == 0 and est.dwell_stderr == 0 and est.entered_fraction == 0

    def test_stationary_density(self):
        p = PhysicalParams(E=0.3, V0=1.0)
        sol = step_solution(p)
        est = run_ensemble(BbmConfig(params=p, n_particles=40_000, seed=8, histogram_bins=50))
        e = est.bin_edges
        a = entry_probability(sol)
        ref_one = a * sol.j_in / sol.v_R * (np.exp(-2 * sol.kappa * e[:-1]) - np.exp(-2 * sol.kappa * e[1:])) / (2 * sol.kappa * np.diff(e))
        z = (est.density_hist_plus - ref_one) / est.density_stderr_plus
        assert np.all(np.abs(z) < 4)
        assert np.array_equal(est.density_hist_plus, est.density_hist_minus)
        assert est.dwell_stderr >= 0 and 0 <= est.entered_fraction <= 1

    def test_entered_fraction_and_turning_mean(self):
        p = PhysicalParams(E=0.8, V0=1.0)
        sol = step_solution(p)
        est = run_ensemble(BbmConfig(params=p, n_particles=30_000, seed=21))
        a = entry_probability(sol)
        assert abs(est.entered_fraction - a) < 3 * math.sqrt(a * (1 - a) / est.n_particles)
        assert abs(est.mean_turning_point - 1 / (2 * sol.kappa)) < 3 * est.turning_point_stderr

    def test_worker_independence(self):
        cfg = BbmConfig(params=PhysicalParams(E=0.2, V0=1.0), n_particles=5_003, seed=77)
        one = run_ensemble(cfg, workers=1)
        three = run_ensemble(cfg, workers=3)
        assert one.summary() == three.summary()
        assert np.array_equal(one.density_hist_plus, three.density_hist_plus)
        assert np.array_equal(one.density_stderr_plus, three.density_stderr_plus)

    def test_prefix_consistency(self):
        # particle i's fate depends only on (seed, i)
        cfg_small = BbmConfig(params=SYM, n_particles=10, seed=1)
        sol = step_solution(SYM)
        a = simulate_batch(cfg_small, sol, 0, 10)
        b = simulate_batch(BbmConfig(params=SYM, n_particles=1000, seed=1), sol, 0, 1000)
        assert np.array_equal(a.x_star, b.x_star[:10])

    def test_config_validation(self):
        with pytest.raises(ValueError):
            BbmConfig(params=SYM, n_particles=0)
        with pytest.raises(ValueError):
            BbmConfig(params=SYM, seed=-1)
        with pytest.raises(ValueError):
            BbmConfig(params=SYM, left_extent=0.0)

    def test_left_extent_does_not_change_dwell(self):
        base = run_ensemble(BbmConfig(params=SYM, n_particles=2000, seed=9))
        longer = run_ensemble(BbmConfig(params=SYM, n_particles=2000, seed=9, left_extent=7.3))
        assert base.dwell_mean == longer.dwell_mean
        assert longer.mean_lifetime > base.mean_lifetime


def test_trajectory_dump_cap():
    cfg = BbmConfig(params=SYM, n_particles=5, seed=1)
    rows = dump_trajectories(cfg, 3, samples_per_leg=2)
    assert {r[0] for r in rows} == {0, 1, 2}
    with pytest.raises(ValueError):
        dump_trajectories(cfg, 10, cap=5)
