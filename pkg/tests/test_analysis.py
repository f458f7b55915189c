import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tunnelspeed.analysis import (
    SWEEP_COLUMNS,
    binomial_noise,
    expand_grid,
    fit_speed,
    invariance_check,
    population_samples,
    qm_dwell_time,
    qm_dwell_time_quadrature,
    sweep,
)
from tunnelspeed.analytic import PhysicalParams, characteristic_speed, dilation_transform, step_solution
from tunnelspeed.bbm import BbmConfig
from tunnelspeed.errors import DegenerateFit, FitWindowTooWide

SYM = PhysicalParams(E=0.5, V0=1.0)
ALPHAS = (0.1, 0.5, 2.0, 10.0)


def waveguide(delta_over_hJ, J=0.005, E=0.5):
    # choose V0 so that delta = E + J - V0 hits the requested multiple of hbar*J
    return PhysicalParams(E=E, V0=E + J - delta_over_hJ * J, J=J)


class TestDwell:
    def test_symmetric(self):
        assert qm_dwell_time(step_solution(SYM)) == pytest.approx(1.0, rel=1e-15)

    @pytest.mark.parametrize("E,V0,m,hbar", [(0.5, 1, 1, 1), (0.01, 1, 1, 1), (0.99, 1, 1, 1), (3.0, 7.5, 2.0, 0.3), (1e-3, 40.0, 0.5, 2.0)])
    def test_quadrature(self, E, V0, m, hbar):
        sol = step_solution(PhysicalParams(E=E, V0=V0, m=m, hbar=hbar))
        assert abs(qm_dwell_time_quadrature(sol) / qm_dwell_time(sol) - 1) < 1e-9

    @pytest.mark.parametrize("alpha", ALPHAS)
    def test_scales_with_time_dilation(self, alpha):
        for ratio in (0.2, 0.5, 0.8):
            p = PhysicalParams(E=ratio, V0=1.0)
            tau = qm_dwell_time(step_solution(p))
            tau_new = qm_dwell_time(step_solution(dilation_transform(p, alpha, "time")))
            assert tau_new == pytest.approx(alpha * tau, rel=1e-13)


class TestFit:
    def test_asymptotic_generator(self):
        J, v = 0.1, 1.0
        xs = np.linspace(0.01, 0.5, 50)  # J x / v <= 0.05
        p = [float(np.sin(J * x / v) ** 2) for x in xs]
        res = fit_speed(zip(xs, p), J)
        assert abs(res.v_hat - v) / v < 5e-3
        assert res.n_points == 50 and res.x_max_over_scale <= 0.1

    @pytest.mark.parametrize("sign", [1, -1])
    def test_exact_at_100(self, sign):
        p = waveguide(100 * sign)
        v = characteristic_speed(p)
        xs = np.linspace(0, 0.1 * v / p.J, 101)[1:]
        res = fit_speed(population_samples(p, xs, "exact"), p.J)
        assert abs(res.v_hat - v) / v < 1e-2

    def test_error_shrinks_with_window(self):
        J, v = 0.2, 3.0
        errs = []
        for w in (0.1, 0.03, 0.01):
            xs = np.linspace(0, w * v / J, 41)[1:]
            res = fit_speed(zip(xs, np.sin(J * xs / v) ** 2), J)
            errs.append(abs(res.v_hat - v) / v)
        assert errs[0] > errs[1] > errs[2]
        assert errs[2] < 3e-5

    def test_window_is_trimmed(self):
        J, v = 0.1, 1.0
        xs = np.linspace(0.05, 2.2, 80)  # up to J x / v = 0.22, p_a ~ 0.048
        res = fit_speed(zip(xs, np.sin(J * xs / v) ** 2), J)
        assert res.x_max_over_scale <= 0.1 and res.n_points < 80
        assert abs(res.v_hat - v) < 5e-3

    def test_window_too_wide(self):
        # only two samples fall inside the small-x window
        xs = [0.5, 0.9, 1.5, 1.8, 2.0]
        with pytest.raises(FitWindowTooWide):
            fit_speed([(x, math.sin(0.1 * x) ** 2) for x in xs], 0.1)

    def test_repeated_x_is_degenerate(self):
        with pytest.raises(DegenerateFit):
            fit_speed([(0.3, 0.001), (0.3, 0.002), (0.3, 0.0015)], 0.1)

    def test_too_few_samples(self):
        with pytest.raises(DegenerateFit):
            fit_speed([(0.1, 1e-4), (0.2, 4e-4)], 0.1)

    def test_nonpositive_slope(self):
        with pytest.raises(DegenerateFit):
            fit_speed([(0.1, 0.0), (0.2, 0.0), (0.3, 0.0)], 0.1)

    def test_binomial_noise(self):
        rng = np.random.default_rng(2024)
        p = waveguide(100)
        v = characteristic_speed(p)
        xs = np.linspace(0, 0.1 * v / p.J, 101)[1:]
        clean = population_samples(p, xs, "exact")
        noisy = np.column_stack([xs, binomial_noise(clean[:, 1], 10_000, rng)])
        assert abs(fit_speed(noisy, p.J).v_hat - v) / v < 0.05

    def test_binomial_noise_range(self):
        out = binomial_noise([0.0, 0.5, 1.0], 100, np.random.default_rng(0))
        assert out[0] == 0 and out[2] == 1 and 0 <= out[1] <= 1


class TestInvariance:
    XS = np.linspace(0, 50, 100)

    def test_identity(self):
        rep = invariance_check(waveguide(100), 1.0, "time", self.XS)
        assert rep.max_abs_deviation == 0 and rep.passed

    @pytest.mark.parametrize("mode", ["space", "time"])
    @pytest.mark.parametrize("alpha", ALPHAS + (3.0,))
    @pytest.mark.parametrize("sign", [1, -1])
    def test_asymptotic(self, mode, alpha, sign):
        rep = invariance_check(waveguide(100 * sign), alpha, mode, self.XS)
        assert rep.passed and rep.max_abs_deviation < 1e-12
        assert rep.v_ratio == pytest.approx(alpha if mode == "space" else 1 / alpha, rel=1e-14)

    def test_space_half(self):
        p = waveguide(100)
        assert characteristic_speed(dilation_transform(p, 0.5, "space")) == pytest.approx(0.5 * characteristic_speed(p), rel=1e-15)

    @pytest.mark.parametrize("mode", ["space", "time"])
    def test_exact_form_also_invariant(self, mode):
        rep = invariance_check(waveguide(7), 2.0, mode, self.XS, form="exact")
        assert rep.max_abs_deviation < 1e-12

    def test_sign_symmetry(self):
        # powers of two keep delta exact so both signs share |delta|
        J = 2.0**-8
        plus, minus = waveguide(100, J=J), waveguide(-100, J=J)
        assert plus.delta == -minus.delta
        assert characteristic_speed(plus) == characteristic_speed(minus)
        for mode in ("space", "time"):
            a = invariance_check(plus, 2.0, mode, self.XS)
            b = invariance_check(minus, 2.0, mode, self.XS)
            assert (a.v_ratio, a.passed) == (b.v_ratio, b.passed)

    def test_rejects_bad_alpha(self):
        with pytest.raises(ValueError):
            invariance_check(SYM, 0.0, "space", self.XS)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.05, 20.0), st.floats(1.0, 1e3), st.sampled_from([1, -1]), st.sampled_from(["space", "time"]))
def test_invariance_property(alpha, ratio, sign, mode):
    rep = invariance_check(waveguide(ratio * sign), alpha, mode, np.linspace(0, 10, 20))
    assert rep.passed


class TestSweep:
    def test_single_point(self):
        (row,) = sweep([SYM])
        assert row["tau_qm"] == pytest.approx(1.0, rel=1e-15)
        assert row["tau_bbm"] == pytest.approx(1.0, rel=1e-15)
        assert row["a"] == pytest.approx(1.0, rel=1e-15)
        assert row["error"] == ""
        assert list(row) == SWEEP_COLUMNS

    def test_ratio_grid(self):
        rows = sweep(expand_grid(SYM, {"E_over_V0": np.arange(1, 10) / 10}))
        assert [r["E"] for r in rows] == pytest.approx(np.arange(1, 10) / 10)
        assert all(r["tau_rel_diff"] < 1e-12 for r in rows)

    def test_empty(self):
        assert sweep([]) == []

    def test_errors_recorded(self):
        rows = sweep(expand_grid(SYM, {"E": [0.5, 1.5, -1.0, 0.2]}))
        assert [r["error"] == "" for r in rows] == [True, False, False, True]
        assert "InvalidRegime" in rows[1]["error"]
        assert rows[3]["tau_qm"] != ""

    def test_grid_order(self):
        grid = expand_grid(SYM, {"V0": [1.0, 2.0], "E": [0.1, 0.2, 0.3]})
        assert [(p.V0, p.E) for p in grid] == [(1, 0.1), (1, 0.2), (1, 0.3), (2, 0.1), (2, 0.2), (2, 0.3)]

    def test_unknown_axis(self):
        with pytest.raises(ValueError):
            expand_grid(SYM, {"temperature": [1.0]})

    def test_monte_carlo_columns(self):
        mc = BbmConfig(params=SYM, n_particles=2000, seed=3)
        (row,) = sweep([SYM], mc)
        assert abs(row["mc_dwell_mean"] - 1.0) < 4 * row["mc_dwell_stderr"]
        assert row["mc_entered_fraction"] == 1.0
