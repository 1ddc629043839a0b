import math

import numpy as np
import pytest
import sympy as sp

from sbufogen.schedule import (
    ScheduleError,
    ScheduleParams,
    marginal_coeffs,
    sigma_sq,
    transition_params,
)


def random_schedules(n, seed=0):
    rng = np.random.default_rng(seed)
    return [ScheduleParams(c=float(rng.uniform(0.05, 2.0)), k=float(rng.uniform(1.2, 20.0))) for _ in range(n)]


def bridge_cov(s, t, sched):
    """Covariance of the pinned VE process at times s <= t.

    The process is a Brownian motion run in variance-time sigma^2(t) and pinned
    at T, so Cov = sigma^2(s) (sigma_T^2 - sigma^2(t)) / sigma_T^2.
    """
    end = sched.c * (sched.k**2 - 1) / (2 * math.log(sched.k))
    vs = sched.c * (sched.k ** (2 * s) - 1) / (2 * math.log(sched.k))
    vt = sched.c * (sched.k ** (2 * t) - 1) / (2 * math.log(sched.k))
    return vs * (end - vt) / end


class TestScheduleParams:
    def test_defaults_valid(self):
        sched = ScheduleParams()
        assert sched.c == 0.40 and sched.k == 2.6 and sched.t_eps == 0.03 and sched.n_steps == 4

    @pytest.mark.parametrize(
        "kwargs",
        [dict(c=0.0), dict(c=-1.0), dict(k=1.0), dict(k=0.5), dict(t_eps=0.0), dict(t_eps=0.25), dict(n_steps=0)],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ScheduleError):
            ScheduleParams(**kwargs)

    def test_grid(self):
        grid = ScheduleParams(t_eps=0.03, n_steps=4).grid()
        np.testing.assert_array_equal(grid, [0.03, 0.25, 0.5, 0.75, 1.0])
        assert np.all(np.diff(grid) > 0)


class TestSigmaSq:
    def test_zero_at_origin(self):
        assert sigma_sq(0.0, ScheduleParams()) == 0.0

    def test_matches_quadrature(self):
        sched = ScheduleParams(c=0.4, k=2.6)
        tau = np.linspace(0.0, 1.0, 1_000_001)
        quad = np.trapezoid(sched.c * sched.k ** (2 * tau), tau)
        assert sigma_sq(1.0, sched) == pytest.approx(quad, rel=1e-8)
        assert sigma_sq(1.0, sched) == pytest.approx(0.4 * (2.6**2 - 1) / (2 * math.log(2.6)), rel=1e-14)

    @pytest.mark.parametrize("sched", random_schedules(5, seed=3))
    def test_quadrature_random(self, sched):
        for t in (0.1, 0.37, 0.8):
            tau = np.linspace(0.0, t, 200_001)
            quad = np.trapezoid(sched.c * sched.k ** (2 * tau), tau)
            assert sigma_sq(t, sched) == pytest.approx(quad, rel=1e-8)

    def test_monotone(self):
        sched = ScheduleParams()
        assert sigma_sq(0.5, sched) > sigma_sq(0.25, sched)
        vals = [sigma_sq(t, sched) for t in np.linspace(0, 1, 101)]
        assert np.all(np.diff(vals) > 0)

    @pytest.mark.parametrize("t", [-0.01, 1.01, float("nan")])
    def test_domain(self, t):
        with pytest.raises(ScheduleError):
            sigma_sq(t, ScheduleParams())


class TestMarginalCoeffs:
    def test_boundaries(self):
        sched = ScheduleParams()
        c0 = marginal_coeffs(0.0, sched)
        assert (c0.w_x, c0.w_y, c0.sigma_x) == (1.0, 0.0, 0.0)
        c1 = marginal_coeffs(1.0, sched)
        assert (c1.w_x, c1.w_y, c1.sigma_x) == (0.0, 1.0, 0.0)

    def test_identities_grid(self):
        for sched in random_schedules(100, seed=1):
            end = sigma_sq(1.0, sched)
            for t in np.linspace(0.0, 1.0, 1000):
                co = marginal_coeffs(t, sched)
                assert co.alpha == 1.0
                assert abs(co.w_x + co.w_y - 1.0) <= 1e-12
                assert abs(co.sigma2 + co.sigma2_bar - end) <= 1e-12 * end
                assert co.sigma2 >= 0 and co.sigma2_bar >= 0

    def test_variance_positive_inside(self):
        sched = ScheduleParams()
        for t in np.linspace(1e-6, 1 - 1e-6, 500):
            assert marginal_coeffs(t, sched).sigma_x > 0

    def test_monte_carlo_bridge(self):
        # Brownian bridge in variance-time pinned at x0 = 0 and y = 1, built
        # from independent increments rather than the closed-form weights.
        sched = ScheduleParams(c=0.4, k=2.6)
        t = 0.5
        rng = np.random.default_rng(7)
        n = 1_000_000
        end = sched.c * (sched.k**2 - 1) / (2 * math.log(sched.k))
        v_t = sched.c * (sched.k ** (2 * t) - 1) / (2 * math.log(sched.k))
        b_t = math.sqrt(v_t) * rng.standard_normal(n)
        b_end = b_t + math.sqrt(end - v_t) * rng.standard_normal(n)
        x_t = b_t - (v_t / end) * (b_end - 1.0)
        co = marginal_coeffs(t, sched)
        se = x_t.std() / math.sqrt(n)
        assert abs(x_t.mean() - co.w_y) < 3 * se
        assert co.w_x + co.w_y == pytest.approx(1.0, abs=1e-12)
        assert co.var_x == pytest.approx(co.sigma2_bar * co.sigma2 / end, rel=1e-12)
        assert x_t.var() == pytest.approx(co.var_x, rel=0.01)


class TestTransitionParams:
    def test_final_transition_collapses(self):
        sched = ScheduleParams()
        tp = transition_params(0.75, 1.0, sched)
        assert (tp.coef_x, tp.coef_y, tp.var) == (0.0, 1.0, 0.0)

    def test_degenerate_limit(self):
        sched = ScheduleParams()
        tp = transition_params(0.4, 0.4 + 1e-9, sched)
        assert tp.coef_x == pytest.approx(1.0, abs=1e-8)
        assert tp.coef_y == pytest.approx(0.0, abs=1e-8)
        assert tp.var == pytest.approx(0.0, abs=1e-8)

    def test_ordering_and_terminal_errors(self):
        sched = ScheduleParams()
        with pytest.raises(ScheduleError):
            transition_params(0.5, 0.5, sched)
        with pytest.raises(ScheduleError):
            transition_params(0.6, 0.5, sched)
        with pytest.raises(ScheduleError):
            transition_params(1.0, 1.0, sched)

    def test_composition_random(self):
        rng = np.random.default_rng(11)
        for sched in random_schedules(100, seed=2):
            for _ in range(20):
                s, t = np.sort(rng.uniform(0.0, 1.0, 2))
                if s == t:
                    continue
                a_ = marginal_coeffs(s, sched)
                b_ = marginal_coeffs(t, sched)
                tp = transition_params(s, t, sched)
                assert tp.coef_x * a_.w_x == pytest.approx(b_.w_x, rel=1e-10, abs=1e-300)
                assert tp.coef_x * a_.w_y + tp.coef_y == pytest.approx(b_.w_y, rel=1e-10)
                assert tp.coef_x**2 * a_.var_x + tp.var == pytest.approx(b_.var_x, rel=1e-10, abs=1e-15)

    def test_matches_gaussian_process_conditioning(self):
        # Markov kernel of the pinned process: a = K(s,t)/K(s,s),
        # var = K(t,t) - K(s,t)^2 / K(s,s).
        rng = np.random.default_rng(5)
        for sched in random_schedules(30, seed=9):
            for _ in range(10):
                s, t = np.sort(rng.uniform(0.01, 0.99, 2))
                kss, kst, ktt = bridge_cov(s, s, sched), bridge_cov(s, t, sched), bridge_cov(t, t, sched)
                tp = transition_params(s, t, sched)
                assert tp.coef_x == pytest.approx(kst / kss, rel=1e-9)
                assert tp.var == pytest.approx(ktt - kst**2 / kss, rel=1e-7, abs=1e-12)

    def test_symbolic_composition(self):
        c, k, s, t = sp.symbols("c k s t", positive=True)
        var = lambda u: c * (k ** (2 * u) - 1) / (2 * sp.log(k))
        end = var(1)
        w_x = lambda u: (end - var(u)) / end
        w_y = lambda u: var(u) / end
        vx = lambda u: (end - var(u)) * var(u) / end
        a = w_x(t) / w_x(s)
        b = w_y(t) - a * w_y(s)
        trans_var = vx(t) - a**2 * vx(s)
        # the forward kernel cancels the x0 coefficient and is non-negative
        assert sp.simplify(a * w_x(s) - w_x(t)) == 0
        assert sp.simplify(a * w_y(s) + b - w_y(t)) == 0
        # variance equals the Brownian-bridge increment variance
        increment = (var(t) - var(s)) * (end - var(t)) / (end - var(s))
        assert sp.simplify(trans_var - increment) == 0
