import math

import numpy as np
import pytest
import torch

from sbufogen.kernels import (
    BridgeState,
    marginal_sample,
    posterior_params,
    reverse_step_deterministic,
    reverse_step_stochastic,
    transition_sample,
    ufogen_infer,
)
from sbufogen.schedule import ScheduleError, ScheduleParams, marginal_coeffs, transition_params

N_MC = 100_000


def gen(seed=0):
    return torch.Generator().manual_seed(seed)


def scalar_batch(value, n=N_MC):
    return torch.full((n,), float(value), dtype=torch.float64)


def assert_moments(samples, mean, var, k=3.0):
    """Sample mean and variance within ``k`` standard errors of the targets."""
    n = samples.numel()
    m = samples.mean().item()
    v = samples.var().item()
    assert abs(m - mean) <= k * math.sqrt(max(var, 1e-300) / n) + 1e-12, (m, mean)
    assert abs(v - var) <= k * var * math.sqrt(2.0 / (n - 1)) + 1e-12, (v, var)


def joint_conditioning(x_t, x0, y, s, t, sched):
    """Posterior of x_s given x_t from the explicit 2x2 joint covariance."""
    ms = marginal_coeffs(s, sched)
    tp = transition_params(s, t, sched)
    m_s = ms.w_x * x0 + ms.w_y * y
    m_t = tp.coef_x * m_s + tp.coef_y * y
    cov = np.array(
        [
            [ms.var_x, tp.coef_x * ms.var_x],
            [tp.coef_x * ms.var_x, tp.coef_x**2 * ms.var_x + tp.var],
        ]
    )
    gain = cov[0, 1] / cov[1, 1]
    return m_s + gain * (x_t - m_t), cov[0, 0] - gain * cov[1, 0]


class TestMarginalSample:
    def test_endpoints_exact(self):
        sched = ScheduleParams()
        x0 = torch.randn(64, dtype=torch.float64)
        y = torch.randn(64, dtype=torch.float64)
        assert torch.equal(marginal_sample(x0, y, 0.0, sched, gen()), x0)
        assert torch.equal(marginal_sample(x0, y, 1.0, sched, gen()), y)

    def test_moments(self):
        sched = ScheduleParams()
        out = marginal_sample(scalar_batch(0.0), scalar_batch(1.0), 0.5, sched, gen(1))
        co = marginal_coeffs(0.5, sched)
        assert abs(out.mean().item() - co.w_y) <= 3 * co.sigma_x / math.sqrt(N_MC)
        assert out.var().item() == pytest.approx(co.var_x, rel=0.05)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            marginal_sample(torch.zeros(3), torch.zeros(4), 0.5, ScheduleParams(), gen())

    def test_seed_determinism(self):
        sched = ScheduleParams()
        x0, y = torch.randn(10), torch.randn(10)
        a = marginal_sample(x0, y, 0.3, sched, gen(5))
        b = marginal_sample(x0, y, 0.3, sched, gen(5))
        assert torch.equal(a, b)


class TestTransitionSample:
    def test_to_terminal_returns_y(self):
        sched = ScheduleParams()
        x_prev = torch.randn(32, dtype=torch.float64)
        y = torch.randn(32, dtype=torch.float64)
        assert torch.equal(transition_sample(x_prev, y, 0.75, 1.0, sched, gen()), y)

    def test_zero_length_limit(self):
        sched = ScheduleParams()
        x_prev = torch.randn(32, dtype=torch.float64)
        y = torch.randn(32, dtype=torch.float64)
        out = transition_sample(x_prev, y, 0.5, 0.5 + 1e-12, sched, gen())
        torch.testing.assert_close(out, x_prev, atol=1e-5, rtol=0)

    def test_errors(self):
        sched = ScheduleParams()
        z = torch.zeros(3)
        with pytest.raises(ScheduleError):
            transition_sample(z, z, 0.5, 0.25, sched, gen())
        with pytest.raises(ScheduleError):
            transition_sample(z, z, 1.0, 1.0, sched, gen())

    @pytest.mark.parametrize("n", [1, 2, 3, 4])
    def test_chapman_kolmogorov(self, n):
        sched = ScheduleParams(n_steps=4)
        times = sched.grid()
        x0, y = scalar_batch(0.0), scalar_batch(1.0)
        prev = marginal_sample(x0, y, times[n - 1], sched, gen(10 + n))
        out = transition_sample(prev, y, times[n - 1], times[n], sched, gen(20 + n))
        co = marginal_coeffs(times[n], sched)
        if co.var_x == 0.0:
            assert torch.equal(out, y)
        else:
            assert_moments(out, co.w_y, co.var_x)


class TestPosterior:
    def test_s_zero_pins_x0(self):
        sched = ScheduleParams()
        x_t, x0, y = torch.randn(8), torch.randn(8), torch.randn(8)
        post = posterior_params(x_t, x0, y, 0.0, 0.5, sched)
        assert post.var == 0.0
        torch.testing.assert_close(post.mean, x0)

    def test_s_to_t_limit(self):
        sched = ScheduleParams()
        x_t, x0, y = (torch.randn(8, dtype=torch.float64) for _ in range(3))
        post = posterior_params(x_t, x0, y, 0.5 - 1e-10, 0.5, sched)
        torch.testing.assert_close(post.mean, x_t, atol=1e-6, rtol=0)
        assert post.var < 1e-8

    def test_ordering(self):
        z = torch.zeros(2)
        with pytest.raises(ScheduleError):
            posterior_params(z, z, z, 0.5, 0.5, ScheduleParams())

    def test_matches_joint_conditioning(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            sched = ScheduleParams(c=float(rng.uniform(0.05, 2.0)), k=float(rng.uniform(1.2, 20.0)))
            s, t = np.sort(rng.uniform(0.001, 0.999, 2))
            x_t, x0, y = rng.normal(size=3)
            post = posterior_params(
                torch.tensor([x_t], dtype=torch.float64),
                torch.tensor([x0], dtype=torch.float64),
                torch.tensor([y], dtype=torch.float64),
                s,
                t,
                sched,
            )
            mean, var = joint_conditioning(x_t, x0, y, s, t, sched)
            assert post.mean.item() == pytest.approx(mean, abs=1e-8)
            assert post.var == pytest.approx(var, abs=1e-8)


class TestReverseSamplers:
    def test_stochastic_preserves_marginals(self):
        sched = ScheduleParams(n_steps=4)
        times = sched.grid()
        x0, y = scalar_batch(0.0), scalar_batch(1.0)
        rng = gen(3)
        state = BridgeState(t=1.0, x=y.clone(), y=y)
        for n in range(4, 0, -1):
            state = reverse_step_stochastic(state, x0, times[n - 1], sched, rng)
            co = marginal_coeffs(times[n - 1], sched)
            assert_moments(state.x, co.w_y, co.var_x)

    def test_stochastic_to_zero_returns_x0_hat(self):
        sched = ScheduleParams()
        x0, y = torch.randn(16), torch.randn(16)
        state = BridgeState(t=0.5, x=torch.randn(16), y=y)
        out = reverse_step_stochastic(state, x0, 0.0, sched, gen())
        assert torch.equal(out.x, x0)

    def test_stochastic_single_step_from_terminal(self):
        sched = ScheduleParams()
        x0, y = torch.randn(16, dtype=torch.float64), torch.randn(16, dtype=torch.float64)
        state = BridgeState(t=1.0, x=y, y=y)
        out = reverse_step_stochastic(state, x0, sched.t_eps, sched, gen(4))
        expected = posterior_params(y, x0, y, sched.t_eps, 1.0, sched).sample(gen(4))
        assert torch.equal(out.x, expected)

    def test_deterministic_from_terminal_lands_on_mean(self):
        sched = ScheduleParams()
        x0, y = torch.randn(16, dtype=torch.float64), torch.randn(16, dtype=torch.float64)
        out = reverse_step_deterministic(BridgeState(t=1.0, x=y, y=y), x0, 0.5, sched)
        co = marginal_coeffs(0.5, sched)
        torch.testing.assert_close(out.x, co.w_x * x0 + co.w_y * y)

    def test_deterministic_preserves_marginals(self):
        sched = ScheduleParams(n_steps=4)
        times = sched.grid()
        x0, y = scalar_batch(0.0), scalar_batch(1.0)
        x = marginal_sample(x0, y, times[3], sched, gen(8))
        state = BridgeState(t=times[3], x=x, y=y)
        for n in range(3, 0, -1):
            state = reverse_step_deterministic(state, x0, times[n - 1], sched)
            co = marginal_coeffs(times[n - 1], sched)
            assert_moments(state.x, co.w_y, co.var_x)

    def test_deterministic_degenerate_prediction(self):
        sched = ScheduleParams()
        y = torch.randn(16, dtype=torch.float64)
        x = torch.randn(16, dtype=torch.float64)
        state = BridgeState(t=0.75, x=x, y=y)
        out = reverse_step_deterministic(state, y, 0.25, sched)
        cur, nxt = marginal_coeffs(0.75, sched), marginal_coeffs(0.25, sched)
        r = (x - y) / cur.sigma_x
        torch.testing.assert_close(out.x, y + nxt.sigma_x * r)

    def test_ordering(self):
        y = torch.zeros(3)
        state = BridgeState(t=0.5, x=y, y=y)
        with pytest.raises(ScheduleError):
            reverse_step_deterministic(state, y, 0.5, ScheduleParams())
        with pytest.raises(ScheduleError):
            reverse_step_stochastic(state, y, 0.75, ScheduleParams(), gen())


class TestUfogenInfer:
    @pytest.mark.parametrize("mode", ["marginal", "stochastic", "deterministic"])
    @pytest.mark.parametrize("n_steps", [1, 2, 3, 4])
    def test_oracle_generator_exact(self, mode, n_steps):
        x0 = torch.randn(4, 100)
        y = x0 + torch.randn(4, 100)
        out = ufogen_infer(y, lambda x, yy, t: x0, n_steps, ScheduleParams(), gen(), mode)
        assert torch.equal(out, x0)

    def test_single_step_is_one_call(self):
        calls = []

        def g(x, y, t):
            calls.append((x.clone(), t))
            return 0.5 * x

        y = torch.randn(10)
        out = ufogen_infer(y, g, 1, ScheduleParams(), gen())
        assert len(calls) == 1
        assert torch.equal(calls[0][0], y) and calls[0][1] == 1.0
        assert torch.equal(out, 0.5 * y)

    def test_call_times(self):
        seen = []
        ufogen_infer(torch.zeros(3), lambda x, y, t: seen.append(t) or x, 4, ScheduleParams(), gen())
        assert seen == [1.0, 0.75, 0.5, 0.25]

    def test_step_range(self):
        g = lambda x, y, t: x
        with pytest.raises(ScheduleError):
            ufogen_infer(torch.zeros(3), g, 0, ScheduleParams(), gen())
        with pytest.raises(ScheduleError):
            ufogen_infer(torch.zeros(3), g, 5, ScheduleParams(n_steps=4), gen())
        with pytest.raises(ValueError):
            ufogen_infer(torch.zeros(3), g, 1, ScheduleParams(), gen(), mode="euler")

    def test_marginal_mode_renoises_prediction(self):
        sched = ScheduleParams()
        y = torch.randn(50, dtype=torch.float64)
        x0 = torch.randn(50, dtype=torch.float64)
        inputs = []

        def g(x, yy, t):
            inputs.append(x.clone())
            return x0

        ufogen_infer(y, g, 2, sched, gen(9), "marginal")
        expected = marginal_sample(x0, y, 0.5, sched, gen(9))
        assert torch.equal(inputs[1], expected)
