"""Sampling operations on the Gaussian bridge.

Every function takes torch tensors for the signals and an explicit
``torch.Generator`` for randomness, so a seed fully determines the output.
Coefficients come from :mod:`sbufogen.schedule` in float64 and are applied as
Python scalars, which keeps the tensors' own dtype.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import torch

from .schedule import ScheduleError, ScheduleParams, marginal_coeffs, transition_params

__all__ = [
    "BridgeState",
    "PosteriorParams",
    "marginal_mean",
    "marginal_sample",
    "transition_sample",
    "posterior_params",
    "reverse_step_stochastic",
    "reverse_step_deterministic",
    "ufogen_infer",
    "SAMPLER_MODES",
]

SAMPLER_MODES = ("marginal", "stochastic", "deterministic")

Generator = Callable[[torch.Tensor, torch.Tensor, float], torch.Tensor]


@dataclass
class BridgeState:
    t: float
    x: torch.Tensor
    y: torch.Tensor

    def __post_init__(self):
        _check_shapes(self.x, self.y)


@dataclass
class PosteriorParams:
    mean: torch.Tensor
    var: float

    def sample(self, rng: torch.Generator | None) -> torch.Tensor:
        if self.var == 0.0:
            return self.mean.clone()
        return self.mean + math.sqrt(self.var) * _noise_like(self.mean, rng)


def _check_shapes(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def _noise_like(x: torch.Tensor, rng: torch.Generator | None) -> torch.Tensor:
    return torch.randn(x.shape, generator=rng, dtype=x.dtype, device=x.device)


def marginal_mean(x0: torch.Tensor, y: torch.Tensor, t: float, sched: ScheduleParams) -> torch.Tensor:
    _check_shapes(x0, y)
    co = marginal_coeffs(t, sched)
    return co.w_x * x0 + co.w_y * y


def marginal_sample(x0, y, t, sched, rng):
    """Draw ``x_t ~ N(w_x x0 + w_y y, sigma_x^2)``.

    Returns ``x0`` exactly at ``t = 0`` and ``y`` exactly at ``t = 1``.
    """
    _check_shapes(x0, y)
    co = marginal_coeffs(t, sched)
    if co.w_y == 0.0 and co.sigma_x == 0.0:
        return x0.clone()
    if co.w_x == 0.0 and co.sigma_x == 0.0:
        return y.clone()
    out = co.w_x * x0 + co.w_y * y
    if co.sigma_x > 0.0:
        out = out + co.sigma_x * _noise_like(x0, rng)
    return out


def transition_sample(x_prev, y, t_from, t_to, sched, rng):
    """Draw ``x_{t_to}`` from the forward kernel given ``x_{t_from}`` and ``y``."""
    _check_shapes(x_prev, y)
    tp = transition_params(t_from, t_to, sched)
    if tp.coef_x == 0.0 and tp.var == 0.0:
        return y.clone()
    out = tp.coef_x * x_prev + tp.coef_y * y
    if tp.var > 0.0:
        out = out + math.sqrt(tp.var) * _noise_like(x_prev, rng)
    return out


def posterior_params(x_t, x0_hat, y, s, t, sched) -> PosteriorParams:
    """Exact Gaussian law of ``x_s`` given ``x_t``, ``x0_hat`` and ``y`` for ``s < t``.

    Combines the marginal prior ``q(x_s | x0_hat, y)`` with the forward
    likelihood ``q(x_t | x_s, y)``.  Either factor may be a point mass, in
    which case that factor pins the result.
    """
    _check_shapes(x_t, y)
    _check_shapes(x0_hat, y)
    s = float(s)
    t = float(t)
    if not s < t:
        raise ScheduleError(f"posterior requires s < t, got {s} >= {t}")
    prior = marginal_coeffs(s, sched)
    prior_mean = prior.w_x * x0_hat + prior.w_y * y
    prior_var = prior.var_x
    if prior_var == 0.0:
        return PosteriorParams(mean=prior_mean, var=0.0)
    tp = transition_params(s, t, sched)
    if tp.var == 0.0:
        if tp.coef_x == 0.0:
            # x_t carries no information about x_s (t is terminal)
            return PosteriorParams(mean=prior_mean, var=prior_var)
        return PosteriorParams(mean=(x_t - tp.coef_y * y) / tp.coef_x, var=0.0)
    a = tp.coef_x
    precision = 1.0 / prior_var + a * a / tp.var
    var = 1.0 / precision
    w_prior = var / prior_var
    w_obs = var * a / tp.var
    mean = w_prior * prior_mean + w_obs * (x_t - tp.coef_y * y)
    return PosteriorParams(mean=mean, var=var)


def reverse_step_stochastic(state: BridgeState, x0_hat, t_to, sched, rng) -> BridgeState:
    """Ancestral step: sample ``x_{t_to}`` from the bridge posterior."""
    if not t_to < state.t:
        raise ScheduleError(f"reverse step requires t_to < t, got {t_to} >= {state.t}")
    post = posterior_params(state.x, x0_hat, state.y, t_to, state.t, sched)
    return BridgeState(t=float(t_to), x=post.sample(rng), y=state.y)


def reverse_step_deterministic(state: BridgeState, x0_hat, t_to, sched) -> BridgeState:
    """Noise-preserving deterministic step.

    The standardized residual ``r = (x - mean_t) / sigma_x(t)`` is carried
    over unchanged to ``t_to``; ``r = 0`` where ``sigma_x(t) = 0``.
    """
    if not t_to < state.t:
        raise ScheduleError(f"reverse step requires t_to < t, got {t_to} >= {state.t}")
    _check_shapes(x0_hat, state.y)
    cur = marginal_coeffs(state.t, sched)
    nxt = marginal_coeffs(t_to, sched)
    x_new = nxt.w_x * x0_hat + nxt.w_y * state.y
    if cur.sigma_x > 0.0 and nxt.sigma_x > 0.0:
        r = (state.x - cur.w_x * x0_hat - cur.w_y * state.y) / cur.sigma_x
        x_new = x_new + nxt.sigma_x * r
    return BridgeState(t=float(t_to), x=x_new, y=state.y)


def ufogen_infer(y, generator: Generator, n_steps: int, sched: ScheduleParams, rng=None, mode: str = "marginal"):
    """Few-step enhancement of ``y``.

    Walks the grid ``1 = t_n > ... > t_1`` of an ``n_steps`` discretization.
    At each time the generator predicts ``x0``; if steps remain the state is
    moved to the next grid time by re-noising the prediction through the
    marginal (``"marginal"``), by a posterior draw (``"stochastic"``) or by
    the deterministic step (``"deterministic"``).  The last prediction is
    returned, so ``n_steps = 1`` is a single call ``generator(y, y, 1)``.
    """
    if mode not in SAMPLER_MODES:
        raise ValueError(f"unknown sampler mode {mode!r}; expected one of {SAMPLER_MODES}")
    n_steps = int(n_steps)
    if not 1 <= n_steps <= sched.n_steps:
        raise ScheduleError(f"n_steps must lie in 1..{sched.n_steps}, got {n_steps}")
    times = sched.grid(n_steps)
    state = BridgeState(t=1.0, x=y, y=y)
    x0_hat = None
    for n in range(n_steps, 0, -1):
        x0_hat = generator(state.x, y, float(times[n]))
        if n == 1:
            break
        t_next = float(times[n - 1])
        if mode == "marginal":
            state = BridgeState(t=t_next, x=marginal_sample(x0_hat, y, t_next, sched, rng), y=y)
        elif mode == "stochastic":
            state = reverse_step_stochastic(state, x0_hat, t_next, sched, rng)
        else:
            state = reverse_step_deterministic(state, x0_hat, t_next, sched)
    return x0_hat
