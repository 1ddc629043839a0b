"""Variance-exploding noise schedule and closed-form Gaussian bridge coefficients.

The bridge between a clean signal ``x0`` and its degraded observation ``y``
has Gaussian marginals ``x_t ~ N(w_x(t) x0 + w_y(t) y, sigma_x(t)^2 I)``.
With zero drift (``alpha_t = 1``) and ``g(t)^2 = c k^(2t)`` every quantity
below has a closed form.  All arithmetic is float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ScheduleError",
    "ScheduleParams",
    "BridgeCoefficients",
    "TransitionParams",
    "sigma_sq",
    "marginal_coeffs",
    "transition_params",
]

VAR_CLAMP = 1e-12


class ScheduleError(ValueError):
    """Raised for invalid schedule constants or out-of-domain times."""


@dataclass(frozen=True)
class ScheduleParams:
    """Constants of the VE schedule plus the discrete time grid.

    Args:
        c: Magnitude of the diffusion coefficient.
        k: Exponential growth rate of the diffusion coefficient (> 1).
        t_eps: First grid time ``t_0``; must lie in ``(0, 1/n_steps)``.
        n_steps: Grid resolution N; grid times are ``n/N`` for ``n = 1..N``.
    """

    c: float = 0.40
    k: float = 2.6
    t_eps: float = 0.03
    n_steps: int = 4
    t_end: float = 1.0

    def __post_init__(self):
        if not self.c > 0:
            raise ScheduleError(f"c must be positive, got {self.c}")
        if not self.k > 1:
            raise ScheduleError(f"k must exceed 1, got {self.k}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ScheduleError(f"n_steps must be a positive integer, got {self.n_steps}")
        if self.t_end != 1.0:
            raise ScheduleError("t_end is fixed at 1.0")
        if not 0 < self.t_eps < 1.0 / self.n_steps:
            raise ScheduleError(
                f"t_eps must lie in (0, 1/n_steps) = (0, {1.0 / self.n_steps}), got {self.t_eps}"
            )

    def grid(self, n_steps: int | None = None) -> np.ndarray:
        """Grid times ``[t_0 = eps, 1/N, 2/N, ..., 1]`` (length N + 1)."""
        n = self.n_steps if n_steps is None else int(n_steps)
        if n < 1 or self.t_eps >= 1.0 / n:
            raise ScheduleError(f"grid with {n} steps incompatible with t_eps={self.t_eps}")
        times = np.arange(n + 1, dtype=np.float64) / n
        times[0] = self.t_eps
        return times

    def with_steps(self, n_steps: int) -> "ScheduleParams":
        return ScheduleParams(c=self.c, k=self.k, t_eps=self.t_eps, n_steps=n_steps)

    @property
    def sigma2_end(self) -> float:
        return sigma_sq(self.t_end, self)


@dataclass(frozen=True)
class BridgeCoefficients:
    t: float
    alpha: float
    sigma2: float
    sigma2_bar: float
    w_x: float
    w_y: float
    sigma_x: float

    @property
    def var_x(self) -> float:
        return self.sigma_x**2


@dataclass(frozen=True)
class TransitionParams:
    """Gaussian forward kernel ``x_to | x_from, y ~ N(coef_x x_from + coef_y y, var)``."""

    t_from: float
    t_to: float
    coef_x: float
    coef_y: float
    var: float


def _check_time(t: float) -> float:
    t = float(t)
    if not 0.0 <= t <= 1.0 or math.isnan(t):
        raise ScheduleError(f"time {t} outside [0, 1]")
    return t


def sigma_sq(t: float, sched: ScheduleParams) -> float:
    """Accumulated variance ``c (k^(2t) - 1) / (2 ln k)`` of the VE process."""
    t = _check_time(t)
    log_k = math.log(sched.k)
    # expm1 keeps precision for small t
    return sched.c * math.expm1(2.0 * t * log_k) / (2.0 * log_k)


def _var_x(s2: float, s2_bar: float, s2_end: float) -> float:
    return s2_bar * s2 / s2_end


def marginal_coeffs(t: float, sched: ScheduleParams) -> BridgeCoefficients:
    t = _check_time(t)
    log_k = math.log(sched.k)
    scale = sched.c / (2.0 * log_k)
    s2_end = scale * math.expm1(2.0 * log_k)
    # expm1 keeps precision for small t
    s2 = scale * math.expm1(2.0 * t * log_k)
    # sigma_bar^2 = sigma_T^2 - sigma_t^2, computed without cancellation
    s2_bar = 0.0 if t == 1.0 else scale * (math.exp(2.0 * log_k) - math.exp(2.0 * t * log_k))
    return BridgeCoefficients(
        t=t,
        alpha=1.0,
        sigma2=s2,
        sigma2_bar=s2_bar,
        w_x=s2_bar / s2_end,
        w_y=s2 / s2_end,
        sigma_x=math.sqrt(_var_x(s2, s2_bar, s2_end)),
    )


def transition_params(t_from: float, t_to: float, sched: ScheduleParams) -> TransitionParams:
    """Coefficients of the forward transition from ``t_from`` to a later ``t_to``."""
    t_from = _check_time(t_from)
    t_to = _check_time(t_to)
    if not t_from < t_to:
        raise ScheduleError(f"transition requires t_from < t_to, got {t_from} >= {t_to}")
    src = marginal_coeffs(t_from, sched)
    dst = marginal_coeffs(t_to, sched)
    if src.w_x <= 0.0:
        raise ScheduleError(f"w_x({t_from}) = 0; no transition leaves the terminal time")
    a = dst.w_x / src.w_x
    b = dst.w_y - a * src.w_y
    var = dst.var_x - a * a * src.var_x
    if var < 0.0:
        if var < -VAR_CLAMP:
            raise ScheduleError(f"negative transition variance {var}")
        var = 0.0
    return TransitionParams(t_from=t_from, t_to=t_to, coef_x=a, coef_y=b, var=var)
