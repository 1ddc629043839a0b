"""Self-check report: analytic and Monte-Carlo property groups.

Each group returns a measured worst-case value and the tolerance it is held
to.  The report contains no wall-clock values, so a fixed seed gives identical
bytes on repeat runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

from .kernels import BridgeState, marginal_sample, posterior_params, reverse_step_deterministic, reverse_step_stochastic, transition_sample, ufogen_infer
from .schedule import ScheduleParams, marginal_coeffs, sigma_sq, transition_params
from .signal import StftConfig, istft, mix_at_snr, stft

__all__ = ["CheckResult", "run_checks", "format_report"]


@dataclass
class CheckResult:
    group: str
    measured: float
    tolerance: float
    detail: str = ""

    @property
    def passed(self) -> bool:
        return bool(self.measured <= self.tolerance)


def _random_schedules(n: int, rng: np.random.Generator):
    return [ScheduleParams(c=float(rng.uniform(0.05, 2.0)), k=float(rng.uniform(1.2, 20.0))) for _ in range(n)]


def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(abs(b), 1e-300)


def check_marginal_identities(rng, n_sched=100, n_times=1000) -> CheckResult:
    worst = 0.0
    for sched in _random_schedules(n_sched, rng):
        end = sigma_sq(1.0, sched)
        for t in rng.uniform(0.0, 1.0, n_times):
            co = marginal_coeffs(float(t), sched)
            worst = max(worst, abs(co.w_x + co.w_y - 1.0), _rel(co.sigma2 + co.sigma2_bar, end))
    return CheckResult("marginal identities", worst, 1e-10, f"{n_sched} schedules x {n_times} times")


def _closed_form(t: np.ndarray, c: float, k: float):
    """Vectorised ``(w_x, w_y, var_x)`` straight from the VE formulas."""
    scale = c / (2 * np.log(k))
    s2 = scale * np.expm1(2 * t * np.log(k))
    end = scale * np.expm1(2 * np.log(k))
    bar = scale * (k**2 - k ** (2 * t))
    return bar / end, s2 / end, bar * s2 / end


def check_composition(rng, n_sched=100, n_pairs=1000, corrupt_wy=False) -> CheckResult:
    sign = -1.0 if corrupt_wy else 1.0
    worst = 0.0
    for sched in _random_schedules(n_sched, rng):
        pairs = np.sort(rng.uniform(0.0, 0.999, (n_pairs, 2)), axis=1)
        pairs = pairs[pairs[:, 0] < pairs[:, 1]]
        wx_s, wy_s, vx_s = _closed_form(pairs[:, 0], sched.c, sched.k)
        wx_t, wy_t, vx_t = _closed_form(pairs[:, 1], sched.c, sched.k)
        tps = [transition_params(float(s), float(t), sched) for s, t in pairs]
        a = np.array([tp.coef_x for tp in tps])
        b = np.array([tp.coef_y for tp in tps])
        var = np.array([tp.var for tp in tps])
        worst = max(
            worst,
            float(np.max(np.abs(a * wx_s - wx_t) / wx_t)),
            float(np.max(np.abs(a * sign * wy_s + b - sign * wy_t) / np.maximum(np.abs(wy_t), 1e-300))),
            float(np.max(np.abs(a**2 * vx_s + var - vx_t) / vx_t)),
        )
    detail = f"{n_sched} schedules x {n_pairs} pairs" + (" [w_y sign corrupted]" if corrupt_wy else "")
    return CheckResult("transition composition", worst, 1e-10, detail)


def check_chapman_kolmogorov(seed: int, n_draws=100_000) -> CheckResult:
    sched = ScheduleParams(n_steps=4)
    times = [float(t) for t in sched.grid()]
    x0 = torch.zeros(n_draws, dtype=torch.float64)
    y = torch.ones(n_draws, dtype=torch.float64)
    rng = torch.Generator().manual_seed(seed)
    worst = 0.0
    for n in range(1, 5):
        prev = marginal_sample(x0, y, times[n - 1], sched, rng)
        out = transition_sample(prev, y, times[n - 1], times[n], sched, rng)
        worst = max(worst, _z_scores(out, marginal_coeffs(times[n], sched)))
    return CheckResult("Chapman-Kolmogorov (z-score)", worst, 3.0, f"{n_draws} draws per edge, N=4")


def _z_scores(samples: torch.Tensor, co) -> float:
    n = samples.numel()
    if co.var_x == 0.0:
        return 0.0 if torch.all(samples == co.w_y) else math.inf
    z_mean = abs(samples.mean().item() - co.w_y) / math.sqrt(co.var_x / n)
    z_var = abs(samples.var().item() - co.var_x) / (co.var_x * math.sqrt(2.0 / (n - 1)))
    return max(z_mean, z_var)


def check_posterior(rng, n=1000) -> CheckResult:
    worst = 0.0
    for sched in _random_schedules(n, rng):
        s, t = np.sort(rng.uniform(0.001, 0.999, 2))
        x_t, x0, y = rng.normal(size=3)
        post = posterior_params(*(torch.tensor([v], dtype=torch.float64) for v in (x_t, x0, y)), float(s), float(t), sched)
        ms = marginal_coeffs(float(s), sched)
        tp = transition_params(float(s), float(t), sched)
        m_s = ms.w_x * x0 + ms.w_y * y
        m_t = tp.coef_x * m_s + tp.coef_y * y
        c_st = tp.coef_x * ms.var_x
        c_tt = tp.coef_x**2 * ms.var_x + tp.var
        mean = m_s + c_st / c_tt * (x_t - m_t)
        var = ms.var_x - c_st**2 / c_tt
        worst = max(worst, abs(post.mean.item() - mean), abs(post.var - var))
    return CheckResult("posterior vs joint conditioning", worst, 1e-8, f"{n} scalar instances")


def check_oracle_denoiser(seed: int, n_draws=100_000) -> CheckResult:
    sched = ScheduleParams(n_steps=4)
    times = [float(t) for t in sched.grid()]
    rng = torch.Generator().manual_seed(seed)
    x0 = torch.randn(4, 256, generator=rng)
    y = x0 + torch.randn(4, 256, generator=rng)
    exact = all(
        torch.equal(ufogen_infer(y, lambda x, yy, t: x0, n, sched, rng, mode), x0)
        for mode in ("marginal", "stochastic", "deterministic")
        for n in range(1, 5)
    )
    x0s = torch.zeros(n_draws, dtype=torch.float64)
    ys = torch.ones(n_draws, dtype=torch.float64)
    worst = 0.0 if exact else math.inf
    state = BridgeState(1.0, ys.clone(), ys)
    det = BridgeState(times[3], marginal_sample(x0s, ys, times[3], sched, rng), ys)
    for n in range(4, 1, -1):
        state = reverse_step_stochastic(state, x0s, times[n - 1], sched, rng)
        worst = max(worst, _z_scores(state.x, marginal_coeffs(times[n - 1], sched)))
        if n - 1 < 3:
            det = reverse_step_deterministic(det, x0s, times[n - 1], sched)
            worst = max(worst, _z_scores(det.x, marginal_coeffs(times[n - 1], sched)))
    return CheckResult("oracle denoiser (z-score, exact emission)", worst, 3.0, "bitwise x0 at emission")


def check_gradients(seed: int) -> CheckResult:
    from .autodiff import backward
    from .losses import ReconConfig, recon_loss
    from .nets import GeneratorConfig, build_generator

    torch.manual_seed(seed)
    gen = build_generator(GeneratorConfig(base_channels=4, depth=2, time_embed_dim=8, stft=StftConfig(64, 16))).double()
    with torch.no_grad():
        for p in gen.parameters():
            p.normal_(0.0, 0.3)
    g = torch.Generator().manual_seed(seed)
    x = torch.randn(1, 256, generator=g, dtype=torch.float64)
    target = torch.randn(1, 256, generator=g, dtype=torch.float64)
    cfg = ReconConfig(stft=StftConfig(64, 16))
    fn = lambda: recon_loss(gen(x, x, 0.5), target, cfg)
    params = dict(gen.named_parameters())
    grads = backward(fn(), params)
    worst = 0.0
    h = 1e-6
    for name, p in params.items():
        flat = p.detach().view(-1)
        idx = torch.randperm(flat.numel(), generator=g)[:4].tolist()
        fd, an = [], []
        for i in idx:
            orig = flat[i].item()
            with torch.no_grad():
                flat[i] = orig + h
                up = fn().item()
                flat[i] = orig - h
                down = fn().item()
                flat[i] = orig
            fd.append((up - down) / (2 * h))
            an.append(grads[name].reshape(-1)[i].item())
        scale = max(abs(v) for v in fd)
        if scale > 0:
            worst = max(worst, max(abs(a - b) for a, b in zip(an, fd)) / scale)
    return CheckResult("gradcheck (generator + recon loss)", worst, 1e-5, "central differences, float64")


def check_stft(seed: int) -> CheckResult:
    x = torch.randn(8000, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)
    worst = 0.0
    for cfg in (StftConfig(), StftConfig(512, 128), StftConfig(32, 8)):
        worst = max(worst, (istft(stft(x, cfg), cfg, x.numel()) - x).abs().max().item())
    return CheckResult("stft round trip", worst, 1e-6, "1 s random signal, 3 configs")


def check_mixing(rng) -> CheckResult:
    worst = 0.0
    for snr in rng.uniform(-10, 30, 20):
        clean, noise = rng.normal(size=4000), rng.normal(size=4000)
        noisy, _ = mix_at_snr(clean, noise, float(snr))
        measured = 10 * np.log10(np.mean(clean**2) / np.mean((noisy - clean) ** 2))
        worst = max(worst, abs(measured - snr))
    return CheckResult("mix_at_snr exactness (dB)", worst, 1e-9, "20 random SNRs")


def run_checks(seed: int = 0, corrupt_wy: bool = False, progress: Callable[[CheckResult], None] | None = None) -> list:
    rng = np.random.default_rng(seed)
    checks = [
        lambda: check_marginal_identities(rng),
        lambda: check_composition(rng, corrupt_wy=corrupt_wy),
        lambda: check_chapman_kolmogorov(seed),
        lambda: check_posterior(rng),
        lambda: check_oracle_denoiser(seed),
        lambda: check_gradients(seed),
        lambda: check_stft(seed),
        lambda: check_mixing(rng),
    ]
    results = []
    for check in checks:
        res = check()
        results.append(res)
        if progress is not None:
            progress(res)
    return results


def format_result(res: CheckResult) -> str:
    status = "PASS" if res.passed else "FAIL"
    return f"{status}  {res.group}: measured={res.measured:.3e} tol={res.tolerance:.1e} ({res.detail})"


def format_report(results) -> str:
    lines = [format_result(r) for r in results]
    n_fail = sum(not r.passed for r in results)
    lines.append(f"{len(results) - n_fail}/{len(results)} groups passed")
    return "\n".join(lines) + "\n"
