"""Adversarial bridge training (UFOGen scheme) and the recon-only baseline."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .autodiff import AdamWState, EmaState, backward, ema_update, grad_norm, load_container, optimizer_step, save_container
from .kernels import marginal_sample, transition_sample
from .losses import ReconConfig, d_loss, g_adv_loss, recon_loss
from .schedule import ScheduleParams

__all__ = [
    "TrainRunConfig",
    "TrainingDivergence",
    "PairBank",
    "MixtureSource",
    "Trainer",
    "sample_step_indices",
    "format_log_record",
    "parse_log_record",
]

log = logging.getLogger(__name__)


class TrainingDivergence(RuntimeError):
    """A loss became non-finite; carries the step diagnostics."""

    def __init__(self, step: int, diagnostics: dict):
        self.step = step
        self.diagnostics = diagnostics
        parts = ", ".join(f"{k}={v}" for k, v in diagnostics.items())
        super().__init__(f"non-finite loss at step {step}: {parts}")


@dataclass
class TrainRunConfig:
    lambda_recon: float = 100.0
    alpha_l1: float = 1e-3
    mel_weight: float = 0.01
    adv_weight: float = 1.0
    r1_weight: float = 0.0
    n_steps: int = 4
    baseline_grid: int = 32
    batch_size: int = 16
    segment_length: int = 1024
    lr: float = 1e-4
    weight_decay: float = 0.01
    ema_decay: float = 0.999
    total_steps: int = 20000
    log_every: int = 100
    checkpoint_every: int = 5000
    task: str = "denoise"
    mode: str = "sb_ufogen"

    def __post_init__(self):
        for name in ("lambda_recon", "alpha_l1", "mel_weight", "adv_weight", "r1_weight", "weight_decay"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.n_steps < 1 or self.baseline_grid < 1:
            raise ValueError("grid sizes must be >= 1")
        if self.task not in ("denoise", "dereverb"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.mode not in ("sb_ufogen", "sb_baseline"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.batch_size < 1 or self.total_steps < 0:
            raise ValueError("batch_size must be >= 1 and total_steps >= 0")

    @property
    def grid_size(self) -> int:
        return self.n_steps if self.mode == "sb_ufogen" else self.baseline_grid


def sample_step_indices(batch: int, n_grid: int, rng: torch.Generator) -> torch.Tensor:
    """Draw ``n ~ Uniform{1, ..., n_grid}`` for each example."""
    return torch.randint(1, n_grid + 1, (batch,), generator=rng)


class PairBank:
    """Fixed set of aligned (clean, degraded) signals sampled as random crops."""

    def __init__(self, clean: np.ndarray, degraded: np.ndarray, dtype=torch.float32):
        if clean.shape != degraded.shape:
            raise ValueError(f"shape mismatch: {clean.shape} vs {degraded.shape}")
        self.clean = torch.as_tensor(clean, dtype=dtype)
        self.degraded = torch.as_tensor(degraded, dtype=dtype)

    def __len__(self):
        return self.clean.shape[0]

    def sample(self, batch: int, segment: int, rng: torch.Generator):
        n_items, length = self.clean.shape
        seg = min(segment, length)
        idx = torch.randint(0, n_items, (batch,), generator=rng)
        off = torch.randint(0, length - seg + 1, (batch,), generator=rng)
        cols = off[:, None] + torch.arange(seg)[None]
        return self.clean[idx[:, None], cols], self.degraded[idx[:, None], cols]


class MixtureSource:
    """Scalar two-component Gaussian mixture ``x0`` observed as ``y = x0 + noise``."""

    def __init__(self, separation: float = 4.0, component_std: float = 1.0, noise_std: float = 0.5, dtype=torch.float32):
        self.separation = separation
        self.component_std = component_std
        self.noise_std = noise_std
        self.dtype = dtype

    def sample_clean(self, n: int, rng: torch.Generator) -> torch.Tensor:
        sign = torch.randint(0, 2, (n, 1), generator=rng).to(self.dtype) * 2 - 1
        return sign * self.separation / 2 + self.component_std * torch.randn(n, 1, generator=rng, dtype=self.dtype)

    def sample(self, batch: int, segment: int, rng: torch.Generator):
        x0 = self.sample_clean(batch, rng)
        y = x0 + self.noise_std * torch.randn(x0.shape, generator=rng, dtype=self.dtype)
        return x0, y


def _grouped(n_idx: torch.Tensor):
    for n in torch.unique(n_idx).tolist():
        yield n, (n_idx == n).nonzero(as_tuple=True)[0]


def _path_sample(x0, y, n_idx, times, sched, rng):
    """``x_{t_{n-1}}`` from the marginal, then ``x_{t_n}`` from the forward kernel."""
    x_prev = torch.empty_like(x0)
    x_cur = torch.empty_like(x0)
    for n, rows in _grouped(n_idx):
        xp = marginal_sample(x0[rows], y[rows], times[n - 1], sched, rng)
        x_prev[rows] = xp
        x_cur[rows] = transition_sample(xp, y[rows], times[n - 1], times[n], sched, rng)
    return x_prev, x_cur


def _marginal_at(x0, y, idx, times, sched, rng):
    """Per-example marginal sample at ``times[idx[i]]``."""
    parts = []
    order = []
    for n, rows in _grouped(idx):
        parts.append(marginal_sample(x0[rows], y[rows], times[n], sched, rng))
        order.append(rows)
    order = torch.cat(order)
    inverse = torch.empty_like(order)
    inverse[order] = torch.arange(order.numel())
    return torch.cat(parts)[inverse]


def format_log_record(rec: dict) -> str:
    """One ``key=value`` line per training log record, fixed key order."""
    keys = ("step", "d_loss", "g_adv", "recon", "g_loss", "gnorm_d", "gnorm_g", "wall")
    fields = []
    for k in keys:
        if k not in rec:
            continue
        v = rec[k]
        fields.append(f"{k}={v}" if isinstance(v, int) else f"{k}={v:.6g}")
    return " ".join(fields)


def parse_log_record(line: str) -> dict:
    rec = {}
    for tok in line.split():
        k, v = tok.split("=", 1)
        rec[k] = int(v) if k == "step" else float(v)
    return rec


class Trainer:
    """Owns the networks, optimizer/EMA state and RNG of one training run."""

    def __init__(
        self,
        generator: nn.Module,
        discriminator: nn.Module | None,
        sched: ScheduleParams,
        cfg: TrainRunConfig,
        recon_cfg: ReconConfig,
        seed: int = 0,
    ):
        self.gen = generator
        self.disc = discriminator
        self.cfg = cfg
        mel = cfg.mel_weight if cfg.task == "dereverb" else 0.0
        self.recon_cfg = replace(recon_cfg, alpha_l1=cfg.alpha_l1, mel_weight=mel)
        self.sched = sched.with_steps(cfg.grid_size) if sched.n_steps != cfg.grid_size else sched
        self.times = [float(t) for t in self.sched.grid()]
        self.rng = torch.Generator().manual_seed(int(seed))
        self.step = 0
        self.gen_params = dict(generator.named_parameters())
        self.opt_g = AdamWState(lr=cfg.lr, weight_decay=cfg.weight_decay)
        self.ema = EmaState.from_params(self.gen_params, cfg.ema_decay)
        self.disc_params = dict(discriminator.named_parameters()) if discriminator is not None else {}
        self.opt_d = AdamWState(lr=cfg.lr, weight_decay=cfg.weight_decay)
        self.last_grads: dict = {}
        if cfg.mode == "sb_ufogen" and discriminator is None:
            raise ValueError("sb_ufogen mode needs a discriminator")

    def _check_finite(self, **values):
        if not all(math.isfinite(v) for v in values.values()):
            raise TrainingDivergence(self.step, values)

    def training_step(self, x0: torch.Tensor, y: torch.Tensor) -> dict:
        """One discriminator update followed by one generator update."""
        if self.cfg.mode != "sb_ufogen":
            raise ValueError("training_step requires mode sb_ufogen")
        cfg = self.cfg
        n_idx = sample_step_indices(x0.shape[0], cfg.n_steps, self.rng)
        t_prev = torch.tensor([self.times[n - 1] for n in n_idx.tolist()], dtype=x0.dtype)
        t_cur = torch.tensor([self.times[n] for n in n_idx.tolist()], dtype=x0.dtype)
        x_prev, x_cur = _path_sample(x0, y, n_idx, self.times, self.sched, self.rng)

        x0_hat = self.gen(x_cur, y, t_cur)

        # discriminator
        fake_prev = _marginal_at(x0_hat.detach(), y, n_idx - 1, self.times, self.sched, self.rng)
        real_in = x_prev.detach().requires_grad_(cfg.r1_weight > 0)
        real_logits = self.disc(real_in, y, t_prev)
        fake_logits = self.disc(fake_prev, y, t_prev)
        loss_d = d_loss(real_logits, fake_logits)
        if cfg.r1_weight > 0:
            (g_real,) = torch.autograd.grad(sum(l.sum() for l in real_logits), real_in, create_graph=True)
            loss_d = loss_d + 0.5 * cfg.r1_weight * g_real.pow(2).reshape(g_real.shape[0], -1).sum(1).mean()
        grads_d = backward(loss_d, self.disc_params)
        gnorm_d = grad_norm(grads_d)
        self._check_finite(d_loss=loss_d.item(), gnorm_d=gnorm_d)
        optimizer_step(self.disc_params, grads_d, self.opt_d)

        # generator, with a freshly re-noised fake against the updated D
        fake_prev = _marginal_at(x0_hat, y, n_idx - 1, self.times, self.sched, self.rng)
        loss_rec = recon_loss(x0_hat, x0, self.recon_cfg)
        if cfg.adv_weight > 0:
            loss_adv = g_adv_loss(self.disc(fake_prev, y, t_prev))
        else:
            loss_adv = torch.zeros((), dtype=x0.dtype)
        loss_g = cfg.adv_weight * loss_adv + cfg.lambda_recon * loss_rec
        grads_g = backward(loss_g, self.gen_params)
        gnorm_g = grad_norm(grads_g)
        self.last_grads = grads_g
        self._check_finite(g_adv=loss_adv.item(), recon=loss_rec.item(), gnorm_g=gnorm_g)
        optimizer_step(self.gen_params, grads_g, self.opt_g)
        ema_update(self.gen_params, self.ema)
        self.step += 1
        return {
            "step": self.step,
            "d_loss": loss_d.item(),
            "g_adv": loss_adv.item(),
            "recon": loss_rec.item(),
            "g_loss": loss_g.item(),
            "gnorm_d": gnorm_d,
            "gnorm_g": gnorm_g,
        }

    def train_baseline_step(self, x0: torch.Tensor, y: torch.Tensor) -> dict:
        """Data-prediction step on a marginal sample at a random grid time."""
        if self.cfg.mode != "sb_baseline":
            raise ValueError("train_baseline_step requires mode sb_baseline")
        n_idx = sample_step_indices(x0.shape[0], self.cfg.baseline_grid, self.rng)
        t_cur = torch.tensor([self.times[n] for n in n_idx.tolist()], dtype=x0.dtype)
        x_t = _marginal_at(x0, y, n_idx, self.times, self.sched, self.rng)
        loss = recon_loss(self.gen(x_t, y, t_cur), x0, self.recon_cfg)
        grads = backward(loss, self.gen_params)
        gnorm = grad_norm(grads)
        self.last_grads = grads
        self._check_finite(recon=loss.item(), gnorm_g=gnorm)
        optimizer_step(self.gen_params, grads, self.opt_g)
        ema_update(self.gen_params, self.ema)
        self.step += 1
        return {"step": self.step, "recon": loss.item(), "g_loss": loss.item(), "gnorm_g": gnorm}

    def step_on(self, source) -> dict:
        x0, y = source.sample(self.cfg.batch_size, self.cfg.segment_length, self.rng)
        if self.cfg.mode == "sb_ufogen":
            return self.training_step(x0, y)
        return self.train_baseline_step(x0, y)

    def fit(self, source, log_path=None, checkpoint_path=None, metadata=None, callback=None) -> list:
        """Run up to ``cfg.total_steps``; returns the list of log records."""
        records = []
        log_fh = open(log_path, "a") if log_path else None
        start = time.perf_counter()
        try:
            while self.step < self.cfg.total_steps:
                rec = self.step_on(source)
                if self.step % self.cfg.log_every == 0 or self.step == self.cfg.total_steps:
                    rec["wall"] = time.perf_counter() - start
                    records.append(rec)
                    line = format_log_record(rec)
                    log.info(line)
                    if log_fh:
                        log_fh.write(line + "\n")
                        log_fh.flush()
                if checkpoint_path and (
                    self.step % self.cfg.checkpoint_every == 0 or self.step == self.cfg.total_steps
                ):
                    self.save(checkpoint_path, metadata)
                if callback is not None:
                    callback(self, rec)
        finally:
            if log_fh:
                log_fh.close()
        return records

    def state_tensors(self) -> dict:
        out = {}
        for prefix, tensors in (("gen", self.gen_params), ("gen_ema", self.ema.shadow), ("disc", self.disc_params)):
            for name, t in tensors.items():
                out[f"{prefix}/{name}"] = t
        for tag, opt in (("opt_g", self.opt_g), ("opt_d", self.opt_d)):
            for name, t in opt.first_moment.items():
                out[f"{tag}/m/{name}"] = t
            for name, t in opt.second_moment.items():
                out[f"{tag}/v/{name}"] = t
        return out

    def save(self, path, metadata=None) -> None:
        meta = dict(metadata or {})
        meta.update(
            step=self.step,
            opt_g_steps=self.opt_g.step_count,
            opt_d_steps=self.opt_d.step_count,
            train=asdict(self.cfg),
            rng_state=self.rng.get_state().tolist(),
        )
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        save_container(path, self.state_tensors(), meta)

    def load(self, path) -> dict:
        tensors, meta = load_container(path)
        with torch.no_grad():
            for prefix, target in (("gen", self.gen_params), ("gen_ema", self.ema.shadow), ("disc", self.disc_params)):
                for name, t in target.items():
                    t.copy_(tensors[f"{prefix}/{name}"])
        for tag, opt in (("opt_g", self.opt_g), ("opt_d", self.opt_d)):
            opt.first_moment = {k[len(tag) + 3 :]: v for k, v in tensors.items() if k.startswith(f"{tag}/m/")}
            opt.second_moment = {k[len(tag) + 3 :]: v for k, v in tensors.items() if k.startswith(f"{tag}/v/")}
        self.opt_g.step_count = meta.get("opt_g_steps", 0)
        self.opt_d.step_count = meta.get("opt_d_steps", 0)
        self.step = meta.get("step", 0)
        if "rng_state" in meta:
            self.rng.set_state(torch.tensor(meta["rng_state"], dtype=torch.uint8))
        return meta
