"""Desk-scale generator and multi-scale STFT discriminator.

The generator is a small U-shaped 2-D convolutional network over the
(frequency, frame) plane of compressed complex spectrograms.  It predicts a
residual on the spectrogram of ``x_t`` plus a complex gain applied to the
spectrogram of ``y``.  A time-conditioned per-frequency gate blends the skip
path from ``x_t`` toward ``y``.  Gate and output layer start at zero, so a
fresh generator returns ``x_t`` unchanged.

Scalar/vector toy problems use the MLP variants at the bottom.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
from torch import nn
from torch.func import functional_call
import torch.nn.functional as F

from .signal import CompressionConfig, StftConfig, istft, power_compress, power_decompress, stft

__all__ = [
    "GeneratorConfig",
    "DiscriminatorConfig",
    "SpecUNetGenerator",
    "WaveUNetGenerator",
    "MSSTFTDiscriminator",
    "MLPGenerator",
    "MLPDiscriminator",
    "build_generator",
    "build_discriminator",
    "generator_forward",
    "discriminator_forward",
    "param_count",
]

# 1/8 of (4096, 1024) ... (256, 64), for 8 kHz audio
DEFAULT_SCALES = ((512, 128), (256, 64), (128, 32), (64, 16), (32, 8))


@dataclass
class GeneratorConfig:
    base_channels: int = 8
    depth: int = 3
    time_embed_dim: int = 64
    input_rep: str = "compressed_complex_spectrogram"
    stft: StftConfig = field(default_factory=StftConfig)
    compression: CompressionConfig = field(default_factory=CompressionConfig)
    t_min: float = 0.0

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("generator depth must be >= 1")
        if self.base_channels < 1 or self.time_embed_dim < 2:
            raise ValueError("generator channel counts must be positive")
        if self.input_rep not in ("compressed_complex_spectrogram", "waveform", "vector"):
            raise ValueError(f"unknown input_rep {self.input_rep!r}")


@dataclass
class DiscriminatorConfig:
    scales: tuple = DEFAULT_SCALES
    channels: int = 16
    time_embed_dim: int = 64
    compression: CompressionConfig = field(default_factory=CompressionConfig)
    kind: str = "msstft"

    def __post_init__(self):
        if not self.scales:
            raise ValueError("discriminator needs at least one scale")
        self.scales = tuple((int(f), int(h)) for f, h in self.scales)
        for fft_size, hop in self.scales:
            if not fft_size >= hop >= 1:
                raise ValueError(f"invalid scale (fft={fft_size}, hop={hop})")
        if self.channels < 1:
            raise ValueError("discriminator channels must be positive")


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal embedding of times in [0, 1] -> ``(B, dim)``."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=t.dtype) / half)
    args = 1000.0 * t[:, None] * freqs[None]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


def _as_time(t, batch: int, dtype) -> torch.Tensor:
    t = torch.as_tensor(t, dtype=dtype)
    if t.dim() == 0:
        t = t.expand(batch)
    if t.shape != (batch,):
        raise ValueError(f"time must be scalar or shape ({batch},), got {tuple(t.shape)}")
    return t


def _check_pair(x: torch.Tensor, y: torch.Tensor) -> None:
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")


class TimeMLP(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.fc1 = nn.Linear(dim, dim)
        self.fc2 = nn.Linear(dim, dim)

    def forward(self, t):
        return self.fc2(F.silu(self.fc1(timestep_embedding(t, self.dim))))


class ResBlock1d(nn.Module):
    def __init__(self, ch_in: int, ch_out: int, emb_dim: int):
        super().__init__()
        self.conv1 = nn.Conv1d(ch_in, ch_out, 3, padding=1)
        self.conv2 = nn.Conv1d(ch_out, ch_out, 3, padding=1)
        self.emb = nn.Linear(emb_dim, ch_out)
        self.skip = nn.Conv1d(ch_in, ch_out, 1) if ch_in != ch_out else nn.Identity()

    def forward(self, h, emb):
        out = self.conv1(F.silu(h)) + self.emb(emb)[:, :, None]
        out = self.conv2(F.silu(out))
        return self.skip(h) + out


class UNet1d(nn.Module):
    """Encoder/decoder over the last axis with stride-2 resampling."""

    def __init__(self, ch_in: int, ch_out: int, base: int, depth: int, emb_dim: int):
        super().__init__()
        self.depth = depth
        chans = [base * 2 ** min(i, 2) for i in range(depth)]
        self.inp = nn.Conv1d(ch_in, chans[0], 3, padding=1)
        self.enc = nn.ModuleList()
        self.down = nn.ModuleList()
        for i in range(depth):
            self.enc.append(ResBlock1d(chans[i], chans[i], emb_dim))
            if i < depth - 1:
                self.down.append(nn.Conv1d(chans[i], chans[i + 1], 4, stride=2, padding=1))
        self.mid = ResBlock1d(chans[-1], chans[-1], emb_dim)
        self.up = nn.ModuleList()
        self.dec = nn.ModuleList()
        for i in reversed(range(depth - 1)):
            self.up.append(nn.ConvTranspose1d(chans[i + 1], chans[i], 4, stride=2, padding=1))
            self.dec.append(ResBlock1d(2 * chans[i], chans[i], emb_dim))
        self.out = nn.Conv1d(chans[0], ch_out, 3, padding=1)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    @property
    def multiple(self) -> int:
        return 2 ** (self.depth - 1)

    def forward(self, h, emb):
        n = h.shape[-1]
        pad = (-n) % self.multiple
        h = F.pad(h, (0, pad))
        h = self.inp(h)
        skips = []
        for i, block in enumerate(self.enc):
            h = block(h, emb)
            if i < self.depth - 1:
                skips.append(h)
                h = self.down[i](h)
        h = self.mid(h, emb)
        for up, block in zip(self.up, self.dec):
            h = up(h)
            h = block(torch.cat([h, skips.pop()], dim=1), emb)
        return self.out(F.silu(h))[..., :n]


class ResBlock2d(nn.Module):
    def __init__(self, ch_in: int, ch_out: int, emb_dim: int):
        super().__init__()
        self.conv1 = nn.Conv2d(ch_in, ch_out, 3, padding=1)
        self.conv2 = nn.Conv2d(ch_out, ch_out, 3, padding=1)
        self.emb = nn.Linear(emb_dim, ch_out)
        self.skip = nn.Conv2d(ch_in, ch_out, 1) if ch_in != ch_out else nn.Identity()

    def forward(self, h, emb):
        out = self.conv1(F.silu(h)) + self.emb(emb)[:, :, None, None]
        out = self.conv2(F.silu(out))
        return self.skip(h) + out


class UNet2d(nn.Module):
    """Encoder/decoder over the last two axes with stride-2 resampling."""

    def __init__(self, ch_in: int, ch_out: int, base: int, depth: int, emb_dim: int):
        super().__init__()
        self.depth = depth
        chans = [base * 2 ** min(i, 2) for i in range(depth)]
        self.inp = nn.Conv2d(ch_in, chans[0], 3, padding=1)
        self.enc = nn.ModuleList()
        self.down = nn.ModuleList()
        for i in range(depth):
            self.enc.append(ResBlock2d(chans[i], chans[i], emb_dim))
            if i < depth - 1:
                self.down.append(nn.Conv2d(chans[i], chans[i + 1], 4, stride=2, padding=1))
        self.mid = ResBlock2d(chans[-1], chans[-1], emb_dim)
        self.up = nn.ModuleList()
        self.dec = nn.ModuleList()
        for i in reversed(range(depth - 1)):
            self.up.append(nn.ConvTranspose2d(chans[i + 1], chans[i], 4, stride=2, padding=1))
            self.dec.append(ResBlock2d(2 * chans[i], chans[i], emb_dim))
        self.out = nn.Conv2d(chans[0], ch_out, 3, padding=1)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def forward(self, h, emb):
        rows, cols = h.shape[-2:]
        m = 2 ** (self.depth - 1)
        h = F.pad(h, (0, (-cols) % m, 0, (-rows) % m))
        h = self.inp(h)
        skips = []
        for i, block in enumerate(self.enc):
            h = block(h, emb)
            if i < self.depth - 1:
                skips.append(h)
                h = self.down[i](h)
        h = self.mid(h, emb)
        for up, block in zip(self.up, self.dec):
            h = block(torch.cat([up(h), skips.pop()], dim=1), emb)
        return self.out(F.silu(h))[..., :rows, :cols]


class SpecUNetGenerator(nn.Module):
    """x0 estimate from ``(x_t, y, t)`` via compressed complex spectrograms."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        self.time = TimeMLP(cfg.time_embed_dim)
        # outputs: residual (re, im) on X_t and gain (re, im) on Y
        self.unet = UNet2d(4, 4, cfg.base_channels, cfg.depth, cfg.time_embed_dim)
        self.gate = nn.Linear(cfg.time_embed_dim, cfg.stft.n_bins)
        nn.init.zeros_(self.gate.weight)
        nn.init.zeros_(self.gate.bias)

    def features(self, x):
        return power_compress(stft(x, self.cfg.stft), self.cfg.compression)

    def forward(self, x_t, y, t):
        _check_pair(x_t, y)
        squeeze = x_t.dim() == 1
        if squeeze:
            x_t, y = x_t[None], y[None]
        batch, length = x_t.shape
        t = _as_time(t, batch, x_t.dtype)
        cx = self.features(x_t)
        cy = self.features(y)
        h = torch.stack([cx.real, cx.imag, cy.real, cy.imag], dim=1)
        emb = self.time(t)
        d = self.unet(h, emb)
        skip = cx + self.gate(emb)[:, :, None] * (cy - cx)
        est = skip + torch.complex(d[:, 0], d[:, 1]) + torch.complex(d[:, 2], d[:, 3]) * cy
        out = istft(power_decompress(est, self.cfg.compression), self.cfg.stft, length)
        return out[0] if squeeze else out


class WaveUNetGenerator(nn.Module):
    """Same network family operating directly on samples."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        self.time = TimeMLP(cfg.time_embed_dim)
        self.unet = UNet1d(2, 1, cfg.base_channels, cfg.depth, cfg.time_embed_dim)

    def forward(self, x_t, y, t):
        _check_pair(x_t, y)
        squeeze = x_t.dim() == 1
        if squeeze:
            x_t, y = x_t[None], y[None]
        t = _as_time(t, x_t.shape[0], x_t.dtype)
        out = x_t + self.unet(torch.stack([x_t, y], dim=1), self.time(t))[:, 0]
        return out[0] if squeeze else out


class _ScaleDisc(nn.Module):
    def __init__(self, fft_size, hop, ch, emb_dim, compression):
        super().__init__()
        self.stft = StftConfig(fft_size, hop)
        self.compression = compression
        self.emb = nn.Linear(emb_dim, ch)
        self.convs = nn.ModuleList(
            [
                nn.Conv2d(4, ch, (3, 3), stride=(2, 2), padding=(1, 1)),
                nn.Conv2d(ch, ch, (3, 3), stride=(2, 1), padding=(1, 1)),
                nn.Conv2d(ch, ch, (3, 3), stride=(2, 1), padding=(1, 1)),
            ]
        )
        self.post = nn.Conv2d(ch, 1, (3, 3), padding=(1, 1))

    def forward(self, x, y, emb):
        cx = power_compress(stft(x, self.stft), self.compression)
        cy = power_compress(stft(y, self.stft), self.compression)
        h = torch.stack([cx.real, cx.imag, cy.real, cy.imag], dim=1)
        for i, conv in enumerate(self.convs):
            h = conv(h)
            if i == 0:
                h = h + self.emb(emb)[:, :, None, None]
            h = F.leaky_relu(h, 0.2)
        return self.post(h)


class MSSTFTDiscriminator(nn.Module):
    """One logit map per STFT scale for the pair ``(x, y)`` at time ``t``."""

    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        self.cfg = cfg
        self.time = TimeMLP(cfg.time_embed_dim)
        self.scales = nn.ModuleList(
            [_ScaleDisc(f, h, cfg.channels, cfg.time_embed_dim, cfg.compression) for f, h in cfg.scales]
        )

    def forward(self, x, y, t):
        _check_pair(x, y)
        if x.dim() == 1:
            x, y = x[None], y[None]
        emb = self.time(_as_time(t, x.shape[0], x.dtype))
        return [d(x, y, emb) for d in self.scales]


class MLPGenerator(nn.Module):
    """x0 estimate for vector-valued toy data ``(B, D)``; residual on ``x_t``."""

    def __init__(self, dim: int = 1, hidden: int = 128, time_embed_dim: int = 32):
        super().__init__()
        self.time = TimeMLP(time_embed_dim)
        self.net = nn.Sequential(
            nn.Linear(2 * dim + time_embed_dim, hidden),
            nn.SiLU(),
            nn.Linear(hidden, hidden),
            nn.SiLU(),
            nn.Linear(hidden, hidden),
            nn.SiLU(),
            nn.Linear(hidden, dim),
        )
        nn.init.zeros_(self.net[-1].weight)
        nn.init.zeros_(self.net[-1].bias)

    def forward(self, x_t, y, t):
        _check_pair(x_t, y)
        t = _as_time(t, x_t.shape[0], x_t.dtype)
        return x_t + self.net(torch.cat([x_t, y, self.time(t)], dim=-1))


class MLPDiscriminator(nn.Module):
    def __init__(self, dim: int = 1, hidden: int = 128, time_embed_dim: int = 32):
        super().__init__()
        self.time = TimeMLP(time_embed_dim)
        self.net = nn.Sequential(
            nn.Linear(2 * dim + time_embed_dim, hidden),
            nn.LeakyReLU(0.2),
            nn.Linear(hidden, hidden),
            nn.LeakyReLU(0.2),
            nn.Linear(hidden, 1),
        )

    def forward(self, x, y, t):
        _check_pair(x, y)
        t = _as_time(t, x.shape[0], x.dtype)
        return [self.net(torch.cat([x, y, self.time(t)], dim=-1))]


def build_generator(cfg: GeneratorConfig, dim: int = 1) -> nn.Module:
    if cfg.input_rep == "compressed_complex_spectrogram":
        return SpecUNetGenerator(cfg)
    if cfg.input_rep == "waveform":
        return WaveUNetGenerator(cfg)
    return MLPGenerator(dim=dim, hidden=16 * cfg.base_channels, time_embed_dim=cfg.time_embed_dim)


def build_discriminator(cfg: DiscriminatorConfig, dim: int = 1) -> nn.Module:
    if cfg.kind == "msstft":
        return MSSTFTDiscriminator(cfg)
    return MLPDiscriminator(dim=dim, hidden=8 * cfg.channels, time_embed_dim=cfg.time_embed_dim)


def generator_forward(x_t, y, t, cfg: GeneratorConfig, params: dict, module: nn.Module | None = None):
    """Stateless generator call with an explicit parameter map."""
    module = build_generator(cfg) if module is None else module
    return functional_call(module, params, (x_t, y, t))


def discriminator_forward(x, y, t, cfg: DiscriminatorConfig, params: dict, module: nn.Module | None = None):
    module = build_discriminator(cfg) if module is None else module
    return functional_call(module, params, (x, y, t))


def param_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
