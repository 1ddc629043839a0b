"""Reconstruction and adversarial losses."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .signal import CompressionConfig, StftConfig, mel_spectrogram, power_compress, stft

__all__ = ["ReconConfig", "recon_loss", "multiscale_mel_loss", "d_loss", "g_adv_loss"]

MEL_SCALES = ((64, 16, 16), (128, 32, 32), (256, 64, 64), (512, 128, 80))


@dataclass
class ReconConfig:
    """Weights and representation of the reconstruction loss.

    ``representation`` is ``"spectrogram"`` for audio (compressed complex
    spectrogram error plus waveform L1) or ``"waveform"`` for vector toy data
    (squared error plus L1 on the raw values).
    """

    alpha_l1: float = 1e-3
    mel_weight: float = 0.0
    representation: str = "spectrogram"
    stft: StftConfig = field(default_factory=StftConfig)
    compression: CompressionConfig = field(default_factory=CompressionConfig)
    sample_rate: int = 8000

    def __post_init__(self):
        if self.alpha_l1 < 0 or self.mel_weight < 0:
            raise ValueError("loss weights must be non-negative")
        if self.representation not in ("spectrogram", "waveform"):
            raise ValueError(f"unknown representation {self.representation!r}")


def _per_example_sum(x: torch.Tensor) -> torch.Tensor:
    if x.dim() <= 1:
        return x.sum()[None]
    return x.reshape(x.shape[0], -1).sum(dim=1)


def multiscale_mel_loss(x0_hat, x0, sample_rate: int = 8000, scales=MEL_SCALES) -> torch.Tensor:
    """Mean L1 distance of log10 mel magnitudes, averaged over resolutions."""
    total = 0.0
    for fft_size, hop, n_mels in scales:
        cfg = StftConfig(fft_size, hop)
        a = mel_spectrogram(x0_hat, cfg, n_mels, sample_rate)
        b = mel_spectrogram(x0, cfg, n_mels, sample_rate)
        total = total + (torch.log10(a.clamp_min(1e-5)) - torch.log10(b.clamp_min(1e-5))).abs().mean()
    return total / len(scales)


def recon_loss(x0_hat: torch.Tensor, x0: torch.Tensor, cfg: ReconConfig) -> torch.Tensor:
    """Batch-mean of ``||X0' - X0||^2 + alpha ||x0' - x0||_1`` (+ mel term).

    Norms are summed over each example's elements.
    """
    if x0_hat.shape != x0.shape:
        raise ValueError(f"shape mismatch: {tuple(x0_hat.shape)} vs {tuple(x0.shape)}")
    diff = x0_hat - x0
    if cfg.representation == "spectrogram":
        est = power_compress(stft(x0_hat, cfg.stft), cfg.compression)
        ref = power_compress(stft(x0, cfg.stft), cfg.compression)
        d = est - ref
        sq = _per_example_sum(d.real**2 + d.imag**2)
    else:
        sq = _per_example_sum(diff**2)
    loss = (sq + cfg.alpha_l1 * _per_example_sum(diff.abs())).mean()
    if cfg.mel_weight > 0:
        loss = loss + cfg.mel_weight * multiscale_mel_loss(x0_hat, x0, cfg.sample_rate)
    return loss


def d_loss(real_logits, fake_logits) -> torch.Tensor:
    """``-log D(real) - log(1 - D(fake))`` with ``D = sigmoid(logit)``, averaged over scales."""
    terms = [F.softplus(-r).mean() + F.softplus(f).mean() for r, f in zip(real_logits, fake_logits)]
    return sum(terms) / len(terms)


def g_adv_loss(fake_logits) -> torch.Tensor:
    """Non-saturating generator loss ``-log D(fake)``, averaged over scales."""
    terms = [F.softplus(-f).mean() for f in fake_logits]
    return sum(terms) / len(terms)
