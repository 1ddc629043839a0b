"""Signal-processing substrate and synthetic paired data.

STFT, power compression and the mel filterbank are differentiable torch ops
because the reconstruction loss and both networks are built on them.  Data
synthesis and SNR mixing work in float64 numpy.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
import torch
from scipy.io import wavfile
from scipy.signal import lfilter

__all__ = [
    "StftConfig",
    "CompressionConfig",
    "SynthSpec",
    "PairedSample",
    "stft",
    "istft",
    "power_compress",
    "power_decompress",
    "mel_filterbank",
    "mel_spectrogram",
    "mix_at_snr",
    "synth_pair",
    "exponential_rir",
    "read_wav",
    "write_wav",
    "write_manifest",
    "read_manifest",
]

COMPRESS_EPS = 1e-12


@dataclass(frozen=True)
class StftConfig:
    """Periodic-Hann STFT with centered (zero-padded) frames."""

    fft_size: int = 256
    hop: int = 64

    def __post_init__(self):
        if self.fft_size < 1 or self.hop < 1:
            raise ValueError(f"fft_size and hop must be positive, got {self.fft_size}/{self.hop}")
        if self.hop > self.fft_size:
            raise ValueError(f"hop {self.hop} exceeds fft_size {self.fft_size}")
        env = _overlap_envelope(self.fft_size, self.hop)
        if env.min() < 1e-6 * env.max():
            raise ValueError(
                f"fft_size={self.fft_size}, hop={self.hop} fails the overlap-add condition "
                "for a periodic Hann window"
            )

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    def n_frames(self, length: int) -> int:
        return length // self.hop + 1


@lru_cache(maxsize=None)
def _overlap_envelope(fft_size: int, hop: int) -> np.ndarray:
    win = np.hanning(fft_size + 1)[:-1] ** 2
    env = np.zeros(fft_size + hop * (fft_size // hop + 1))
    for start in range(0, env.size - fft_size + 1, hop):
        env[start : start + fft_size] += win
    # steady-state region, away from the partially covered ends
    return env[fft_size : fft_size + hop] if env.size >= fft_size + hop else env


@dataclass(frozen=True)
class CompressionConfig:
    """Magnitude compression ``|S| -> scale * |S|**exponent`` with phase kept."""

    exponent: float = 0.5
    scale: float = 0.15

    def __post_init__(self):
        if not self.exponent > 0:
            raise ValueError(f"compression exponent must be positive, got {self.exponent}")
        if not self.scale > 0:
            raise ValueError(f"compression scale must be positive, got {self.scale}")


_WINDOWS: dict = {}


def _window(n: int, dtype: torch.dtype) -> torch.Tensor:
    key = (n, dtype)
    if key not in _WINDOWS:
        _WINDOWS[key] = torch.hann_window(n, periodic=True, dtype=dtype)
    return _WINDOWS[key]


def stft(x: torch.Tensor, cfg: StftConfig) -> torch.Tensor:
    """Complex one-sided STFT of ``(..., L)`` waveforms -> ``(..., F, T)``."""
    lead = x.shape[:-1]
    flat = x.reshape(-1, x.shape[-1])
    spec = torch.stft(
        flat,
        n_fft=cfg.fft_size,
        hop_length=cfg.hop,
        window=_window(cfg.fft_size, x.dtype),
        center=True,
        pad_mode="constant",
        return_complex=True,
    )
    return spec.reshape(*lead, *spec.shape[-2:])


def istft(spec: torch.Tensor, cfg: StftConfig, length: int) -> torch.Tensor:
    """Inverse of :func:`stft`, cropped or padded to ``length`` samples."""
    lead = spec.shape[:-2]
    flat = spec.reshape(-1, *spec.shape[-2:])
    dtype = torch.float64 if flat.dtype == torch.complex128 else torch.float32
    wav = torch.istft(
        flat,
        n_fft=cfg.fft_size,
        hop_length=cfg.hop,
        window=_window(cfg.fft_size, dtype),
        center=True,
        length=length,
    )
    return wav.reshape(*lead, length)


def power_compress(spec: torch.Tensor, ccfg: CompressionConfig) -> torch.Tensor:
    mag2 = spec.real**2 + spec.imag**2
    return ccfg.scale * spec * (mag2 + COMPRESS_EPS) ** ((ccfg.exponent - 1.0) / 2.0)


def power_decompress(spec: torch.Tensor, ccfg: CompressionConfig) -> torch.Tensor:
    mag = torch.sqrt(spec.real**2 + spec.imag**2 + COMPRESS_EPS)
    target = (mag / ccfg.scale) ** (1.0 / ccfg.exponent)
    return spec * (target / mag)


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=None)
def mel_filterbank(n_mels: int, fft_size: int, sample_rate: int, f_min: float = 0.0, f_max=None) -> np.ndarray:
    """Triangular mel filterbank of shape ``(n_mels, fft_size // 2 + 1)``."""
    f_max = sample_rate / 2.0 if f_max is None else f_max
    n_bins = fft_size // 2 + 1
    freqs = np.linspace(0.0, sample_rate / 2.0, n_bins)
    edges = _mel_to_hz(np.linspace(_hz_to_mel(f_min), _hz_to_mel(f_max), n_mels + 2))
    fb = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        rise = (freqs - lo) / (mid - lo)
        fall = (hi - freqs) / (hi - mid)
        fb[m] = np.maximum(0.0, np.minimum(rise, fall))
        if not fb[m].any():
            # narrow low bands can fall between bins; keep the nearest bin
            fb[m, int(np.argmin(np.abs(freqs - mid)))] = 1.0
    return fb


def mel_spectrogram(x: torch.Tensor, cfg: StftConfig, n_mels: int, sample_rate: int) -> torch.Tensor:
    spec = stft(x, cfg)
    mag = torch.sqrt(spec.real**2 + spec.imag**2 + 1e-10)
    fb = torch.as_tensor(mel_filterbank(n_mels, cfg.fft_size, sample_rate), dtype=mag.dtype)
    return torch.einsum("mf,...ft->...mt", fb, mag)


def mix_at_snr(clean: np.ndarray, noise: np.ndarray, snr_db: float):
    """Scale ``noise`` so the mixture has exactly ``snr_db`` and add it.

    Returns:
        (noisy, gain) where ``noisy = clean + gain * noise``.
    """
    clean = np.asarray(clean, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if clean.shape != noise.shape:
        raise ValueError(f"shape mismatch: {clean.shape} vs {noise.shape}")
    p_clean = np.mean(clean**2)
    p_noise = np.mean(noise**2)
    if p_clean == 0.0 or p_noise == 0.0:
        raise ValueError("clean and noise must both have nonzero power")
    gain = math.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))
    return clean + gain * noise, gain


@dataclass
class SynthSpec:
    """Recipe for one synthetic paired example.

    ``rir`` is ``(decay_time_s, length_s)`` for the dereverberation task and
    ``None`` for denoising.
    """

    sample_rate: int = 8000
    duration: float = 1.0
    clean_kind: str = "harmonic"
    snr_db: tuple = (-5.0, 15.0)
    noise_kind: str = "white"
    rir: tuple | None = None
    seed: int = 0

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if self.clean_kind not in CLEAN_KINDS:
            raise ValueError(f"unknown clean_kind {self.clean_kind!r}")
        if self.noise_kind not in ("white", "pink"):
            raise ValueError(f"unknown noise_kind {self.noise_kind!r}")
        lo, hi = self.snr_db
        if not (np.isfinite(lo) and np.isfinite(hi) and lo <= hi):
            raise ValueError(f"invalid snr range {self.snr_db}")

    @property
    def task(self) -> str:
        return "denoise" if self.rir is None else "dereverb"

    @property
    def length(self) -> int:
        return int(round(self.duration * self.sample_rate))


@dataclass
class PairedSample:
    clean: np.ndarray
    degraded: np.ndarray
    snr_db: float
    task: str
    sample_rate: int
    meta: dict = field(default_factory=dict)


def _envelope(n: int, rng: np.random.Generator) -> np.ndarray:
    attack = max(1, int(n * rng.uniform(0.02, 0.1)))
    release = max(1, int(n * rng.uniform(0.05, 0.3)))
    env = np.ones(n)
    env[:attack] = np.linspace(0.0, 1.0, attack)
    env[n - release :] = np.minimum(env[n - release :], np.linspace(1.0, 0.0, release))
    return env


def _harmonic(n, sr, rng):
    t = np.arange(n) / sr
    f0 = rng.uniform(100.0, 300.0)
    vibrato = 1.0 + 0.02 * np.sin(2 * np.pi * rng.uniform(3.0, 7.0) * t)
    phase = 2 * np.pi * f0 * np.cumsum(vibrato) / sr
    out = np.zeros(n)
    for h in range(1, int((sr / 2) // (f0 * 1.05)) + 1):
        out += rng.uniform(0.2, 1.0) / h * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    return out


def _chirp(n, sr, rng):
    t = np.arange(n) / sr
    f_start = rng.uniform(100.0, 1000.0)
    f_stop = rng.uniform(200.0, 0.45 * sr)
    sweep = f_start + (f_stop - f_start) * t / t[-1] if n > 1 else np.full(n, f_start)
    return np.sin(2 * np.pi * np.cumsum(sweep) / sr)


def _filtered_noise_burst(n, sr, rng):
    noise = rng.standard_normal(n)
    # two-pole resonator at a random centre frequency
    fc = rng.uniform(200.0, 0.35 * sr)
    r = rng.uniform(0.9, 0.98)
    theta = 2 * np.pi * fc / sr
    out = lfilter([1.0 - r], [1.0, -2 * r * np.cos(theta), r * r], noise)
    gate = np.zeros(n)
    n_bursts = rng.integers(1, 4)
    for _ in range(n_bursts):
        start = rng.integers(0, max(1, n // 2))
        width = rng.integers(max(1, n // 8), max(2, n // 2))
        gate[start : start + width] = 1.0
    return out * gate


CLEAN_KINDS = {
    "harmonic": _harmonic,
    "chirp": _chirp,
    "filtered_noise_burst": _filtered_noise_burst,
}


def _pink(n: int, rng: np.random.Generator) -> np.ndarray:
    white = rng.standard_normal(n)
    spec = np.fft.rfft(white)
    f = np.arange(spec.size, dtype=np.float64)
    f[0] = 1.0
    return np.fft.irfft(spec / np.sqrt(f), n)


def exponential_rir(decay_time: float, length: float, sample_rate: int, rng: np.random.Generator) -> np.ndarray:
    """Unit direct path at delay 0 followed by exponentially decaying noise.

    ``decay_time`` is the e-folding time of the tail amplitude in seconds;
    zero gives a unit impulse.
    """
    n = max(1, int(round(length * sample_rate)))
    rir = np.zeros(n)
    rir[0] = 1.0
    if decay_time > 0 and n > 1:
        t = np.arange(1, n) / sample_rate
        rir[1:] = rng.standard_normal(n - 1) * np.exp(-t / decay_time) * 0.5
    return rir


def synth_pair(spec: SynthSpec, rng: np.random.Generator | None = None) -> PairedSample:
    """Generate one (clean, degraded) pair; ``rng`` defaults to ``spec.seed``."""
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    n = spec.length
    clean = CLEAN_KINDS[spec.clean_kind](n, spec.sample_rate, rng) * _envelope(n, rng)
    peak = np.max(np.abs(clean))
    if peak == 0.0:
        clean[0] = 1.0
        peak = 1.0
    clean = 0.5 * clean / peak
    if spec.rir is None:
        snr = float(rng.uniform(*spec.snr_db))
        noise = rng.standard_normal(n) if spec.noise_kind == "white" else _pink(n, rng)
        degraded, _ = mix_at_snr(clean, noise, snr)
    else:
        decay, rir_len = spec.rir
        rir = exponential_rir(decay, rir_len, spec.sample_rate, rng)
        degraded = np.convolve(clean, rir)[:n]
        snr = float(10 * np.log10(np.sum(clean**2) / max(np.sum((degraded - clean) ** 2), 1e-300)))
    meta = {"kind": spec.clean_kind, "seed": spec.seed}
    return PairedSample(
        clean=clean,
        degraded=degraded,
        snr_db=snr,
        task=spec.task,
        sample_rate=spec.sample_rate,
        meta=meta,
    )


def read_wav(path, expected_rate: int | None = None) -> tuple:
    """Read a mono WAV as float64; returns ``(samples, sample_rate)``."""
    rate, data = wavfile.read(str(path))
    if data.ndim != 1:
        raise ValueError(f"{path}: expected mono audio, got shape {data.shape}")
    if np.issubdtype(data.dtype, np.integer):
        data = data.astype(np.float64) / np.iinfo(data.dtype).max
    data = data.astype(np.float64)
    if expected_rate is not None and rate != expected_rate:
        raise ValueError(f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz")
    return data, rate


def write_wav(path, samples, sample_rate: int) -> None:
    wavfile.write(str(path), int(sample_rate), np.asarray(samples, dtype=np.float32))


def write_manifest(path, records) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_manifest(path) -> list:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def spec_to_dict(spec: SynthSpec) -> dict:
    return asdict(spec)
