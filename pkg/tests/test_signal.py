import math

import numpy as np
import pytest
import torch

from sbufogen.metrics import si_sdr
from sbufogen.signal import (
    CompressionConfig,
    StftConfig,
    SynthSpec,
    exponential_rir,
    istft,
    mel_filterbank,
    mix_at_snr,
    power_compress,
    power_decompress,
    read_manifest,
    read_wav,
    stft,
    synth_pair,
    write_manifest,
    write_wav,
)


class TestStft:
    def test_round_trip_random(self):
        x = torch.randn(8000, generator=torch.Generator().manual_seed(0), dtype=torch.float64)
        for cfg in (StftConfig(), StftConfig(512, 128), StftConfig(32, 8)):
            back = istft(stft(x, cfg), cfg, x.numel())
            assert (back - x).abs().max().item() <= 1e-6

    def test_round_trip_float32_and_batch(self):
        x = torch.randn(3, 2, 1000, generator=torch.Generator().manual_seed(1))
        cfg = StftConfig()
        back = istft(stft(x, cfg), cfg, 1000)
        assert back.shape == x.shape
        assert (back - x).abs().max().item() <= 1e-5

    def test_zero(self):
        cfg = StftConfig()
        spec = stft(torch.zeros(1000, dtype=torch.float64), cfg)
        assert torch.count_nonzero(spec) == 0
        assert torch.count_nonzero(istft(spec, cfg, 1000)) == 0

    def test_shape(self):
        cfg = StftConfig(256, 64)
        assert stft(torch.zeros(1024), cfg).shape == (129, 17)
        assert cfg.n_frames(1024) == 17

    def test_bin_centered_sinusoid(self):
        # A periodic Hann window spreads a bin-centred tone over bins k-1..k+1
        # (weights 1/4, 1, 1/4 in amplitude), so >= 99% of each interior
        # frame's energy lies there; the centre bin alone carries 2/3.
        cfg = StftConfig(256, 64)
        k = 20
        n = np.arange(4096)
        x = torch.tensor(np.cos(2 * np.pi * k * n / 256))
        power = stft(x, cfg).abs() ** 2
        frames = power[:, 4:-4]
        share = frames[k - 1 : k + 2].sum(0) / frames.sum(0)
        assert share.min().item() >= 0.99
        centre = frames[k] / frames.sum(0)
        assert centre.min().item() == pytest.approx(2 / 3, abs=1e-9)

    def test_matches_direct_dft(self):
        cfg = StftConfig(64, 16)
        x = np.random.default_rng(2).normal(size=300)
        spec = stft(torch.tensor(x), cfg).numpy()
        win = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(64) / 64)
        padded = np.pad(x, 32)
        m = np.arange(64)
        for frame in (0, 3, 10, spec.shape[1] - 1):
            seg = padded[frame * 16 : frame * 16 + 64] * win
            for k in (0, 5, 32):
                direct = np.sum(seg * np.exp(-2j * np.pi * k * m / 64))
                assert abs(spec[k, frame] - direct) <= 1e-10

    def test_parseval(self):
        cfg = StftConfig(256, 64)
        x = np.random.default_rng(3).normal(size=2048)
        spec = stft(torch.tensor(x), cfg).numpy()
        win = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(256) / 256)
        padded = np.pad(x, 128)
        frame_energy = np.array(
            [np.sum((padded[i * 64 : i * 64 + 256] * win) ** 2) for i in range(spec.shape[1])]
        )
        # one-sided spectrum: interior bins count twice
        weights = np.full(129, 2.0)
        weights[[0, 128]] = 1.0
        spec_energy = (weights[:, None] * np.abs(spec) ** 2).sum(0) / 256
        np.testing.assert_allclose(spec_energy, frame_energy, rtol=1e-6)

    @pytest.mark.parametrize("fft_size,hop", [(256, 256), (256, 300), (0, 1)])
    def test_invalid_configs(self, fft_size, hop):
        with pytest.raises(ValueError):
            StftConfig(fft_size, hop)


class TestCompression:
    def test_identity(self):
        spec = torch.randn(10, dtype=torch.complex128)
        out = power_compress(spec, CompressionConfig(1.0, 1.0))
        torch.testing.assert_close(out, spec, rtol=1e-12, atol=1e-12)

    def test_hand_value(self):
        spec = torch.tensor([4.0 + 0j, 0 - 4j], dtype=torch.complex128)
        out = power_compress(spec, CompressionConfig(0.5, 0.15))
        torch.testing.assert_close(out.abs(), torch.tensor([0.3, 0.3], dtype=torch.float64))
        torch.testing.assert_close(torch.angle(out), torch.angle(spec))

    @pytest.mark.parametrize("exponent", [0.3, 0.5, 1.0])
    def test_round_trip(self, exponent):
        spec = torch.randn(200, dtype=torch.complex128) * 3
        ccfg = CompressionConfig(exponent, 0.15)
        back = power_decompress(power_compress(spec, ccfg), ccfg)
        rel = ((back - spec).abs() / spec.abs()).max().item()
        assert rel <= 1e-6

    def test_invalid(self):
        with pytest.raises(ValueError):
            CompressionConfig(exponent=0.0)


class TestMel:
    def test_rows_nonnegative_contiguous(self):
        fb = mel_filterbank(40, 256, 8000)
        assert fb.shape == (40, 129)
        assert (fb >= 0).all()
        for row in fb:
            nz = np.flatnonzero(row)
            assert nz.size >= 1
            assert np.all(np.diff(nz) == 1)


class TestMix:
    def test_equal_power_zero_db(self):
        rng = np.random.default_rng(0)
        s = rng.normal(size=100)
        n = s[::-1].copy()
        _, gain = mix_at_snr(s, n, 0.0)
        assert gain == pytest.approx(1.0, abs=1e-12)

    def test_louder_noise(self):
        rng = np.random.default_rng(1)
        s = rng.normal(size=1000)
        n = rng.normal(size=1000)
        n *= math.sqrt(10 * np.mean(s**2) / np.mean(n**2))
        _, gain = mix_at_snr(s, n, 0.0)
        assert gain == pytest.approx(1 / math.sqrt(10), rel=1e-12)

    @pytest.mark.parametrize("snr", [-10.0, -3.3, 0.0, 7.25, 40.0])
    def test_exact_snr(self, snr):
        rng = np.random.default_rng(2)
        s = rng.normal(size=4000)
        n = rng.uniform(-1, 1, size=4000)
        noisy, gain = mix_at_snr(s, n, snr)
        measured = 10 * np.log10(np.mean(s**2) / np.mean((noisy - s) ** 2))
        assert abs(measured - snr) <= 1e-9

    def test_zero_power(self):
        with pytest.raises(ValueError):
            mix_at_snr(np.zeros(10), np.ones(10), 0.0)
        with pytest.raises(ValueError):
            mix_at_snr(np.ones(10), np.zeros(10), 0.0)


class TestSynth:
    @pytest.mark.parametrize("kind", ["harmonic", "chirp", "filtered_noise_burst"])
    def test_deterministic(self, kind):
        spec = SynthSpec(clean_kind=kind, seed=42, noise_kind="pink")
        a, b = synth_pair(spec), synth_pair(spec)
        assert np.array_equal(a.clean, b.clean) and np.array_equal(a.degraded, b.degraded)
        assert a.snr_db == b.snr_db
        assert a.clean.shape == (8000,)
        assert -5 <= a.snr_db <= 15

    def test_high_snr_cross_check(self):
        pair = synth_pair(SynthSpec(snr_db=(100.0, 100.0), seed=3))
        assert si_sdr(pair.degraded, pair.clean) >= 99.0

    def test_rir_zero_decay_is_identity(self):
        pair = synth_pair(SynthSpec(rir=(0.0, 0.25), seed=4))
        assert pair.task == "dereverb"
        assert np.array_equal(pair.degraded, pair.clean)

    def test_rir_shape(self):
        rir = exponential_rir(0.05, 0.25, 8000, np.random.default_rng(0))
        assert rir[0] == 1.0 and rir.size == 2000
        early = np.abs(rir[1:400]).mean()
        late = np.abs(rir[1600:]).mean()
        assert late < early

    def test_invalid(self):
        with pytest.raises(ValueError):
            SynthSpec(duration=0)
        with pytest.raises(ValueError):
            SynthSpec(snr_db=(5, float("inf")))
        with pytest.raises(ValueError):
            SynthSpec(clean_kind="speech")


class TestIO:
    def test_wav_round_trip(self, tmp_path):
        x = np.random.default_rng(0).uniform(-0.5, 0.5, 800)
        write_wav(tmp_path / "a.wav", x, 8000)
        back, rate = read_wav(tmp_path / "a.wav", expected_rate=8000)
        assert rate == 8000
        np.testing.assert_array_equal(back, x.astype(np.float32).astype(np.float64))

    def test_wav_rate_mismatch(self, tmp_path):
        write_wav(tmp_path / "a.wav", np.zeros(10), 16000)
        with pytest.raises(ValueError, match="sample rate"):
            read_wav(tmp_path / "a.wav", expected_rate=8000)

    def test_manifest(self, tmp_path):
        recs = [{"path": "a.wav", "seed": 1, "snr_db": 2.5, "task": "denoise"}]
        write_manifest(tmp_path / "m.jsonl", recs)
        assert read_manifest(tmp_path / "m.jsonl") == recs
        with pytest.raises(FileNotFoundError):
            read_manifest(tmp_path / "missing.jsonl")
