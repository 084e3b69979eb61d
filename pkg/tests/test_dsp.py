import numpy as np
import pytest
import torch

from sekd.dsp import (
    ComplexSpectrogram,
    MrstftConfig,
    StftConfig,
    apply_crm,
    istft,
    mrstft_loss,
    mrstft_terms,
    read_wav,
    si_snr,
    stft,
    write_wav,
)

from conftest import max_rel_err_fd

CFG = StftConfig()

COLA_GRID = [
    StftConfig(win_len_samples=512, hop_samples=256, fft_size=512),
    StftConfig(win_len_samples=512, hop_samples=128, fft_size=512),
    StftConfig(win_len_samples=1024, hop_samples=512, fft_size=1024),
]


def _rand_wave(n, seed=0, channels=1):
    rng = np.random.default_rng(seed)
    return torch.as_tensor(rng.standard_normal((channels, n)))


class TestStft:
    def test_zero_wave_gives_zero_spec(self):
        spec = stft(torch.zeros(1, 16000, dtype=torch.float64), CFG)
        assert torch.all(spec.data == 0)

    def test_sine_peaks_at_expected_bin(self):
        # 1 kHz at 16 kHz, 512-point FFT -> bin 1000*512/16000 = 32
        t = np.arange(16000) / 16000
        x = torch.as_tensor(np.sin(2 * np.pi * 1000 * t))[None, :]
        spec = stft(x, CFG)
        mag = spec.data.abs().mean(dim=1)[0]
        assert int(torch.argmax(mag)) == 32

    def test_sine_frame_matches_direct_dft(self):
        # oracle: windowed DFT of the frame starting at sample 0 (frame index 1
        # under centered framing lands at offset hop - win/2 + win/2 = hop/2;
        # use an interior frame so reflect padding is not involved)
        rng = np.random.default_rng(3)
        x = rng.standard_normal(4096)
        spec = stft(torch.as_tensor(x)[None, :], CFG)
        frame_idx = 4
        start = frame_idx * CFG.hop_samples - CFG.win_len_samples // 2
        frame = x[start : start + CFG.win_len_samples]
        win = CFG.window_tensor().numpy()
        oracle = np.fft.rfft(frame * win, n=CFG.fft_size)
        got = spec.data[0, frame_idx].numpy()
        assert np.max(np.abs(got - oracle)) < 1e-9

    def test_frame_count_matches_enumeration(self):
        n = int(2.5 * 16000)
        spec = stft(_rand_wave(n), CFG)
        # oracle: enumerate centered frame start indices at multiples of hop
        expected = len(range(0, n + 1, CFG.hop_samples))
        assert spec.data.shape[1] == expected == 157

    def test_too_short_input_raises(self):
        with pytest.raises(ValueError, match="input too short"):
            stft(torch.zeros(1, 100), CFG)

    def test_linearity(self):
        x, y = _rand_wave(8000, 1), _rand_wave(8000, 2)
        a, b = 0.7, -1.3
        lhs = stft(a * x + b * y, CFG).data
        rhs = a * stft(x, CFG).data + b * stft(y, CFG).data
        assert torch.max(torch.abs(lhs - rhs)) < 1e-6

    def test_bins_invariant(self):
        spec = stft(_rand_wave(8000), CFG)
        assert spec.data.shape[-1] == CFG.fft_size // 2 + 1


class TestIstft:
    @pytest.mark.parametrize("cfg", COLA_GRID)
    def test_round_trip_interior(self, cfg):
        x = _rand_wave(16000, seed=5)
        y = istft(stft(x, cfg), length=16000)
        w = cfg.win_len_samples
        err = torch.linalg.norm(y[0, w:-w] - x[0, w:-w]) / torch.linalg.norm(
            x[0, w:-w]
        )
        assert err < 1e-6

    def test_zero_spec_gives_zero_wave(self):
        spec = stft(torch.zeros(1, 8000, dtype=torch.float64), CFG)
        assert torch.max(torch.abs(istft(spec))) == 0

    def test_round_trip_si_snr(self):
        x = _rand_wave(16000, seed=7)
        y = istft(stft(x, CFG), length=16000)
        assert si_snr(y[0].numpy(), x[0].numpy()) > 100

    def test_non_cola_raises(self):
        bad = StftConfig(win_len_samples=512, hop_samples=300, fft_size=512)
        spec = stft(_rand_wave(8000), bad)
        with pytest.raises(ValueError, match="reconstruction not guaranteed"):
            istft(spec)


class TestApplyCrm:
    def test_identity_mask(self):
        spec = stft(_rand_wave(8000), CFG)
        mask = torch.ones(spec.data.shape[-2:], dtype=spec.data.dtype)
        out = apply_crm(spec, mask)
        assert torch.equal(out.data, spec.data)
        assert out.config == spec.config

    def test_zero_mask(self):
        spec = stft(_rand_wave(8000), CFG)
        out = apply_crm(spec, torch.zeros(spec.data.shape[-2:], dtype=spec.data.dtype))
        assert torch.all(out.data == 0)

    def test_shape_mismatch_raises(self):
        spec = stft(_rand_wave(8000), CFG)
        with pytest.raises(ValueError):
            apply_crm(spec, torch.ones(3, 3, dtype=spec.data.dtype))

    def test_oracle_mask_recovers_clean(self):
        # construct mask = clean/noisy on a synthetic pair
        rng = np.random.default_rng(11)
        t = np.arange(16000) / 16000
        clean = np.sin(2 * np.pi * 400 * t) * 0.5
        noisy = clean + 0.3 * rng.standard_normal(16000)
        cs = stft(torch.as_tensor(clean)[None, :], CFG)
        ns = stft(torch.as_tensor(noisy)[None, :], CFG)
        eps = 1e-8
        mask = torch.where(
            ns.data[0].abs() > eps, cs.data[0] / ns.data[0], torch.zeros_like(cs.data[0])
        )
        est = istft(apply_crm(ns, mask), length=16000)
        assert si_snr(est[0].numpy(), clean) > 40


class TestMrstft:
    def test_equal_signals_zero_loss(self):
        x = _rand_wave(4096, seed=1)
        assert float(mrstft_loss(x, x)) < 1e-7

    def test_spectral_convergence_of_zero_estimate(self):
        t = np.arange(4096) / 16000
        ref = torch.as_tensor(np.sin(2 * np.pi * 440 * t))[None, :]
        est = torch.zeros_like(ref)
        for sc, _ in mrstft_terms(est, ref):
            assert abs(float(sc) - 1.0) < 1e-12

    def test_nonnegative(self):
        for seed in range(5):
            x, y = _rand_wave(4096, seed), _rand_wave(4096, seed + 100)
            assert float(mrstft_loss(x, y)) >= 0

    def test_length_mismatch_raises(self):
        with pytest.raises(ValueError):
            mrstft_loss(torch.zeros(1, 4096), torch.zeros(1, 4097))

    @pytest.mark.parametrize("seed", range(5))
    def test_gradient_matches_finite_differences(self, seed):
        cfg = MrstftConfig(resolutions=((64, 16, 64), (128, 32, 128)))
        ref = _rand_wave(512, seed=seed + 50)
        x0 = _rand_wave(512, seed=seed)
        err = max_rel_err_fd(lambda x: mrstft_loss(x, ref, cfg), x0, rng_seed=seed)
        assert err < 1e-4


class TestSiSnr:
    def test_self_comparison_capped(self):
        x = np.random.default_rng(0).standard_normal(1000)
        assert si_snr(x, x) == 120.0

    def test_scale_invariance(self):
        x = np.random.default_rng(1).standard_normal(1000)
        base = si_snr(x, x / 2)
        for alpha in (0.1, 2.0, 37.0):
            assert abs(si_snr(alpha * x, x / 2) - base) < 1e-9

    def test_orthogonal_noise_closed_form(self):
        rng = np.random.default_rng(2)
        r = rng.standard_normal(4096)
        r -= r.mean()
        v = rng.standard_normal(4096)
        v -= v.mean()
        w = v - (v @ r / (r @ r)) * r  # orthogonal to r
        w *= np.sqrt((r @ r) / (w @ w) / 10.0)  # energy ratio 10
        assert abs(si_snr(r + w, r) - 10.0) < 1e-6

    def test_zero_reference_raises(self):
        with pytest.raises(ValueError, match="zero energy"):
            si_snr(np.ones(10), np.zeros(10))


class TestWavIo:
    def test_round_trip(self, tmp_path):
        x = np.random.default_rng(0).uniform(-0.5, 0.5, 8000).astype(np.float32)
        path = tmp_path / "x.wav"
        write_wav(path, x)
        y = read_wav(path)
        assert y.shape == (1, 8000)
        assert np.allclose(y[0], x, atol=1e-7)

    def test_wrong_sample_rate_raises(self, tmp_path):
        import scipy.io.wavfile

        path = tmp_path / "bad.wav"
        scipy.io.wavfile.write(path, 8000, np.zeros(100, dtype=np.float32))
        with pytest.raises(ValueError, match="16000"):
            read_wav(path)
