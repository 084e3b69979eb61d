import numpy as np
import pytest

from sekd.dataset import (
    NOISE_KINDS,
    ManifestEntry,
    MixManifest,
    build_manifest,
    build_manifest_from_dirs,
    load_batch,
    mix_at_snr,
    num_batches,
    read_manifest,
    render_entry,
    resolve_source,
    synthesize_noise,
    synthesize_speech,
    write_manifest,
)
from sekd.dsp import write_wav


class TestSynthesis:
    def test_speech_deterministic(self):
        a = synthesize_speech(42, 1.0)
        b = synthesize_speech(42, 1.0)
        assert np.array_equal(a, b)

    def test_speech_seed_varies(self):
        assert not np.array_equal(synthesize_speech(1, 1.0), synthesize_speech(2, 1.0))

    def test_speech_length_and_range(self):
        x = synthesize_speech(0, 2.5)
        assert x.shape == (40000,)
        assert np.max(np.abs(x)) <= 0.5 + 1e-6

    @pytest.mark.parametrize("kind", NOISE_KINDS)
    def test_noise_kinds(self, kind):
        x = synthesize_noise(kind, 7, 1.0)
        assert x.shape == (16000,)
        assert np.max(np.abs(x)) <= 0.5 + 1e-6
        assert np.array_equal(x, synthesize_noise(kind, 7, 1.0))

    def test_unknown_noise_kind_raises(self):
        with pytest.raises(ValueError):
            synthesize_noise("brownian", 0, 1.0)

    def test_pink_spectrum_tilts_down(self):
        # oracle: pink noise should have more low-frequency energy than white
        pink = synthesize_noise("pink", 3, 4.0)
        white = synthesize_noise("white", 3, 4.0)

        def low_fraction(x):
            spec = np.abs(np.fft.rfft(x)) ** 2
            return spec[: len(spec) // 8].sum() / spec.sum()

        assert low_fraction(pink) > 2 * low_fraction(white)


class TestMixing:
    @pytest.mark.parametrize("snr", [-5.0, 0.0, 5.0, 15.0])
    def test_exact_snr(self, snr):
        s = synthesize_speech(1, 1.0)
        n = synthesize_noise("white", 2, 1.0)
        noisy, scaled = mix_at_snr(s, n, snr)
        got = 10 * np.log10(np.mean(s.astype(np.float64) ** 2)
                            / np.mean(scaled.astype(np.float64) ** 2))
        assert abs(got - snr) < 1e-4
        assert np.allclose(noisy, s + scaled, atol=1e-7)

    def test_zero_energy_raises(self):
        with pytest.raises(ValueError, match="zero-energy"):
            mix_at_snr(np.zeros(100), np.ones(100), 0.0)

    def test_length_mismatch_raises(self):
        with pytest.raises(ValueError):
            mix_at_snr(np.ones(100), np.ones(99), 0.0)


class TestManifest:
    def test_build_is_deterministic(self):
        a = build_manifest(10, seed=5)
        b = build_manifest(10, seed=5)
        assert a.content_hash() == b.content_hash()
        assert a.content_hash() != build_manifest(10, seed=6).content_hash()

    def test_snr_choices_respected(self):
        m = build_manifest(30, seed=1, snr_choices=(-5.0, 0.0, 5.0))
        assert {e.snr_db for e in m.entries} <= {-5.0, 0.0, 5.0}

    def test_round_trip(self, tmp_path):
        m = build_manifest(8, seed=2)
        path = tmp_path / "m.tsv"
        write_manifest(m, path)
        m2 = read_manifest(path)
        assert m2.entries == m.entries
        assert m2.content_hash() == m.content_hash()

    def test_empty_manifest_raises(self):
        with pytest.raises(ValueError):
            MixManifest([])

    def test_entry_validates(self):
        with pytest.raises(ValueError):
            ManifestEntry("a", "b", float("nan"), 1.0, 0)
        with pytest.raises(ValueError):
            ManifestEntry("a", "b", 0.0, -1.0, 0)

    def test_from_dirs(self, tmp_path):
        cdir, ndir = tmp_path / "c", tmp_path / "n"
        cdir.mkdir(), ndir.mkdir()
        for i in range(3):
            write_wav(cdir / f"c{i}.wav", synthesize_speech(i, 1.0))
        write_wav(ndir / "n0.wav", synthesize_noise("white", 9, 1.0))
        m = build_manifest_from_dirs(cdir, ndir, seed=0, duration_s=1.0)
        assert len(m.entries) == 3
        noisy, clean, noise = render_entry(m.entries[0])
        assert noisy.shape == (16000,)
        assert np.allclose(noisy, clean + noise, atol=1e-6)

    def test_from_empty_dirs_raises(self, tmp_path):
        (tmp_path / "c").mkdir(), (tmp_path / "n").mkdir()
        with pytest.raises(ValueError):
            build_manifest_from_dirs(tmp_path / "c", tmp_path / "n", 0, 1.0)


class TestResolveRender:
    def test_synth_uri(self):
        assert np.array_equal(
            resolve_source("synth:speech:17", 1.0), synthesize_speech(17, 1.0)
        )
        assert np.array_equal(
            resolve_source("synth:tonal:4", 1.0), synthesize_noise("tonal", 4, 1.0)
        )

    def test_render_additivity(self):
        e = build_manifest(1, seed=3).entries[0]
        noisy, clean, noise = render_entry(e)
        assert np.allclose(noisy, clean + noise, atol=1e-6)


class TestLoadBatch:
    def setup_method(self):
        self.m = build_manifest(6, seed=0, duration_s=1.0)

    def test_shapes(self):
        b = load_batch(self.m, batch_size=4, chunk_s=0.5, epoch_seed=10, index=0)
        assert b.noisy.shape == (4, 1, 8000)
        assert b.clean.shape == (4, 1, 8000)
        assert len(b.meta) == 4

    def test_pure_function(self):
        a = load_batch(self.m, 4, 0.5, epoch_seed=10, index=1)
        b = load_batch(self.m, 4, 0.5, epoch_seed=10, index=1)
        assert np.array_equal(a.noisy, b.noisy)
        assert np.array_equal(a.clean, b.clean)
        c = load_batch(self.m, 4, 0.5, epoch_seed=11, index=1)
        assert not np.array_equal(a.noisy, c.noisy)

    def test_epochs_permute_order(self):
        seen = {
            tuple(m["seed"] for m in load_batch(self.m, 6, 0.5, s, 0).meta)
            for s in range(5)
        }
        assert len(seen) > 1

    def test_padding_flag(self):
        b = load_batch(self.m, 2, chunk_s=2.0, epoch_seed=0, index=0)
        assert all(m["padded"] for m in b.meta)
        # padded region is zero
        assert np.all(b.noisy[:, :, 16000:] == 0)

    def test_chunk_is_slice_of_full_render(self):
        b = load_batch(self.m, 1, chunk_s=0.5, epoch_seed=3, index=0)
        meta = b.meta[0]
        entry = next(e for e in self.m.entries if e.seed == meta["seed"])
        _, clean, _ = render_entry(entry)
        off = meta["offset"]
        assert np.array_equal(b.clean[0, 0], clean[off : off + 8000])

    def test_multichannel(self):
        b = load_batch(self.m, 2, 0.5, epoch_seed=1, index=0, channels=4)
        assert b.noisy.shape == (2, 4, 8000)
        # clean is duplicated across channels; noisy differs (delayed noise)
        assert np.array_equal(b.clean[0, 0], b.clean[0, 3])
        assert not np.array_equal(b.noisy[0, 0], b.noisy[0, 1])
        # per-channel additivity: noisy - clean is a valid noise signal
        noise1 = b.noisy[0, 1] - b.clean[0, 1]
        noise0 = b.noisy[0, 0] - b.clean[0, 0]
        assert np.sum(noise1**2) <= np.sum(noise0**2) + 1e-6

    def test_too_small_manifest_raises(self):
        with pytest.raises(ValueError):
            load_batch(self.m, batch_size=7, chunk_s=0.5, epoch_seed=0, index=0)

    def test_num_batches(self):
        assert num_batches(self.m, 2) == 3
        assert num_batches(self.m, 4) == 1
        assert num_batches(self.m, 6) == 1


class TestSourceStatistics:
    def test_speech_centroid_below_4khz(self):
        for seed in range(20):
            x = synthesize_speech(seed, 1.0)
            spec = np.abs(np.fft.rfft(x)) ** 2
            freqs = np.fft.rfftfreq(len(x), d=1 / 16000)
            centroid = float((freqs * spec).sum() / spec.sum())
            assert centroid < 4000

    def test_white_noise_mean_near_zero(self):
        x = synthesize_noise("white", 11, 1.0)
        assert abs(float(np.mean(x))) < 0.01

    def test_pink_noise_power_slope(self):
        # log-log fit of power vs frequency; 1/sqrt(f) amplitude -> slope ~ -1
        x = synthesize_noise("pink", 13, 4.0).astype(np.float64)
        spec = np.abs(np.fft.rfft(x)) ** 2
        freqs = np.fft.rfftfreq(len(x), d=1 / 16000)
        keep = (freqs > 50) & (freqs < 7000)
        # average within log-spaced bands to tame per-bin variance
        edges = np.geomspace(50, 7000, 25)
        bf, bp = [], []
        for lo, hi in zip(edges[:-1], edges[1:]):
            m = keep & (freqs >= lo) & (freqs < hi)
            if m.any():
                bf.append(np.sqrt(lo * hi))
                bp.append(spec[m].mean())
        slope = np.polyfit(np.log2(bf), np.log2(bp), 1)[0]
        assert -1.4 <= slope <= -0.6


class TestMixClosedForms:
    def _equal_power(self):
        rng = np.random.default_rng(0)
        s = rng.standard_normal(16000)
        n = rng.standard_normal(16000)
        n *= np.sqrt(np.mean(s**2) / np.mean(n**2))
        return s, n

    def test_zero_db_scale_is_one(self):
        s, n = self._equal_power()
        _, scaled = mix_at_snr(s, n, 0.0)
        assert np.allclose(scaled, n.astype(np.float32), atol=1e-6)

    def test_ten_db_scale(self):
        s, n = self._equal_power()
        _, scaled = mix_at_snr(s, n, 10.0)
        scale = float(np.linalg.norm(scaled) / np.linalg.norm(n))
        assert abs(scale - 10 ** (-10 / 20)) < 1e-6


class TestBatchContract:
    def test_default_shape(self):
        m = build_manifest(8, seed=4, duration_s=2.5)
        b = load_batch(m, batch_size=8, chunk_s=2.5, epoch_seed=0, index=0)
        assert b.noisy.shape == (8, 1, 40000)

    def test_snr_draws_within_range(self):
        m = build_manifest(100, seed=5, snr_range=(-5.0, 15.0))
        assert all(-5.0 <= e.snr_db <= 15.0 for e in m.entries)
