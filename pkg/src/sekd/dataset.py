"""Synthetic speech/noise generation, SNR mixing, manifests and batch loading.

The synthetic corpus stands in for large SE corpora at desk scale. Sources are
either WAV paths or `synth:<recipe>:<seed>` URIs, so a directory of real files
can be substituted without code changes.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dsp import SAMPLE_RATE, read_wav

MANIFEST_VERSION = 1

NOISE_KINDS = ("white", "pink", "babble", "tonal")


def _rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


def _peak_normalize(x: np.ndarray, peak: float = 0.5) -> np.ndarray:
    m = np.max(np.abs(x))
    if m > 0:
        x = x * (peak / m)
    return x


def synthesize_speech(seed: int, duration_s: float) -> np.ndarray:
    """Deterministic speech-like harmonic source.

    Time-varying F0 in 80-300 Hz, formant-shaped harmonic amplitudes,
    syllabic amplitude modulation and occasional silences; peak 0.5.
    """
    if duration_s <= 0:
        raise ValueError("duration_s must be > 0")
    rng = _rng(seed)
    n = int(round(duration_s * SAMPLE_RATE))
    t = np.arange(n) / SAMPLE_RATE

    # F0 contour: smooth random walk between 80 and 300 Hz
    n_knots = max(3, int(duration_s * 4) + 1)
    knots = rng.uniform(80.0, 300.0, size=n_knots)
    f0 = np.interp(t, np.linspace(0.0, duration_s, n_knots), knots)
    phase = 2.0 * np.pi * np.cumsum(f0) / SAMPLE_RATE

    # formant-like spectral envelope
    formants = rng.uniform([350.0, 1100.0, 2300.0], [850.0, 1900.0, 3200.0])
    bws = np.array([120.0, 180.0, 250.0])

    def envelope(freq):
        e = np.zeros_like(freq)
        for fc, bw in zip(formants, bws):
            e += np.exp(-0.5 * ((freq - fc) / bw) ** 2)
        return e * np.exp(-freq / 2500.0)

    x = np.zeros(n)
    n_harm = 24
    for h in range(1, n_harm + 1):
        fh = h * f0
        gain = envelope(fh) * (fh < 0.95 * SAMPLE_RATE / 2)
        x += gain * np.sin(h * phase + rng.uniform(0, 2 * np.pi))

    # syllabic amplitude modulation, 2-8 Hz
    am_rate = rng.uniform(2.0, 8.0)
    am = 0.55 + 0.45 * np.sin(2 * np.pi * am_rate * t + rng.uniform(0, 2 * np.pi))
    x *= am

    # silences: gate out a few random stretches with short ramps
    n_gaps = rng.integers(0, max(1, int(duration_s)) + 1)
    for _ in range(n_gaps):
        start = rng.uniform(0, max(duration_s - 0.15, 0.0))
        width = rng.uniform(0.05, 0.2)
        i0, i1 = int(start * SAMPLE_RATE), min(int((start + width) * SAMPLE_RATE), n)
        if i1 > i0:
            ramp = min(64, (i1 - i0) // 2)
            gate = np.zeros(i1 - i0)
            if ramp > 0:
                gate[:ramp] = np.linspace(1, 0, ramp)
                gate[-ramp:] = np.linspace(0, 1, ramp)
            x[i0:i1] *= gate

    return _peak_normalize(x).astype(np.float32)


def synthesize_noise(kind: str, seed: int, duration_s: float) -> np.ndarray:
    """Deterministic noise source: white, pink, babble or tonal."""
    if duration_s <= 0:
        raise ValueError("duration_s must be > 0")
    if kind not in NOISE_KINDS:
        raise ValueError(f"unknown noise kind {kind!r}, expected one of {NOISE_KINDS}")
    rng = _rng(seed ^ 0x5EED)
    n = int(round(duration_s * SAMPLE_RATE))

    if kind == "white":
        x = rng.standard_normal(n)
    elif kind == "pink":
        white = rng.standard_normal(n)
        spec = np.fft.rfft(white)
        f = np.fft.rfftfreq(n, d=1.0 / SAMPLE_RATE)
        shaping = np.ones_like(f)
        shaping[1:] = 1.0 / np.sqrt(f[1:])
        shaping[0] = 0.0
        x = np.fft.irfft(spec * shaping, n=n)
    elif kind == "babble":
        x = np.zeros(n)
        for i in range(6):
            x += synthesize_speech(seed * 6 + i + 1, duration_s)
    else:  # tonal
        t = np.arange(n) / SAMPLE_RATE
        x = np.zeros(n)
        for _ in range(rng.integers(3, 6)):
            freq = rng.uniform(100.0, 6000.0)
            am = 1.0 + 0.3 * np.sin(2 * np.pi * rng.uniform(0.5, 3.0) * t)
            x += am * np.sin(2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi))

    return _peak_normalize(x).astype(np.float32)


def mix_at_snr(speech: np.ndarray, noise: np.ndarray, snr_db: float):
    """Scale noise so the full-segment SNR equals snr_db exactly.

    Returns (noisy, scaled_noise) with noisy = speech + scaled_noise.
    """
    speech = np.asarray(speech, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if speech.shape != noise.shape:
        raise ValueError("speech and noise must have the same length")
    p_s = np.mean(speech**2)
    p_n = np.mean(noise**2)
    if p_s == 0 or p_n == 0:
        raise ValueError("zero-energy input")
    scale = np.sqrt(p_s / (p_n * 10.0 ** (snr_db / 10.0)))
    scaled = scale * noise
    return (speech + scaled).astype(np.float32), scaled.astype(np.float32)


@dataclass(frozen=True)
class ManifestEntry:
    clean_source: str
    noise_source: str
    snr_db: float
    duration_s: float
    seed: int

    def __post_init__(self):
        if not np.isfinite(self.snr_db):
            raise ValueError("snr_db must be finite")
        if self.duration_s <= 0:
            raise ValueError("duration_s must be > 0")


@dataclass
class MixManifest:
    entries: list[ManifestEntry] = field(default_factory=list)

    def __post_init__(self):
        if not self.entries:
            raise ValueError("manifest has no entries")

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for e in self.entries:
            h.update(
                f"{e.clean_source}\t{e.noise_source}\t{e.snr_db}\t"
                f"{e.duration_s}\t{e.seed}\n".encode()
            )
        return h.hexdigest()[:16]


def build_manifest(
    n: int,
    seed: int,
    duration_s: float = 2.5,
    snr_range: tuple[float, float] = (-5.0, 15.0),
    noise_kinds=NOISE_KINDS,
    snr_choices=None,
) -> MixManifest:
    """Generate a fully synthetic manifest with SNRs drawn from the range."""
    unknown = set(noise_kinds) - set(NOISE_KINDS)
    if unknown:
        raise ValueError(f"unknown noise kinds: {sorted(unknown)}")
    rng = _rng(seed)
    entries = []
    for i in range(n):
        kind = noise_kinds[int(rng.integers(len(noise_kinds)))]
        if snr_choices is not None:
            snr = float(snr_choices[int(rng.integers(len(snr_choices)))])
        else:
            snr = float(rng.uniform(*snr_range))
        item_seed = int(rng.integers(0, 2**31 - 1))
        entries.append(
            ManifestEntry(
                clean_source=f"synth:speech:{item_seed}",
                noise_source=f"synth:{kind}:{item_seed + 1}",
                snr_db=snr,
                duration_s=duration_s,
                seed=item_seed,
            )
        )
    return MixManifest(entries)


def build_manifest_from_dirs(
    clean_dir, noise_dir, seed: int, duration_s: float,
    snr_range: tuple[float, float] = (-5.0, 15.0),
) -> MixManifest:
    """Pair user WAV files into a manifest with the synthetic semantics."""
    cleans = sorted(str(p) for p in Path(clean_dir).glob("*.wav"))
    noises = sorted(str(p) for p in Path(noise_dir).glob("*.wav"))
    if not cleans or not noises:
        raise ValueError("clean/noise directories must contain WAV files")
    rng = _rng(seed)
    entries = []
    for i, clean in enumerate(cleans):
        noise = noises[int(rng.integers(len(noises)))]
        entries.append(
            ManifestEntry(
                clean_source=clean,
                noise_source=noise,
                snr_db=float(rng.uniform(*snr_range)),
                duration_s=duration_s,
                seed=int(rng.integers(0, 2**31 - 1)),
            )
        )
    return MixManifest(entries)


def write_manifest(manifest: MixManifest, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"# sekd-manifest format_version={MANIFEST_VERSION}\n")
        for e in manifest.entries:
            fh.write(
                f"{e.clean_source}\t{e.noise_source}\t{e.snr_db!r}\t"
                f"{e.duration_s!r}\t{e.seed}\n"
            )


def read_manifest(path) -> MixManifest:
    entries = []
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            clean, noise, snr, dur, seed = line.split("\t")
            entries.append(
                ManifestEntry(clean, noise, float(snr), float(dur), int(seed))
            )
    return MixManifest(entries)


def resolve_source(source: str, duration_s: float) -> np.ndarray:
    """Load a manifest source: `synth:<recipe>:<seed>` URI or WAV path."""
    if source.startswith("synth:"):
        _, recipe, seed = source.split(":")
        seed = int(seed)
        if recipe == "speech":
            return synthesize_speech(seed, duration_s)
        return synthesize_noise(recipe, seed, duration_s)
    wave = read_wav(source)[0]  # first channel
    n = int(round(duration_s * SAMPLE_RATE))
    if len(wave) < n:
        wave = np.pad(wave, (0, n - len(wave)))
    return wave[:n]


def render_entry(entry: ManifestEntry):
    """Materialize one manifest row: (noisy, clean, scaled_noise) waveforms."""
    clean = resolve_source(entry.clean_source, entry.duration_s)
    noise = resolve_source(entry.noise_source, entry.duration_s)
    noisy, scaled = mix_at_snr(clean, noise, entry.snr_db)
    return noisy, clean.astype(np.float32), scaled


@dataclass
class Batch:
    noisy: np.ndarray  # (B, channels, samples)
    clean: np.ndarray  # (B, channels, samples)
    meta: list[dict]


def _multichannel(wave: np.ndarray, channels: int, rng, is_noise: bool) -> np.ndarray:
    """Duplicate a mono source across channels; noise gets delays/gains."""
    if channels == 1:
        return wave[None, :]
    out = np.zeros((channels, len(wave)), dtype=wave.dtype)
    out[0] = wave
    for c in range(1, channels):
        if is_noise:
            delay = int(rng.integers(0, 32))
            gain = float(rng.uniform(0.7, 1.0))
            out[c, delay:] = gain * wave[: len(wave) - delay]
        else:
            out[c] = wave
    return out


def load_batch(
    manifest: MixManifest,
    batch_size: int,
    chunk_s: float,
    epoch_seed: int,
    index: int,
    channels: int = 1,
) -> Batch:
    """Deterministic chunked batch: a pure function of (manifest, epoch_seed, index)."""
    n = len(manifest.entries)
    if n < batch_size:
        raise ValueError("manifest has fewer entries than batch_size")
    order = _rng(epoch_seed).permutation(n)
    rng = _rng((epoch_seed, index))
    chunk = int(round(chunk_s * SAMPLE_RATE))
    noisy_out = np.zeros((batch_size, channels, chunk), dtype=np.float32)
    clean_out = np.zeros((batch_size, channels, chunk), dtype=np.float32)
    meta = []
    for b in range(batch_size):
        entry = manifest.entries[order[(index * batch_size + b) % n]]
        _, clean, noise = render_entry(entry)
        padded = len(clean) < chunk
        if padded:
            off = 0
            clean = np.pad(clean, (0, chunk - len(clean)))
            noise = np.pad(noise, (0, chunk - len(noise)))
        else:
            off = int(rng.integers(0, len(clean) - chunk + 1))
        clean_c = clean[off : off + chunk]
        noise_c = noise[off : off + chunk]
        ch_rng = _rng((entry.seed, channels))
        clean_mc = _multichannel(clean_c, channels, ch_rng, is_noise=False)
        noise_mc = _multichannel(noise_c, channels, ch_rng, is_noise=True)
        clean_out[b] = clean_mc
        noisy_out[b] = clean_mc + noise_mc
        meta.append(
            {
                "clean_source": entry.clean_source,
                "noise_source": entry.noise_source,
                "snr_db": entry.snr_db,
                "seed": entry.seed,
                "offset": off,
                "padded": padded,
            }
        )
    return Batch(noisy=noisy_out, clean=clean_out, meta=meta)


def num_batches(manifest: MixManifest, batch_size: int) -> int:
    """Batches per epoch for one pass over the manifest (last partial dropped
    only when the manifest is smaller than a batch)."""
    return max(1, len(manifest.entries) // batch_size)
