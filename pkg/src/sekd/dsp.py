"""Waveform/spectrogram transforms, complex-ratio-mask application and losses.

All operations are pure functions of their inputs and keep the dtype of the
tensors they are given, so tests can run them in float64 while training runs
in float32.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.io.wavfile
import scipy.signal
import torch

SAMPLE_RATE = 16000

SI_SNR_CAP_DB = 120.0


def _window_array(name: str, win_len: int) -> np.ndarray:
    if name == "hann":
        return scipy.signal.get_window("hann", win_len, fftbins=True)
    if name == "hamming":
        return scipy.signal.get_window("hamming", win_len, fftbins=True)
    if name in ("rect", "boxcar"):
        return np.ones(win_len)
    raise ValueError(f"unknown window {name!r}")


@dataclass(frozen=True)
class StftConfig:
    sample_rate_hz: int = SAMPLE_RATE
    win_len_samples: int = 512
    hop_samples: int = 256
    fft_size: int = 512
    window: str = "hann"

    def __post_init__(self):
        if self.hop_samples > self.win_len_samples:
            raise ValueError("hop_samples must be <= win_len_samples")
        if self.fft_size < self.win_len_samples:
            raise ValueError("fft_size must be >= win_len_samples")
        _window_array(self.window, self.win_len_samples)

    @property
    def bins(self) -> int:
        return self.fft_size // 2 + 1

    def num_frames(self, samples: int) -> int:
        # centered framing: one frame per hop plus the leading frame
        return samples // self.hop_samples + 1

    def window_tensor(self, dtype=torch.float64) -> torch.Tensor:
        return torch.as_tensor(
            _window_array(self.window, self.win_len_samples), dtype=dtype
        )

    def is_cola(self) -> bool:
        w = _window_array(self.window, self.win_len_samples)
        return bool(
            scipy.signal.check_COLA(
                w, self.win_len_samples, self.win_len_samples - self.hop_samples
            )
        )


@dataclass
class ComplexSpectrogram:
    """Complex T-F representation, data shaped (channels, frames, bins)."""

    data: torch.Tensor
    config: StftConfig

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValueError("spectrogram data must be (channels, frames, bins)")
        if self.data.shape[-1] != self.config.bins:
            raise ValueError(
                f"bin count {self.data.shape[-1]} does not match fft_size "
                f"{self.config.fft_size}"
            )


def _as_channels_samples(wave) -> torch.Tensor:
    x = torch.as_tensor(wave)
    if x.ndim == 1:
        x = x.unsqueeze(0)
    if x.ndim != 2:
        raise ValueError("waveform must be (samples,) or (channels, samples)")
    return x


def stft(wave, cfg: StftConfig) -> ComplexSpectrogram:
    """Centered, reflect-padded STFT of a (channels, samples) waveform."""
    x = _as_channels_samples(wave)
    if not x.is_floating_point():
        x = x.double()
    if x.shape[-1] < cfg.win_len_samples:
        raise ValueError("input too short: need at least one full window")
    win = cfg.window_tensor(dtype=x.dtype)
    spec = torch.stft(
        x,
        n_fft=cfg.fft_size,
        hop_length=cfg.hop_samples,
        win_length=cfg.win_len_samples,
        window=win,
        center=True,
        pad_mode="reflect",
        return_complex=True,
    )
    # torch returns (channels, bins, frames)
    return ComplexSpectrogram(spec.transpose(-2, -1), cfg)


def istft(spec: ComplexSpectrogram, length: int | None = None) -> torch.Tensor:
    """Inverse STFT back to a (channels, samples) waveform."""
    cfg = spec.config
    if not cfg.is_cola():
        raise ValueError(
            "reconstruction not guaranteed: window/hop fails the COLA condition"
        )
    win = cfg.window_tensor(dtype=spec.data.real.dtype)
    return torch.istft(
        spec.data.transpose(-2, -1),
        n_fft=cfg.fft_size,
        hop_length=cfg.hop_samples,
        win_length=cfg.win_len_samples,
        window=win,
        center=True,
        length=length,
    )


def apply_crm(noisy: ComplexSpectrogram, mask: torch.Tensor) -> ComplexSpectrogram:
    """Multiply a complex ratio mask with the noisy spectrum, per channel."""
    if mask.shape != noisy.data.shape[-2:]:
        raise ValueError(
            f"mask shape {tuple(mask.shape)} does not match spectrogram frames/bins "
            f"{tuple(noisy.data.shape[-2:])}"
        )
    return ComplexSpectrogram(noisy.data * mask, noisy.config)


@dataclass(frozen=True)
class MrstftConfig:
    resolutions: tuple = ((512, 128, 512), (1024, 256, 1024), (2048, 512, 2048))
    sc_weight: float = 1.0
    mag_weight: float = 1.0
    log_eps: float = 1e-4

    def __post_init__(self):
        if len(self.resolutions) < 1:
            raise ValueError("need at least one STFT resolution")
        if self.sc_weight < 0 or self.mag_weight < 0:
            raise ValueError("loss weights must be >= 0")


def _mag_stft(x: torch.Tensor, fft_size: int, hop: int, win_len: int) -> torch.Tensor:
    win = torch.as_tensor(
        _window_array("hann", win_len), dtype=x.dtype, device=x.device
    )
    spec = torch.stft(
        x,
        n_fft=fft_size,
        hop_length=hop,
        win_length=win_len,
        window=win,
        center=True,
        pad_mode="reflect",
        return_complex=True,
    )
    return spec.abs()


def mrstft_terms(
    est: torch.Tensor, ref: torch.Tensor, cfg: MrstftConfig | None = None
) -> list[tuple[torch.Tensor, torch.Tensor]]:
    """Per-resolution (spectral convergence, log-magnitude L1) pairs."""
    cfg = cfg or MrstftConfig()
    est = torch.atleast_2d(torch.as_tensor(est))
    ref = torch.atleast_2d(torch.as_tensor(ref))
    if est.shape != ref.shape:
        raise ValueError("est and ref must have the same length")
    if est.shape[-1] < max(r[2] for r in cfg.resolutions):
        raise ValueError("input too short: need at least the largest window")
    out = []
    for fft_size, hop, win_len in cfg.resolutions:
        em = _mag_stft(est, fft_size, hop, win_len)
        rm = _mag_stft(ref, fft_size, hop, win_len)
        sc = torch.linalg.norm(rm - em) / torch.linalg.norm(rm).clamp_min(1e-12)
        mag = torch.mean(
            torch.abs(torch.log(em + cfg.log_eps) - torch.log(rm + cfg.log_eps))
        )
        out.append((sc, mag))
    return out


def mrstft_loss(
    est: torch.Tensor, ref: torch.Tensor, cfg: MrstftConfig | None = None
) -> torch.Tensor:
    """Multi-resolution STFT loss: spectral convergence + log-magnitude L1."""
    cfg = cfg or MrstftConfig()
    total = None
    for sc, mag in mrstft_terms(est, ref, cfg):
        term = cfg.sc_weight * sc + cfg.mag_weight * mag
        total = term if total is None else total + term
    return total


def si_snr(est, ref) -> float:
    """Scale-invariant SNR in dB, capped at +120 dB."""
    e = np.asarray(est, dtype=np.float64).reshape(-1)
    r = np.asarray(ref, dtype=np.float64).reshape(-1)
    if e.shape != r.shape:
        raise ValueError("est and ref must have the same length")
    r = r - r.mean()
    e = e - e.mean()
    r_energy = np.dot(r, r)
    if r_energy == 0.0:
        raise ValueError("reference signal has zero energy")
    target = (np.dot(e, r) / r_energy) * r
    noise = e - target
    num = np.dot(target, target)
    den = np.dot(noise, noise)
    if den <= num * 10 ** (-SI_SNR_CAP_DB / 10):
        return SI_SNR_CAP_DB
    return float(10.0 * np.log10(num / den))


def read_wav(path) -> np.ndarray:
    """Read a 16 kHz WAV file as float (channels, samples) in [-1, 1]."""
    sr, data = scipy.io.wavfile.read(path)
    if sr != SAMPLE_RATE:
        raise ValueError(f"expected {SAMPLE_RATE} Hz input, got {sr} Hz: {path}")
    if data.dtype == np.int16:
        data = data.astype(np.float32) / 32768.0
    elif data.dtype == np.int32:
        data = data.astype(np.float32) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        data = data.astype(np.float32)
    else:
        raise ValueError(f"unsupported WAV sample format {data.dtype}: {path}")
    if data.ndim == 1:
        data = data[None, :]
    else:
        data = data.T
    return data


def write_wav(path, wave, sample_rate: int = SAMPLE_RATE) -> None:
    """Write a (channels, samples) or (samples,) float array as 32-bit-float WAV."""
    w = np.asarray(wave, dtype=np.float32)
    if w.ndim == 2:
        w = w.T if w.shape[0] <= w.shape[1] else w
        if w.shape[1] == 1:
            w = w[:, 0]
    scipy.io.wavfile.write(path, sample_rate, w)
