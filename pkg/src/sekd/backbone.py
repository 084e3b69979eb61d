"""Causal dual-path dilated convolutional recurrent network (teacher/student).

Encoder: two stride-(1,2) convs plus a dilated causal block; middle: stacked
frequency-time blocks (per-frame frequency attention/GRU, causal temporal
attention/GRU); decoder mirrors the encoder and emits a 2-channel complex
ratio mask. Intermediate activations are tapped into three correlated sets
(encoder / ft / decoder) for distillation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn

from .dsp import ComplexSpectrogram, StftConfig, apply_crm, istft, stft

DEFAULT_TAP_PLAN = (
    "enc_conv1",
    "enc_conv2",
    "enc_dilated",
    "ft_blocks",
    "dec_dilated",
    "dec_deconv1",
    "dec_deconv2",
)


@dataclass(frozen=True)
class BackboneConfig:
    in_channels: int = 2
    conv_channels: int = 128
    n_ft_blocks: int = 4
    ft_hidden: int = 128
    dilations: tuple = (1, 2, 4, 8)
    n_heads: int = 4
    tap_plan: tuple = DEFAULT_TAP_PLAN

    def __post_init__(self):
        if self.conv_channels <= 0:
            raise ValueError("conv_channels must be > 0")
        if self.n_ft_blocks < 1:
            raise ValueError("n_ft_blocks must be >= 1")
        if list(self.dilations) != sorted(set(self.dilations)):
            raise ValueError("dilations must be strictly increasing")

    @classmethod
    def teacher(cls, in_channels: int = 2) -> "BackboneConfig":
        return cls(in_channels=in_channels)

    @classmethod
    def student(cls, in_channels: int = 2) -> "BackboneConfig":
        return cls(
            in_channels=in_channels, conv_channels=64, n_ft_blocks=1, ft_hidden=64
        )

    def to_dict(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "conv_channels": self.conv_channels,
            "n_ft_blocks": self.n_ft_blocks,
            "ft_hidden": self.ft_hidden,
            "dilations": ",".join(str(d) for d in self.dilations),
            "n_heads": self.n_heads,
            "tap_plan": ",".join(self.tap_plan),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneConfig":
        return cls(
            in_channels=int(d["in_channels"]),
            conv_channels=int(d["conv_channels"]),
            n_ft_blocks=int(d["n_ft_blocks"]),
            ft_hidden=int(d["ft_hidden"]),
            dilations=tuple(int(x) for x in d["dilations"].split(",")),
            n_heads=int(d["n_heads"]),
            tap_plan=tuple(d["tap_plan"].split(",")),
        )


@dataclass
class FeatureMap:
    data: torch.Tensor  # (B, C, T, D)
    tap: str
    set_id: str  # encoder | ft | decoder


@dataclass
class TapBundle:
    encoder_taps: list[FeatureMap] = field(default_factory=list)
    ft_taps: list[FeatureMap] = field(default_factory=list)
    decoder_taps: list[FeatureMap] = field(default_factory=list)

    def sets(self) -> dict[str, list[FeatureMap]]:
        return {
            "encoder": self.encoder_taps,
            "ft": self.ft_taps,
            "decoder": self.decoder_taps,
        }


class ChannelNorm(nn.Module):
    """LayerNorm over the channel dim of (B, C, T, D); causal in time."""

    def __init__(self, channels: int):
        super().__init__()
        self.norm = nn.LayerNorm(channels)

    def forward(self, x):
        return self.norm(x.permute(0, 2, 3, 1)).permute(0, 3, 1, 2)


class CausalConv2d(nn.Module):
    """Conv2d with left-only padding in time, symmetric padding in frequency."""

    def __init__(self, cin, cout, kernel, dilation_t=1, stride_f=1):
        super().__init__()
        kt, kf = kernel
        self.pad_t = (kt - 1) * dilation_t
        self.pad_f = (kf - 1) // 2
        self.conv = nn.Conv2d(
            cin, cout, kernel, stride=(1, stride_f), dilation=(dilation_t, 1)
        )

    def forward(self, x):
        x = nn.functional.pad(x, (self.pad_f, self.pad_f, self.pad_t, 0))
        return self.conv(x)


class DilatedUnit(nn.Module):
    """Residual pair of causal (2,3) convs plus a pointwise fusion conv."""

    def __init__(self, channels: int, dilation: int):
        super().__init__()
        self.conv1 = CausalConv2d(channels, channels, (2, 3), dilation_t=dilation)
        self.conv2 = CausalConv2d(channels, channels, (2, 3), dilation_t=dilation)
        self.pointwise = nn.Conv2d(channels, channels, 1)
        self.norm = ChannelNorm(channels)
        self.act = nn.PReLU(channels)

    def forward(self, x):
        y = self.conv1(x)
        y = self.act(self.norm(y))
        y = self.conv2(y)
        y = self.pointwise(y)
        return torch.relu(y) + x


class DilatedBlock(nn.Module):
    def __init__(self, channels: int, dilations):
        super().__init__()
        self.units = nn.ModuleList(DilatedUnit(channels, d) for d in dilations)

    def forward(self, x):
        for unit in self.units:
            x = unit(x)
        return x


class BranchAttention(nn.Module):
    """Pre-norm multi-head self-attention with optional causal masking."""

    def __init__(self, dim: int, heads: int, causal: bool):
        super().__init__()
        self.norm = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.causal = causal

    def forward(self, x):
        h = self.norm(x)
        mask = None
        if self.causal:
            t = x.shape[1]
            mask = torch.triu(
                torch.ones(t, t, dtype=torch.bool, device=x.device), diagonal=1
            )
        out, _ = self.attn(h, h, h, attn_mask=mask, need_weights=False)
        return x + out


class GruFeedForward(nn.Module):
    """GRU -> ReLU -> dense, residual; bidirectional only off the time axis."""

    def __init__(self, dim: int, hidden: int, bidirectional: bool):
        super().__init__()
        self.norm = nn.LayerNorm(dim)
        per_dir = hidden // 2 if bidirectional else hidden
        self.gru = nn.GRU(
            dim, per_dir, batch_first=True, bidirectional=bidirectional
        )
        self.dense = nn.Linear(per_dir * (2 if bidirectional else 1), dim)

    def forward(self, x):
        h, _ = self.gru(self.norm(x))
        return x + self.dense(torch.relu(h))


class FTBlock(nn.Module):
    """Frequency branch (per frame) followed by a causal temporal branch."""

    def __init__(self, channels: int, hidden: int, heads: int):
        super().__init__()
        gru_hidden = int(hidden * 1.25)
        self.freq_attn = BranchAttention(channels, heads, causal=False)
        self.freq_ffn = GruFeedForward(channels, 2 * (gru_hidden // 2), True)
        self.time_attn = BranchAttention(channels, heads, causal=True)
        self.time_ffn = GruFeedForward(channels, gru_hidden, False)

    def forward(self, x):
        # x: (B, C, T, D)
        b, c, t, d = x.shape
        # frequency branch: sequence along D, one instance per (b, t)
        f = x.permute(0, 2, 3, 1).reshape(b * t, d, c)
        f = self.freq_ffn(self.freq_attn(f))
        x = f.reshape(b, t, d, c).permute(0, 3, 1, 2)
        # temporal branch: sequence along T, one instance per (b, d)
        g = x.permute(0, 3, 2, 1).reshape(b * d, t, c)
        g = self.time_ffn(self.time_attn(g))
        return g.reshape(b, d, t, c).permute(0, 3, 2, 1)


class Model(nn.Module):
    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.conv_channels
        self.enc_conv1 = nn.Conv2d(cfg.in_channels, c, (1, 3), (1, 2), (0, 1))
        self.enc_conv2 = nn.Conv2d(c, c, (1, 3), (1, 2), (0, 1))
        self.enc_act1 = nn.PReLU(c)
        self.enc_act2 = nn.PReLU(c)
        self.enc_dilated = DilatedBlock(c, cfg.dilations)
        self.ft_blocks = nn.ModuleList(
            FTBlock(c, cfg.ft_hidden, cfg.n_heads) for _ in range(cfg.n_ft_blocks)
        )
        self.dec_dilated = DilatedBlock(c, cfg.dilations)
        self.dec_deconv1 = nn.ConvTranspose2d(c, c, (1, 3), (1, 2), (0, 1))
        self.dec_act1 = nn.PReLU(c)
        self.dec_deconv2 = nn.ConvTranspose2d(c, 2, (1, 3), (1, 2), (0, 1))
        # keep the initial mask close to identity (see forward)
        with torch.no_grad():
            self.dec_deconv2.weight.mul_(1e-2)
            self.dec_deconv2.bias.zero_()

    def forward(self, x: torch.Tensor):
        """x: real input planes (B, in_channels, T, bins).

        Returns (mask (B, T, bins) complex, TapBundle).
        """
        if x.shape[2] == 0:
            raise ValueError("input has zero frames")
        taps = TapBundle()
        e1 = self.enc_act1(self.enc_conv1(x))
        taps.encoder_taps.append(FeatureMap(e1, "enc_conv1", "encoder"))
        e2 = self.enc_act2(self.enc_conv2(e1))
        taps.encoder_taps.append(FeatureMap(e2, "enc_conv2", "encoder"))
        e3 = self.enc_dilated(e2)
        taps.encoder_taps.append(FeatureMap(e3, "enc_dilated", "encoder"))
        h = e3
        for i, block in enumerate(self.ft_blocks):
            h = block(h)
            taps.ft_taps.append(FeatureMap(h, f"ft_block{i + 1}", "ft"))
        d1 = self.dec_dilated(h + e3)
        taps.decoder_taps.append(FeatureMap(d1, "dec_dilated", "decoder"))
        d2 = self.dec_act1(self.dec_deconv1(d1) + e1)
        taps.decoder_taps.append(FeatureMap(d2, "dec_deconv1", "decoder"))
        out = self.dec_deconv2(d2)
        taps.decoder_taps.append(FeatureMap(out, "dec_deconv2", "decoder"))
        # residual mask: at initialization the output is near zero, so the
        # mask starts near identity and the model learns a correction
        mask = torch.complex(1.0 + out[:, 0], out[:, 1])
        return mask, taps


def build_model(cfg: BackboneConfig) -> Model:
    return Model(cfg)


def count_params(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def spec_batch_to_input(specs: torch.Tensor) -> torch.Tensor:
    """Complex (B, channels, T, bins) -> real planes (B, 2*channels, T, bins)."""
    return torch.cat([specs.real, specs.imag], dim=1)


def forward(model: Model, noisy: torch.Tensor):
    """Run the model on a complex spectrogram batch (B, channels, T, bins)."""
    return model(spec_batch_to_input(noisy))


def enhance(model: Model, wave, stft_cfg: StftConfig) -> torch.Tensor:
    """stft -> mask -> apply_crm -> istft; preserves input length."""
    spec = stft(wave, stft_cfg)
    data = spec.data.to(torch.complex64)
    mask, _ = forward(model, data.unsqueeze(0))
    est = apply_crm(
        ComplexSpectrogram(data[:1], stft_cfg), mask[0].to(data.dtype)
    )
    n = torch.as_tensor(wave).shape[-1]
    out = istft(est, length=int(n))
    return out[0]
