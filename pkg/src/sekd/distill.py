"""Distillation mathematics: similarity maps, time-frequency calibration,
probabilistic distance, recursive residual fusion and the strategy ladder.

Two similarity flows are used throughout: the time flow compares frames
within a batch item (maps shaped (B, T, T)) and the frequency flow compares
batch items within a frame (maps shaped (T, B, B)). Teacher features are
always detached; only the student and the distillation parameters receive
gradients.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import torch
import torch.nn as nn

from .backbone import FeatureMap, TapBundle, forward
from .dsp import MrstftConfig, StftConfig, istft, mrstft_loss, stft, ComplexSpectrogram

D_PROP_EPS = 1e-7


class StrategyId(enum.Enum):
    BASE_MSE = "base"
    M1 = "m1"
    M2 = "m2"
    M3 = "m3"
    M4 = "m4"

    @classmethod
    def parse(cls, token: str) -> "StrategyId":
        for s in cls:
            if s.value == token.lower():
                return s
        raise ValueError(f"unknown strategy {token!r}")


@dataclass
class SimilarityMap:
    data: torch.Tensor  # (B, T, T) or (T, B, B)
    flow: str  # "time" | "freq"


def _cosine_self_similarity(m: torch.Tensor) -> torch.Tensor:
    """Row-wise cosine self-similarity of (I, N, V), mapped to [0, 1].

    Zero rows are treated as having cosine 0 with everything (including
    themselves), which maps to 0.5.
    """
    norms = torch.linalg.norm(m, dim=-1, keepdim=True)
    unit = m / norms.clamp_min(1e-12)
    unit = torch.where(norms > 0, unit, torch.zeros_like(unit))
    cos = unit @ unit.transpose(-2, -1)
    return 0.5 * (cos + 1.0)


def time_similarity_map(f: FeatureMap) -> SimilarityMap:
    """Frame-to-frame similarity per batch item: (B, T, T)."""
    x = f.data
    if not torch.isfinite(x).all():
        raise ValueError("feature map contains non-finite values")
    b, c, t, d = x.shape
    m = x.permute(0, 2, 1, 3).reshape(b, t, c * d)
    return SimilarityMap(_cosine_self_similarity(m), "time")


def freq_similarity_map(f: FeatureMap) -> SimilarityMap:
    """Item-to-item similarity per frame: (T, B, B)."""
    x = f.data
    if not torch.isfinite(x).all():
        raise ValueError("feature map contains non-finite values")
    b, c, t, d = x.shape
    m = x.permute(2, 0, 1, 3).reshape(t, b, c * d)
    return SimilarityMap(_cosine_self_similarity(m), "freq")


class SimEmbed(nn.Module):
    """Dense -> ReLU -> dense, then row l2 normalization; shape preserving."""

    def __init__(self, dim: int, factor: int = 4):
        super().__init__()
        if factor < 1:
            raise ValueError("factor must be >= 1")
        self.dim = dim
        self.fc1 = nn.Linear(dim, dim * factor)
        self.fc2 = nn.Linear(dim * factor, dim)

    def forward(self, p: torch.Tensor) -> torch.Tensor:
        h = self.fc2(torch.relu(self.fc1(p)))
        return nn.functional.normalize(h, dim=-1, eps=1e-12)


class EmbeddingParams(nn.Module):
    """Query and key embedding maps for one flow."""

    def __init__(self, dim: int, flow: str, factor: int = 4):
        super().__init__()
        self.flow = flow
        self.q = SimEmbed(dim, factor)
        self.k = SimEmbed(dim, factor)


def embed(p: SimilarityMap, params: EmbeddingParams, which: str) -> torch.Tensor:
    if p.flow != params.flow:
        raise ValueError(f"flow mismatch: map is {p.flow}, params are {params.flow}")
    net = params.q if which == "Q" else params.k
    return net(p.data)


def calibration_weights(
    qs: list[torch.Tensor], ks: list[torch.Tensor]
) -> torch.Tensor:
    """Softmax-over-teacher-layers weights, per instance.

    qs[l_s] and ks[l_t] are embedded maps (I, N, N); returns alpha with shape
    (I, L_s, L_t) where each (instance, l_s) row sums to one.
    """
    if not ks:
        raise ValueError("teacher embedding list is empty")
    i_dim, n = qs[0].shape[0], qs[0].shape[-1]
    q = torch.stack([x.reshape(i_dim, -1) for x in qs], dim=1)  # (I, Ls, N*N)
    k = torch.stack([x.reshape(i_dim, -1) for x in ks], dim=1)  # (I, Lt, N*N)
    scores = torch.einsum("isv,itv->ist", q, k) / n
    return torch.softmax(scores, dim=-1)


def _clamped(p: torch.Tensor) -> torch.Tensor:
    return p.clamp(D_PROP_EPS, 1.0)


def d_prop(p: SimilarityMap | torch.Tensor, q: SimilarityMap | torch.Tensor):
    """Probabilistic distance: mean of (p-q)(log p - log q); symmetric, >= 0."""
    pd = p.data if isinstance(p, SimilarityMap) else p
    qd = q.data if isinstance(q, SimilarityMap) else q
    if pd.shape != qd.shape:
        raise ValueError("similarity maps must share shape")
    pc, qc = _clamped(pd), _clamped(qd)
    return torch.mean((pc - qc) * (torch.log(pc) - torch.log(qc)))


def d_prop_per_instance(pd: torch.Tensor, qd: torch.Tensor) -> torch.Tensor:
    """d_prop reduced over all but the leading (instance) dim: (I,)."""
    if pd.shape != qd.shape:
        raise ValueError("similarity maps must share shape")
    pc, qc = _clamped(pd), _clamped(qd)
    val = (pc - qc) * (torch.log(pc) - torch.log(qc))
    return val.reshape(val.shape[0], -1).mean(dim=-1)


def tfckd_pair_loss(fs: FeatureMap, ft: FeatureMap, alpha_t, alpha_f):
    """Calibrated time+frequency probabilistic distance between two taps.

    alpha_t / alpha_f are scalars or per-instance weight vectors; per-instance
    weighted distances are averaged over instances.
    """
    if fs.data.shape[0] != ft.data.shape[0] or fs.data.shape[2] != ft.data.shape[2]:
        raise ValueError("feature maps must share batch size and frame count")
    dt = d_prop_per_instance(
        time_similarity_map(fs).data, time_similarity_map(ft).data
    )
    df = d_prop_per_instance(
        freq_similarity_map(fs).data, freq_similarity_map(ft).data
    )
    alpha_t = torch.as_tensor(alpha_t, dtype=dt.dtype)
    alpha_f = torch.as_tensor(alpha_f, dtype=df.dtype)
    return (alpha_t * dt).mean() + (alpha_f * df).mean()


class ResidualFusion(nn.Module):
    """Gated recursive fusion over one correlated set (one side).

    Each step aligns the inherited recursive feature with the current layer
    (width upsampling + channel projections), gates the two branches with a
    2-channel sigmoid attention map and emits a fused output in the layer's
    own shape.
    """

    def __init__(self, layer_shapes: list[tuple[int, int]], c_r: int):
        super().__init__()
        self.c_r = c_r
        self.conv_in = nn.ModuleList(
            nn.Conv2d(c, c_r, 3, padding=1) for c, _ in layer_shapes
        )
        self.gate = nn.ModuleList(
            nn.Conv2d(2 * c_r, 2, 1) for _ in layer_shapes
        )
        self.conv_out = nn.ModuleList(
            nn.Conv2d(c_r, c, 3, padding=1) for c, _ in layer_shapes
        )

    def step(self, j: int, f_j: torch.Tensor, r_prev: torch.Tensor | None):
        """One fusion round; returns (t_j, r_j). r_prev has c_r channels."""
        f_tilde = self.conv_in[j](f_j)
        if r_prev is None:
            r_j = f_tilde
        else:
            if r_prev.shape[1] != self.c_r:
                raise ValueError(
                    f"recursive feature has {r_prev.shape[1]} channels, "
                    f"expected {self.c_r}"
                )
            r_tilde = nn.functional.interpolate(
                r_prev, size=f_tilde.shape[-2:], mode="nearest"
            )
            gates = torch.sigmoid(
                self.gate[j](torch.cat([f_tilde, r_tilde], dim=1))
            )
            a_f, a_r = gates[:, 0:1], gates[:, 1:2]
            r_j = a_r * r_tilde + a_f * f_tilde
        return self.conv_out[j](r_j), r_j

    def forward(self, feats: list[torch.Tensor], reverse: bool = False):
        """Chain fusion steps over the set; returns the last fused output."""
        if not feats:
            raise ValueError("empty correlated set")
        order = range(len(feats) - 1, -1, -1) if reverse else range(len(feats))
        r = None
        t = None
        for j in order:
            t, r = self.step(j, feats[j], r)
        return t


def residual_fuse_step(f_j: FeatureMap, r_prev, params: ResidualFusion, j: int = 0):
    """Single fusion round on tap j of a set; (t_j, r_j)."""
    return params.step(j, f_j.data, r_prev)


def set_representative(
    feats: list[FeatureMap], direction: str, params: ResidualFusion
) -> FeatureMap:
    """Representative fused feature of a correlated set (last chain output)."""
    if not feats:
        raise ValueError("empty correlated set")
    out = params([f.data for f in feats], reverse=direction == "reverse")
    ref = feats[-1] if direction == "forward" else feats[0]
    return FeatureMap(out, f"fused_{ref.set_id}", ref.set_id)


SET_DIRECTIONS = {"encoder": "forward", "ft": "forward", "decoder": "reverse"}


class MsePairTransform(nn.Module):
    """Student-side 1x1 channel projection + width interpolation (layer-wise MSE)."""

    def __init__(self, c_s: int, c_t: int):
        super().__init__()
        self.proj = nn.Conv2d(c_s, c_t, 1)

    def forward(self, fs: torch.Tensor, shape_t):
        x = self.proj(fs)
        if x.shape[-1] != shape_t[-1]:
            x = nn.functional.interpolate(x, size=shape_t[-2:], mode="nearest")
        return x


def _layerwise_pairs(
    student: list[FeatureMap], teacher: list[FeatureMap], set_id: str
) -> list[tuple[int, int]]:
    """Positional pairing; a singleton student set maps onto the teacher's
    final tap. Any other count mismatch is an error."""
    m, n = len(student), len(teacher)
    if m == n:
        return [(i, i) for i in range(m)]
    if m == 1:
        return [(0, n - 1)]
    raise ValueError(
        f"layer-wise strategy cannot align correlated set {set_id!r}: "
        f"student has {m} taps, teacher has {n}"
    )


class DistillState(nn.Module):
    """Trainable distillation parameters plus run-shape bookkeeping.

    Holds, per correlated set: shared Q/K embedding maps for both flows,
    residual-fusion parameters for both sides, and the layer-wise MSE
    projections; plus a separate embedding pair for inter-set matching.
    The frequency-flow embedding width is tied to the training batch size,
    so the batch size is fixed per distillation run.
    """

    def __init__(
        self,
        student_taps: TapBundle,
        teacher_taps: TapBundle,
        factor: int = 4,
        c_r_student: int | None = None,
        c_r_teacher: int | None = None,
    ):
        super().__init__()
        s_sets, t_sets = student_taps.sets(), teacher_taps.sets()
        probe = student_taps.encoder_taps[0].data
        self.batch_size = probe.shape[0]
        self.frames = probe.shape[2]
        self.factor = factor
        c_r_s = c_r_student or student_taps.encoder_taps[0].data.shape[1]
        c_r_t = c_r_teacher or teacher_taps.encoder_taps[0].data.shape[1]

        self.intra_time = nn.ModuleDict()
        self.intra_freq = nn.ModuleDict()
        self.fusion_s = nn.ModuleDict()
        self.fusion_t = nn.ModuleDict()
        self.mse_proj = nn.ModuleDict()
        for set_id in s_sets:
            self.intra_time[set_id] = EmbeddingParams(self.frames, "time", factor)
            self.intra_freq[set_id] = EmbeddingParams(self.batch_size, "freq", factor)
            self.fusion_s[set_id] = ResidualFusion(
                [(f.data.shape[1], f.data.shape[3]) for f in s_sets[set_id]], c_r_s
            )
            self.fusion_t[set_id] = ResidualFusion(
                [(f.data.shape[1], f.data.shape[3]) for f in t_sets[set_id]], c_r_t
            )
            try:
                pairs = _layerwise_pairs(s_sets[set_id], t_sets[set_id], set_id)
            except ValueError:
                pairs = []
            self.mse_proj[set_id] = nn.ModuleList(
                MsePairTransform(
                    s_sets[set_id][i].data.shape[1], t_sets[set_id][j].data.shape[1]
                )
                for i, j in pairs
            )
        self.inter_time = EmbeddingParams(self.frames, "time", factor)
        self.inter_freq = EmbeddingParams(self.batch_size, "freq", factor)

    def check_batch(self, taps: TapBundle):
        probe = taps.encoder_taps[0].data
        if probe.shape[0] != self.batch_size or probe.shape[2] != self.frames:
            raise ValueError(
                f"distillation state was built for batch={self.batch_size}, "
                f"frames={self.frames}; got batch={probe.shape[0]}, "
                f"frames={probe.shape[2]}"
            )


@dataclass
class DistillResult:
    l_intra: torch.Tensor
    l_inter: torch.Tensor
    intra_pairs: int
    inter_pairs: int


def _detached(taps: TapBundle) -> TapBundle:
    out = TapBundle()
    for set_id, feats in taps.sets().items():
        target = getattr(out, f"{set_id}_taps" if set_id != "ft" else "ft_taps")
        for f in feats:
            target.append(FeatureMap(f.data.detach(), f.tap, f.set_id))
    return out


def _tfckd_set_loss(
    student: list[FeatureMap],
    teacher: list[FeatureMap],
    emb_time: EmbeddingParams,
    emb_freq: EmbeddingParams,
):
    """Calibrated all-pairs TFCKD loss over one set of features."""
    pt_s = [time_similarity_map(f) for f in student]
    pt_t = [time_similarity_map(f) for f in teacher]
    pf_s = [freq_similarity_map(f) for f in student]
    pf_t = [freq_similarity_map(f) for f in teacher]
    alpha_t = calibration_weights(
        [embed(p, emb_time, "Q") for p in pt_s],
        [embed(p, emb_time, "K") for p in pt_t],
    )
    alpha_f = calibration_weights(
        [embed(p, emb_freq, "Q") for p in pf_s],
        [embed(p, emb_freq, "K") for p in pf_t],
    )
    loss = 0.0
    for i in range(len(student)):
        for j in range(len(teacher)):
            dt = d_prop_per_instance(pt_s[i].data, pt_t[j].data)
            df = d_prop_per_instance(pf_s[i].data, pf_t[j].data)
            loss = loss + (alpha_t[:, i, j] * dt).mean() + (alpha_f[:, i, j] * df).mean()
    return loss, len(student) * len(teacher)


def intra_inter_loss(
    student_taps: TapBundle,
    teacher_taps: TapBundle,
    state: DistillState,
    strategy: StrategyId,
) -> DistillResult:
    """Strategy-dispatched intra-set and inter-set distillation losses."""
    state.check_batch(student_taps)
    teacher_taps = _detached(teacher_taps)
    s_sets, t_sets = student_taps.sets(), teacher_taps.sets()
    zero = student_taps.encoder_taps[0].data.new_zeros(())
    l_intra = zero.clone()
    l_inter = zero.clone()
    intra_pairs = 0
    inter_pairs = 0

    if strategy in (StrategyId.BASE_MSE, StrategyId.M1):
        for set_id in s_sets:
            pairs = _layerwise_pairs(s_sets[set_id], t_sets[set_id], set_id)
            for pair_idx, (i, j) in enumerate(pairs):
                fs, ft = s_sets[set_id][i], t_sets[set_id][j]
                if strategy is StrategyId.BASE_MSE:
                    proj = state.mse_proj[set_id][pair_idx]
                    l_intra = l_intra + nn.functional.mse_loss(
                        proj(fs.data, ft.data.shape), ft.data
                    )
                else:
                    l_intra = l_intra + tfckd_pair_loss(fs, ft, 1.0, 1.0)
                intra_pairs += 1
        return DistillResult(l_intra, l_inter, intra_pairs, inter_pairs)

    if strategy is StrategyId.M2:
        for set_id in s_sets:
            m, n = len(s_sets[set_id]), len(t_sets[set_id])
            w = 1.0 / (m * n)
            for fs in s_sets[set_id]:
                for ft in t_sets[set_id]:
                    l_intra = l_intra + tfckd_pair_loss(fs, ft, w, w)
                    intra_pairs += 1
        return DistillResult(l_intra, l_inter, intra_pairs, inter_pairs)

    # M3 / M4: calibrated all-pairs intra-set loss
    for set_id in s_sets:
        set_loss, n_pairs = _tfckd_set_loss(
            s_sets[set_id],
            t_sets[set_id],
            state.intra_time[set_id],
            state.intra_freq[set_id],
        )
        l_intra = l_intra + set_loss
        intra_pairs += n_pairs

    if strategy is StrategyId.M4:
        reps_s, reps_t = [], []
        for set_id in s_sets:
            direction = SET_DIRECTIONS[set_id]
            reps_s.append(
                set_representative(s_sets[set_id], direction, state.fusion_s[set_id])
            )
            reps_t.append(
                set_representative(t_sets[set_id], direction, state.fusion_t[set_id])
            )
        l_inter, inter_pairs = _tfckd_set_loss(
            reps_s, reps_t, state.inter_time, state.inter_freq
        )
    return DistillResult(l_intra, l_inter, intra_pairs, inter_pairs)


def batch_to_specs(waves: torch.Tensor, stft_cfg: StftConfig) -> torch.Tensor:
    """(B, channels, samples) real -> (B, channels, T, bins) complex."""
    b, ch, n = waves.shape
    spec = stft(waves.reshape(b * ch, n), stft_cfg)
    t, f = spec.data.shape[-2:]
    return spec.data.reshape(b, ch, t, f)


def enhance_batch(model, noisy_specs: torch.Tensor, stft_cfg: StftConfig, length: int):
    """Forward + mask + istft for a complex spectrogram batch.

    Returns (estimated waveforms (B, samples), TapBundle).
    """
    mask, taps = forward(model, noisy_specs)
    est_spec = noisy_specs[:, 0] * mask.to(noisy_specs.dtype)
    est = istft(ComplexSpectrogram(est_spec, stft_cfg), length=length)
    return est, taps


def total_student_loss(
    batch,
    student,
    teacher,
    state: DistillState,
    strategy: StrategyId,
    weights=(1.0, 1.0, 1.0),
    stft_cfg: StftConfig | None = None,
    mrstft_cfg: MrstftConfig | None = None,
):
    """Backbone MRSTFT loss plus weighted intra/inter distillation terms.

    Returns (total, parts dict); parts carries the pair-count instrumentation.
    """
    stft_cfg = stft_cfg or StftConfig()
    noisy = torch.as_tensor(batch.noisy)
    clean = torch.as_tensor(batch.clean)
    length = noisy.shape[-1]
    noisy_specs = batch_to_specs(noisy, stft_cfg)
    est, s_taps = enhance_batch(student, noisy_specs, stft_cfg, length)
    backbone = mrstft_loss(est, clean[:, 0], mrstft_cfg)
    w0, w1, w2 = weights
    if w1 == 0 and w2 == 0:
        zero = backbone.new_zeros(())
        parts = {
            "backbone": backbone,
            "intra": zero,
            "inter": zero,
            "intra_pairs": 0,
            "inter_pairs": 0,
        }
        return w0 * backbone, parts
    with torch.no_grad():
        _, t_taps = forward(teacher, noisy_specs)
    res = intra_inter_loss(s_taps, t_taps, state, strategy)
    total = w0 * backbone + w1 * res.l_intra + w2 * res.l_inter
    parts = {
        "backbone": backbone,
        "intra": res.l_intra,
        "inter": res.l_inter,
        "intra_pairs": res.intra_pairs,
        "inter_pairs": res.inter_pairs,
    }
    return total, parts
