"""Teacher pretraining, frozen-teacher student distillation, validation.

Runs are deterministic given the config seed and a fixed thread count; batch
streams are pure functions of (manifest, epoch seed), so every run can be
reproduced from its config echo.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from . import checkpoint as ckpt
from .backbone import BackboneConfig, Model, build_model, enhance
from .dataset import MixManifest, load_batch, num_batches, render_entry
from .distill import (
    DistillState,
    StrategyId,
    batch_to_specs,
    enhance_batch,
    total_student_loss,
)
from .dsp import MrstftConfig, StftConfig, mrstft_loss, si_snr

RUNLOG_VERSION = 1


@dataclass
class TrainConfig:
    lr: float = 6e-4
    batch_size: int = 8
    epochs: int = 20
    chunk_s: float = 2.5
    strategy: StrategyId | None = None  # None = plain backbone loss, no KD
    seed: int = 0
    loss_weights: tuple = (1.0, 1.0, 1.0)
    clip_norm: float | None = None
    channels: int = 1

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    def to_dict(self) -> dict:
        return {
            "lr": self.lr,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "chunk_s": self.chunk_s,
            "strategy": self.strategy.value if self.strategy else "none",
            "seed": self.seed,
            "loss_weights": ",".join(str(w) for w in self.loss_weights),
            "clip_norm": self.clip_norm if self.clip_norm is not None else "none",
            "channels": self.channels,
        }


@dataclass
class RunLog:
    path: object = None
    config: dict = field(default_factory=dict)
    rows: list[dict] = field(default_factory=list)

    def append(self, row: dict) -> None:
        if self.rows and row["epoch"] <= self.rows[-1]["epoch"]:
            raise ValueError("epoch indices must be monotone")
        self.rows.append(row)
        if self.path is not None:
            mode = "a" if len(self.rows) > 1 else "w"
            with open(self.path, mode) as fh:
                if mode == "w":
                    items = {"format_version": RUNLOG_VERSION, **self.config}
                    fh.write(
                        "# " + " ".join(f"{k}={v}" for k, v in items.items()) + "\n"
                    )
                fh.write(" ".join(f"{k}={v}" for k, v in row.items()) + "\n")


def read_runlog(path) -> list[dict]:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            row = {}
            for item in line.split():
                key, _, value = item.partition("=")
                row[key] = float(value) if key != "epoch" else int(value)
            rows.append(row)
    return rows


def _seed_all(seed: int) -> None:
    torch.manual_seed(seed)
    np.random.seed(seed % 2**32)


def teacher_param_hash(model: torch.nn.Module) -> str:
    h = hashlib.sha256()
    for name, p in sorted(model.state_dict().items()):
        h.update(name.encode())
        h.update(p.detach().cpu().numpy().astype(np.float32).tobytes())
    return h.hexdigest()


def validate(
    model: Model,
    manifest: MixManifest,
    stft_cfg: StftConfig | None = None,
    mrstft_cfg: MrstftConfig | None = None,
) -> dict:
    """Deterministic metrics record: backbone loss + SI-SNR over the manifest."""
    stft_cfg = stft_cfg or StftConfig()
    model.eval()
    channels = model.cfg.in_channels // 2
    losses, snrs = [], []
    with torch.no_grad():
        for entry in manifest.entries:
            noisy, clean, noise = render_entry(entry)
            if channels > 1:
                from .dataset import _multichannel, _rng

                ch_rng = _rng((entry.seed, channels))
                noisy = _multichannel(clean, channels, ch_rng, False) + _multichannel(
                    noise, channels, ch_rng, True
                )
            else:
                noisy = noisy[None, :]
            est = enhance(model, noisy, stft_cfg).numpy()
            losses.append(
                float(mrstft_loss(torch.as_tensor(est), torch.as_tensor(clean),
                                  mrstft_cfg))
            )
            snrs.append(si_snr(est, clean))
    return {
        "backbone_loss": float(np.mean(losses)),
        "si_snr_mean": float(np.mean(snrs)),
        "si_snr_per_item": snrs,
    }


def noisy_baseline_si_snr(manifest: MixManifest) -> float:
    """Mean SI-SNR of the unprocessed noisy signal against clean."""
    vals = []
    for entry in manifest.entries:
        noisy, clean, _ = render_entry(entry)
        vals.append(si_snr(noisy, clean))
    return float(np.mean(vals))


def _save_model(path, model_cfg: BackboneConfig, model, train_cfg, extra=None):
    config = {f"cfg.{k}": v for k, v in model_cfg.to_dict().items()}
    config.update({f"train.{k}": v for k, v in train_cfg.to_dict().items()})
    arrays = ckpt.state_dict_to_arrays(model)
    if extra is not None:
        arrays.update(ckpt.state_dict_to_arrays(extra, prefix="distill/"))
    ckpt.save_checkpoint(path, config, arrays)


def load_model(path) -> tuple[Model, dict]:
    config, arrays = ckpt.load_checkpoint(path)
    model_cfg = BackboneConfig.from_dict(
        {k[len("cfg."):]: v for k, v in config.items() if k.startswith("cfg.")}
    )
    model = build_model(model_cfg)
    ckpt.load_arrays_into(
        model, {k: v for k, v in arrays.items() if not k.startswith("distill/")}
    )
    model.eval()
    return model, config


def train_teacher(
    cfg: TrainConfig,
    model_cfg: BackboneConfig,
    train_manifest: MixManifest,
    val_manifest: MixManifest,
    ckpt_path,
    runlog_path=None,
    stft_cfg: StftConfig | None = None,
    mrstft_cfg: MrstftConfig | None = None,
) -> dict:
    """Pretrain a model on the MRSTFT backbone loss; keeps the best-val epoch."""
    stft_cfg = stft_cfg or StftConfig()
    _seed_all(cfg.seed)
    model = build_model(model_cfg)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    log = RunLog(
        runlog_path,
        {**{f"train.{k}": v for k, v in cfg.to_dict().items()},
         "manifest_hash": train_manifest.content_hash()},
    )
    best = None
    batches = num_batches(train_manifest, cfg.batch_size)
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        t0 = time.monotonic()
        epoch_loss = 0.0
        for index in range(batches):
            batch = load_batch(
                train_manifest, cfg.batch_size, cfg.chunk_s,
                epoch_seed=cfg.seed * 100003 + epoch, index=index,
                channels=cfg.channels,
            )
            noisy = torch.as_tensor(batch.noisy)
            clean = torch.as_tensor(batch.clean)
            specs = batch_to_specs(noisy, stft_cfg)
            est, _ = enhance_batch(model, specs, stft_cfg, noisy.shape[-1])
            loss = mrstft_loss(est, clean[:, 0], mrstft_cfg)
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"training diverged: non-finite loss at epoch {epoch}, "
                    f"step {index}"
                )
            opt.zero_grad()
            loss.backward()
            if cfg.clip_norm is not None:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.clip_norm)
            opt.step()
            epoch_loss += float(loss.detach())
        metrics = validate(model, val_manifest, stft_cfg, mrstft_cfg)
        row = {
            "epoch": epoch,
            "train_loss": round(epoch_loss / batches, 6),
            "val_backbone_loss": round(metrics["backbone_loss"], 6),
            "val_si_snr": round(metrics["si_snr_mean"], 4),
            "wall_s": round(time.monotonic() - t0, 2),
        }
        log.append(row)
        if best is None or metrics["backbone_loss"] < best["backbone_loss"]:
            best = metrics | {"epoch": epoch}
            _save_model(ckpt_path, model_cfg, model, cfg)
    return {"best": best, "log": log}


def train_student(
    cfg: TrainConfig,
    model_cfg: BackboneConfig,
    teacher_ckpt,
    train_manifest: MixManifest,
    val_manifest: MixManifest,
    ckpt_path,
    runlog_path=None,
    stft_cfg: StftConfig | None = None,
    mrstft_cfg: MrstftConfig | None = None,
) -> dict:
    """Distill a student against a frozen teacher (or train plain, no KD)."""
    stft_cfg = stft_cfg or StftConfig()
    _seed_all(cfg.seed)
    student = build_model(model_cfg)

    use_kd = cfg.strategy is not None and (
        cfg.loss_weights[1] != 0 or cfg.loss_weights[2] != 0
    )
    teacher = None
    state = None
    if use_kd:
        if teacher_ckpt is None:
            raise ValueError("strategy requires a teacher checkpoint")
        teacher, _ = load_model(teacher_ckpt)
        teacher.requires_grad_(False)
        teacher.eval()
        # probe forward to size the distillation parameters
        probe = load_batch(
            train_manifest, cfg.batch_size, cfg.chunk_s,
            epoch_seed=cfg.seed, index=0, channels=cfg.channels,
        )
        specs = batch_to_specs(torch.as_tensor(probe.noisy), stft_cfg)
        with torch.no_grad():
            _, s_taps = student(torch.cat([specs.real, specs.imag], dim=1))
            _, t_taps = teacher(torch.cat([specs.real, specs.imag], dim=1))
        state = DistillState(
            s_taps, t_taps,
            c_r_student=model_cfg.conv_channels,
            c_r_teacher=teacher.cfg.conv_channels,
        )
        params = list(student.parameters()) + list(state.parameters())
    else:
        params = list(student.parameters())

    opt = torch.optim.Adam(params, lr=cfg.lr)
    log = RunLog(
        runlog_path,
        {**{f"train.{k}": v for k, v in cfg.to_dict().items()},
         "manifest_hash": train_manifest.content_hash()},
    )
    teacher_hash_before = teacher_param_hash(teacher) if teacher is not None else None
    best = None
    batches = num_batches(train_manifest, cfg.batch_size)
    for epoch in range(1, cfg.epochs + 1):
        student.train()
        t0 = time.monotonic()
        epoch_loss = 0.0
        for index in range(batches):
            batch = load_batch(
                train_manifest, cfg.batch_size, cfg.chunk_s,
                epoch_seed=cfg.seed * 100003 + epoch, index=index,
                channels=cfg.channels,
            )
            if use_kd:
                loss, parts = total_student_loss(
                    batch, student, teacher, state, cfg.strategy,
                    cfg.loss_weights, stft_cfg, mrstft_cfg,
                )
            else:
                noisy = torch.as_tensor(batch.noisy)
                clean = torch.as_tensor(batch.clean)
                specs = batch_to_specs(noisy, stft_cfg)
                est, _ = enhance_batch(student, specs, stft_cfg, noisy.shape[-1])
                loss = cfg.loss_weights[0] * mrstft_loss(est, clean[:, 0], mrstft_cfg)
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"training diverged: non-finite loss at epoch {epoch}, "
                    f"step {index}"
                )
            opt.zero_grad()
            loss.backward()
            if cfg.clip_norm is not None:
                torch.nn.utils.clip_grad_norm_(params, cfg.clip_norm)
            opt.step()
            epoch_loss += float(loss.detach())
        metrics = validate(student, val_manifest, stft_cfg, mrstft_cfg)
        row = {
            "epoch": epoch,
            "train_loss": round(epoch_loss / batches, 6),
            "val_backbone_loss": round(metrics["backbone_loss"], 6),
            "val_si_snr": round(metrics["si_snr_mean"], 4),
            "wall_s": round(time.monotonic() - t0, 2),
        }
        log.append(row)
        if best is None or metrics["backbone_loss"] < best["backbone_loss"]:
            best = metrics | {"epoch": epoch}
            _save_model(ckpt_path, model_cfg, student, cfg, extra=state)
    if teacher is not None:
        assert teacher_param_hash(teacher) == teacher_hash_before, (
            "frozen teacher parameters changed during student training"
        )
    return {"best": best, "log": log, "teacher_hash": teacher_hash_before}
