"""Static matplotlib figures for run logs and ablation reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def plot_training_curves(rows: list[dict], out_path) -> None:
    """Two panels per run log: backbone loss and validation SI-SNR per epoch."""
    if not rows:
        raise ValueError("run log has no epochs")
    epochs = [r["epoch"] for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax1.plot(epochs, [r["val_backbone_loss"] for r in rows], "o-", label="val")
    ax1.plot(epochs, [r["train_loss"] for r in rows], "s--", label="train")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("backbone loss")
    ax1.legend()
    ax2.plot(epochs, [r["val_si_snr"] for r in rows], "o-", color="tab:green")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("val SI-SNR (dB)")
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)


def plot_ablation(rows: list[dict], out_path) -> None:
    """Bar chart of validation SI-SNR per strategy."""
    if not rows:
        raise ValueError("ablation report has no rows")
    labels = [r["strategy"] for r in rows]
    values = [float(r["si_snr_db"]) for r in rows]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(labels, values, color="tab:blue")
    ax.set_ylabel("val SI-SNR (dB)")
    ax.set_xlabel("strategy")
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
