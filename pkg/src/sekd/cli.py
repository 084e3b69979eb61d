"""Command-line surface: dataset building, training, enhancement, ablation.

Every subcommand echoes its effective configuration so a run can be
reproduced from the printed lines. Exit codes: 0 success, 1 runtime error,
2 usage error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
import torch

from .backbone import BackboneConfig, build_model, count_params, enhance
from .dataset import (
    NOISE_KINDS,
    build_manifest,
    build_manifest_from_dirs,
    read_manifest,
    write_manifest,
)
from .distill import StrategyId
from .dsp import StftConfig, read_wav, write_wav
from .plotting import plot_ablation, plot_training_curves
from .trainer import (
    TrainConfig,
    load_model,
    read_runlog,
    train_student,
    train_teacher,
    validate,
)

STRATEGY_TOKENS = ("base", "m1", "m2", "m3", "m4")


def _echo_config(args: argparse.Namespace) -> None:
    skip = {"func"}
    items = sorted(
        (k, v) for k, v in vars(args).items() if k not in skip and v is not None
    )
    print("config: " + " ".join(f"{k}={v}" for k, v in items))


def _train_cfg(args, strategy=None) -> TrainConfig:
    return TrainConfig(
        lr=args.lr,
        batch_size=args.batch_size,
        epochs=args.epochs,
        chunk_s=args.chunk_s,
        strategy=strategy,
        seed=args.seed,
        channels=args.channels,
    )


def cmd_mix(args) -> int:
    if args.clean_dir and args.noise_dir:
        manifest = build_manifest_from_dirs(
            args.clean_dir, args.noise_dir, args.seed, args.duration,
            (args.snr_min, args.snr_max),
        )
    else:
        manifest = build_manifest(
            args.n, args.seed, args.duration, (args.snr_min, args.snr_max),
            noise_kinds=tuple(args.noise_kinds.split(",")),
        )
    write_manifest(manifest, args.out)
    print(f"wrote {len(manifest.entries)} entries to {args.out}")
    return 0


def cmd_train_teacher(args) -> int:
    cfg = _train_cfg(args)
    model_cfg = BackboneConfig.teacher(in_channels=2 * args.channels)
    result = train_teacher(
        cfg, model_cfg, read_manifest(args.train_manifest),
        read_manifest(args.val_manifest), args.out, args.runlog,
    )
    best = result["best"]
    print(
        f"best epoch {best['epoch']}: val_backbone_loss={best['backbone_loss']:.6f} "
        f"val_si_snr={best['si_snr_mean']:.3f} dB"
    )
    return 0


def cmd_train_student(args) -> int:
    strategy = None if args.strategy == "none" else StrategyId.parse(args.strategy)
    cfg = _train_cfg(args, strategy)
    model_cfg = BackboneConfig.student(in_channels=2 * args.channels)
    result = train_student(
        cfg, model_cfg, args.teacher, read_manifest(args.train_manifest),
        read_manifest(args.val_manifest), args.out, args.runlog,
    )
    best = result["best"]
    print(
        f"best epoch {best['epoch']}: val_backbone_loss={best['backbone_loss']:.6f} "
        f"val_si_snr={best['si_snr_mean']:.3f} dB"
    )
    return 0


def cmd_enhance(args) -> int:
    model, _ = load_model(args.ckpt)
    wave = read_wav(args.infile)
    with torch.no_grad():
        est = enhance(model, torch.as_tensor(wave), StftConfig()).numpy()
    write_wav(args.out, est)
    print(f"wrote {args.out} ({est.shape[-1]} samples)")
    return 0


def cmd_validate(args) -> int:
    model, _ = load_model(args.ckpt)
    metrics = validate(model, read_manifest(args.manifest))
    print("backbone_loss\tsi_snr_db")
    print(f"{metrics['backbone_loss']:.6f}\t{metrics['si_snr_mean']:.4f}")
    return 0


def ablation_compare(strategies, args) -> list[dict]:
    """Train each strategy under identical seed/config; report metrics rows."""
    if len(strategies) < 2:
        raise ValueError("compare needs at least 2 strategies")
    train_man = read_manifest(args.train_manifest)
    val_man = read_manifest(args.val_manifest)
    manifest_hash = train_man.content_hash()
    rows = []
    teacher_model, _ = load_model(args.teacher)
    teacher_params = count_params(teacher_model)
    baseline_snr = None
    for token in strategies:
        strategy = None if token == "none" else StrategyId.parse(token)
        cfg = _train_cfg(args, strategy)
        out = Path(args.workdir) / f"student_{token}.ckpt"
        result = train_student(
            cfg, BackboneConfig.student(in_channels=2 * args.channels),
            args.teacher, train_man, val_man, out,
        )
        best = result["best"]
        model, _ = load_model(out)
        rows.append(
            {
                "strategy": token,
                "params_M": round(count_params(model) / 1e6, 4),
                "val_backbone_loss": round(best["backbone_loss"], 6),
                "si_snr_db": round(best["si_snr_mean"], 4),
                "manifest_hash": manifest_hash,
                "seed": args.seed,
            }
        )
        if token == "none":
            baseline_snr = best["si_snr_mean"]
    for row in rows:
        row["delta_vs_student"] = (
            round(row["si_snr_db"] - baseline_snr, 4) if baseline_snr is not None
            else "n/a"
        )
    rows.append(
        {
            "strategy": "teacher",
            "params_M": round(teacher_params / 1e6, 4),
            "val_backbone_loss": "",
            "si_snr_db": "",
            "manifest_hash": manifest_hash,
            "seed": args.seed,
            "delta_vs_student": "n/a",
        }
    )
    return rows


def cmd_compare(args) -> int:
    strategies = [s.strip() for s in args.strategies.split(",")]
    Path(args.workdir).mkdir(parents=True, exist_ok=True)
    rows = ablation_compare(strategies, args)
    header = [
        "strategy", "params_M", "val_backbone_loss", "si_snr_db",
        "delta_vs_student", "manifest_hash", "seed",
    ]
    with open(args.out, "w") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(str(row[k]) for k in header) + "\n")
    fig_path = str(Path(args.out).with_suffix(".png"))
    plot_ablation([r for r in rows if r["si_snr_db"] != ""], fig_path)
    print(f"wrote {args.out} and {fig_path}")
    return 0


def cmd_plot(args) -> int:
    plot_training_curves(read_runlog(args.runlog), args.out)
    print(f"wrote {args.out}")
    return 0


def _add_train_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--train-manifest", required=True)
    p.add_argument("--val-manifest", required=True)
    p.add_argument("--lr", type=float, default=6e-4)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--chunk-s", type=float, default=2.5)
    p.add_argument("--channels", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sekd",
        description="Knowledge-distillation toolkit for causal speech enhancement",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mix", help="build a mixing manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--duration", type=float, default=2.5)
    p.add_argument("--snr-min", type=float, default=-5.0)
    p.add_argument("--snr-max", type=float, default=15.0)
    p.add_argument("--noise-kinds", default=",".join(NOISE_KINDS))
    p.add_argument("--clean-dir")
    p.add_argument("--noise-dir")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_mix)

    p = sub.add_parser("train-teacher", help="pretrain the teacher model")
    _add_train_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--runlog")
    p.set_defaults(func=cmd_train_teacher)

    p = sub.add_parser("train-student", help="train/distill the student model")
    _add_train_args(p)
    p.add_argument("--teacher")
    p.add_argument(
        "--strategy", choices=("none",) + STRATEGY_TOKENS, default="m4"
    )
    p.add_argument("--out", required=True)
    p.add_argument("--runlog")
    p.set_defaults(func=cmd_train_student)

    p = sub.add_parser("enhance", help="denoise a WAV file with a checkpoint")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("validate", help="evaluate a checkpoint on a manifest")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("compare", help="train several strategies and tabulate")
    _add_train_args(p)
    p.add_argument("--teacher", required=True)
    p.add_argument("--strategies", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workdir", default="compare_runs")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("plot", help="render training curves from a run log")
    p.add_argument("--runlog", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    return parser


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 2
    _echo_config(args)
    try:
        return args.func(args)
    except Exception as exc:  # runtime failure -> exit 1
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_main())
