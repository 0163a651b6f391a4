"""Command-line harness: train, eval, ablate, predict, synth, verify.

Flag precedence is built-in defaults < --config file < explicit flags.
Every command that produces artifacts echoes its effective config into
the output directory.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, apply_overrides, load_config, save_config
from .data import load_dataset
from .errors import GenerationError, TrainingDivergedError, ValidationError
from .evaluate import ABLATION_ROWS, ablate, ablation_table, evaluate
from .netpbm import write_mask
from .propagation import propagate
from .synth import SynthConfig, make_dataset
from .train import smoothed, train
from .verify import run_all


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="config file (flat key = value with sections)")
    parser.add_argument("--data", dest="data_root", help="dataset root directory")
    parser.add_argument("--seed", type=int, default=None, help="global seed")
    parser.add_argument("--steps", type=int, default=None, help="SGD updates to run")
    parser.add_argument("--lr", dest="learning_rate", type=float, default=None)
    parser.add_argument("--momentum", type=float, default=None)
    parser.add_argument("--pooling", choices=("max", "avg", "both"), default=None)
    parser.add_argument("--encoder-tap", dest="encoder_tap", type=int,
                        choices=(2, 3, 4), default=None)
    parser.add_argument("--similarity", choices=("standard", "paper-literal"),
                        default=None)
    parser.add_argument("--memory-capacity", dest="memory_capacity", type=int,
                        default=None, help="max remembered frames (0 = unlimited)")
    for flag, dest, meaning in (
            ("--no-sfm", "use_sfm", "disable the prior-gated spatial branch"),
            ("--no-msff", "use_msff", "merge branches by concat + 1x1 conv"),
            ("--no-key-scaling", "key_scaling", "drop the 1/sqrt(C/8) score scale"),
            ("--no-prior-mask-mapping", "prior_mask_mapping",
             "skip multiplying the previous mask onto the current frame")):
        parser.add_argument(flag, dest=dest, action="store_const", const=False,
                            default=None, help=meaning)
    for flag, dest, meaning in (
            ("--teacher-forcing", "teacher_forcing",
             "update state with ground-truth masks during training"),
            ("--hard-prior", "hard_prior", "binarize predictions before reuse"),
            ("--key-from-gated", "key_from_gated",
             "take the spatial attention key from the gated encode pass"),
            ("--use-current-value", "use_current_value",
             "concatenate the current frame's value to the decoder input")):
        parser.add_argument(flag, dest=dest, action="store_const", const=True,
                            default=None, help=meaning)


_CONFIG_FIELDS = ("data_root", "seed", "steps", "learning_rate", "momentum",
                  "pooling", "encoder_tap", "similarity", "memory_capacity",
                  "use_sfm", "use_msff", "key_scaling", "prior_mask_mapping",
                  "teacher_forcing", "hard_prior", "key_from_gated",
                  "use_current_value")


def _effective_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {name: getattr(args, name) for name in _CONFIG_FIELDS
                 if hasattr(args, name)}
    return apply_overrides(cfg, overrides)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train(args) -> int:
    cfg = _effective_config(args)
    if not cfg.data_root:
        raise ValidationError("train needs --data (or data_root in the config file)")
    sequences = load_dataset(cfg.data_root, split=args.split,
                             total_stride=cfg.total_stride)
    result = train(cfg, sequences, log=print)
    out = _out_dir(args)
    save_config(cfg, out / "config.ini")
    save_checkpoint(out / "checkpoint", result.model, cfg,
                    step=result.steps, rng=result.rng)
    (out / "losses.txt").write_text(
        "".join(f"{v:.17g}\n" for v in result.losses))
    if result.losses:
        final = smoothed(result.losses, cfg.loss_window)[-1]
        print(f"done: {result.steps} steps, final smoothed loss {final:.5f}")
    print(f"checkpoint written to {out / 'checkpoint'}")
    return 0


def cmd_eval(args) -> int:
    model, cfg, step, _ = load_checkpoint(args.checkpoint)
    root = args.data_root or cfg.data_root
    if not root:
        raise ValidationError("eval needs --data (or data_root in the checkpoint config)")
    sequences = load_dataset(root, split=args.split, total_stride=cfg.total_stride)
    out = _out_dir(args)
    dump = (out / "predictions") if args.dump else None
    report = evaluate(model, sequences, dump_dir=dump)
    save_config(cfg, out / "config.ini")
    label = f"checkpoint@{step}"
    (out / "metrics.tsv").write_text(report.to_table(label))
    (out / "details.tsv").write_text(report.to_detail_table())
    print(report.to_table(label), end="")
    return 0


def cmd_predict(args) -> int:
    model, cfg, _, _ = load_checkpoint(args.checkpoint)
    root = args.data_root or cfg.data_root
    if not root:
        raise ValidationError("predict needs --data (or data_root in the checkpoint config)")
    sequences = load_dataset(root, total_stride=cfg.total_stride)
    matches = [s for s in sequences if s.name == args.sequence]
    if not matches:
        raise ValidationError(f"sequence {args.sequence!r} not found under {root}")
    seq = matches[0]
    if seq.masks is None:
        raise ValidationError(f"sequence {seq.name} has no first-frame annotation")
    preds = propagate(model, seq.frames, seq.masks[0], padding=seq.padding)
    out = _out_dir(args)
    save_config(cfg, out / "config.ini")
    mask_dir = out / seq.name
    mask_dir.mkdir(parents=True, exist_ok=True)
    for t, pred in enumerate(preds, start=1):
        write_mask(mask_dir / f"{t:05d}.pgm", (pred >= 0.5).astype(np.float64))
    print(f"wrote {len(preds)} masks to {mask_dir}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _effective_config(args)
    if not cfg.data_root:
        raise ValidationError("ablate needs --data (or data_root in the config file)")
    rows = tuple(r.strip() for r in args.rows.split(",") if r.strip())
    train_seqs = load_dataset(cfg.data_root, split="train",
                              total_stride=cfg.total_stride)
    eval_seqs = load_dataset(cfg.data_root, split=args.split,
                             total_stride=cfg.total_stride)
    results = ablate(cfg, train_seqs, eval_seqs, rows=rows, log=print)
    table = ablation_table(results)
    out = _out_dir(args)
    save_config(cfg, out / "config.ini")
    (out / "ablation.tsv").write_text(table + "\n")
    print(table)
    return 0


def cmd_synth(args) -> int:
    synth_cfg = SynthConfig(
        resolution=args.resolution,
        frames=args.frames,
        blur_sigma=args.blur,
        speckle=args.speckle,
        distractors=args.distractors,
        deformation=args.deformation,
        max_speed=args.max_speed,
    )
    train_names, val_names = make_dataset(
        args.out, args.count, synth_cfg, seed=args.seed,
        val_count=args.val_count, ratio=args.ratio)
    print(f"wrote {args.count} sequences under {args.out} "
          f"({len(train_names)} train / {len(val_names)} val)")
    return 0


def cmd_verify(args) -> int:
    numbers = None
    if args.only:
        numbers = sorted(int(n) for n in args.only.split(","))
    results = run_all(workdir=args.workdir, log=print, numbers=numbers)
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lesionseg",
        description="Video lesion segmentation with memory, prior-mask, "
                    "and multi-scale feature fusion.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on 3-frame clips")
    _add_config_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--split", default="train", help="ImageSets split to train on")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint by propagation")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", dest="data_root", default=None)
    p.add_argument("--split", default="val")
    p.add_argument("--out", required=True)
    p.add_argument("--dump", action="store_true",
                   help="write binarized predictions as a mask tree")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="propagate one sequence and write masks")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", dest="data_root", default=None)
    p.add_argument("--sequence", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("ablate", help="train/evaluate module-toggle rows")
    _add_config_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--rows", default=",".join(ABLATION_ROWS),
                   help="comma-separated subset of " + ", ".join(ABLATION_ROWS))
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("synth", help="generate a synthetic dataset tree")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--frames", type=int, default=5)
    p.add_argument("--blur", type=float, default=1.0)
    p.add_argument("--speckle", type=float, default=0.25)
    p.add_argument("--distractors", type=int, default=2)
    p.add_argument("--deformation", type=float, default=0.08)
    p.add_argument("--max-speed", dest="max_speed", type=float, default=1.0)
    p.add_argument("--ratio", type=float, default=0.9, help="train split fraction")
    p.add_argument("--val-count", dest="val_count", type=int, default=None,
                   help="pin the validation set size exactly")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("verify", help="run the acceptance suite")
    p.add_argument("--workdir", default=None,
                   help="where to keep generated fixtures (default: temp dir)")
    p.add_argument("--only", default=None,
                   help="comma-separated criterion numbers to run")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, GenerationError, TrainingDivergedError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
