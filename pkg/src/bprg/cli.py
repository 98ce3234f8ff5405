"""Command-line surface: train / prune / regrow / run / report."""

from __future__ import annotations

import argparse
import os
import sys

from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .config import canonical_config_json, parse_config
from .errors import BprgError, UsageError
from .model import build_model
from .report import emit_plot_png, emit_plot_svg, emit_trajectory_csv, parse_trajectory_csv
from .sparsity import MaskSet, PruneSchedule, RegrowSchedule
from .trajectory import (
    derive_streams,
    evaluate_accuracy,
    make_datasets,
    pretrain,
    run_bidirectional,
    run_prune_phase,
    run_regrow_phase,
)

_CRITERION_ALIAS = {"gradient": "gradient", "random": "random", "rewind": "rewind_magnitude"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _build_parser() -> _Parser:
    p = _Parser(prog="bprg", description="Bidirectional pruning-regrowth experiments")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    sub = p.add_subparsers(dest="command")

    t = sub.add_parser("train", help="pretrain a dense model", add_help=True)
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True, help="output checkpoint path")

    pr = sub.add_parser("prune", help="prune a checkpointed model")
    pr.add_argument("--ckpt", required=True)
    pr.add_argument("--sparsity", type=float, required=True)
    pr.add_argument("--mode", choices=["one-shot", "iterative"], default="one-shot")
    pr.add_argument("--steps", type=int, default=None)
    pr.add_argument("--out", required=True)

    rg = sub.add_parser("regrow", help="regrow pruned connections")
    rg.add_argument("--ckpt", required=True)
    rg.add_argument("--to-sparsity", type=float, required=True)
    rg.add_argument("--criterion", choices=["gradient", "random", "rewind"], default="gradient")
    rg.add_argument("--steps", type=int, default=1)
    rg.add_argument("--out", required=True)

    rn = sub.add_parser("run", help="full bidirectional experiment")
    rn.add_argument("--config", required=True)
    rn.add_argument("--out-dir", required=True)

    rp = sub.add_parser("report", help="re-render plots from a trajectory CSV")
    rp.add_argument("--csv", required=True)
    rp.add_argument("--svg", required=True)
    rp.add_argument("--png", default=None)
    return p


def _load_config(path: str, seed_override):
    cfg = parse_config(path)
    if seed_override is not None:
        cfg.seed = seed_override
        cfg.raw = dict(cfg.raw)
        cfg.raw["seed"] = seed_override
    return cfg


def _cmd_train(args) -> int:
    cfg = _load_config(args.config, args.seed)
    streams = derive_streams(cfg.seed)
    train_ds, test_ds = make_datasets(cfg, streams["data"])
    model = build_model(cfg.layers, streams["init"], input_shape=cfg.input_shape)
    records = []
    loss, acc = pretrain(model, cfg, train_ds, test_ds, records, streams["train"])
    save_checkpoint(args.out, model, MaskSet.all_active(model), canonical_config_json(cfg))
    print(f"pretrained: loss={loss:.6f} accuracy={acc:.6f} -> {args.out}")
    return 0


def _cmd_prune(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    cfg = ckpt.config
    if args.seed is not None:
        cfg.seed = args.seed
    steps = args.steps if args.steps is not None else (1 if args.mode == "one-shot" else 5)
    current = ckpt.masks.sparsity()
    sched = PruneSchedule(
        mode=args.mode,
        s_init=current,
        s_final=args.sparsity,
        steps=steps,
        interpolation=cfg.prune.interpolation,
        finetune_epochs_per_step=cfg.prune.finetune_epochs_per_step,
        scope=cfg.prune.scope,
    )
    streams = derive_streams(cfg.seed)
    train_ds, test_ds = make_datasets(cfg, streams["data"])
    records = []
    masks = run_prune_phase(
        ckpt.model, sched, train_ds, test_ds, cfg, records, streams["train"], masks=ckpt.masks
    )
    acc = evaluate_accuracy(ckpt.model, masks, test_ds)
    save_checkpoint(args.out, ckpt.model, masks, canonical_config_json(cfg))
    print(f"pruned to sparsity={masks.sparsity():.6f} accuracy={acc:.6f} -> {args.out}")
    return 0


def _cmd_regrow(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    cfg = ckpt.config
    if args.seed is not None:
        cfg.seed = args.seed
    sched = RegrowSchedule(
        mode="one-shot" if args.steps == 1 else "iterative",
        s_start=ckpt.masks.sparsity(),
        s_end=args.to_sparsity,
        steps=args.steps,
        criterion=_CRITERION_ALIAS[args.criterion],
        init_rule=cfg.regrow.init_rule,
        finetune_epochs_per_step=cfg.regrow.finetune_epochs_per_step,
        scoring_batch_size=cfg.regrow.scoring_batch_size,
    )
    streams = derive_streams(cfg.seed)
    train_ds, test_ds = make_datasets(cfg, streams["data"])
    records = []
    masks = run_regrow_phase(
        ckpt.model, ckpt.masks, sched, train_ds, test_ds, cfg, records,
        streams["train"], streams["regrow"],
    )
    acc = evaluate_accuracy(ckpt.model, masks, test_ds)
    save_checkpoint(args.out, ckpt.model, masks, canonical_config_json(cfg))
    print(f"regrown to sparsity={masks.sparsity():.6f} accuracy={acc:.6f} -> {args.out}")
    return 0


def _cmd_run(args) -> int:
    cfg = _load_config(args.config, args.seed)
    os.makedirs(args.out_dir, exist_ok=True)
    records, model, masks = run_bidirectional(cfg)
    csv_path = os.path.join(args.out_dir, "trajectory.csv")
    svg_path = os.path.join(args.out_dir, "trajectory.svg")
    png_path = os.path.join(args.out_dir, "trajectory.png")
    ckpt_path = os.path.join(args.out_dir, "final.bprg")
    emit_trajectory_csv(records, csv_path)
    emit_plot_svg(records, svg_path)
    emit_plot_png(records, png_path)
    save_checkpoint(ckpt_path, model, masks, canonical_config_json(cfg))
    for rec in records:
        print(
            f"{rec.phase:8s} step={rec.step:3d} sparsity={rec.sparsity:.6f} "
            f"accuracy={rec.test_accuracy:.6f}"
        )
    print(f"wrote {csv_path}, {svg_path}, {png_path}, {ckpt_path}")
    return 0


def _cmd_report(args) -> int:
    records = parse_trajectory_csv(args.csv)
    emit_plot_svg(records, args.svg)
    if args.png:
        emit_plot_png(records, args.png)
    return 0


def run_cli(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage())
        handler = {
            "train": _cmd_train,
            "prune": _cmd_prune,
            "regrow": _cmd_regrow,
            "run": _cmd_run,
            "report": _cmd_report,
        }[args.command]
        return handler(args)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return 1
    except BprgError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
