"""Command-line entry point.

Exit codes: 0 on success, 1 for usage problems, 2 for runtime failures.
Every subcommand writes only inside its output directory and leaves a
manifest there with the arguments needed to reproduce the run.  The
``SYNTHSUP_THREADS`` environment variable caps torch's thread count.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .classifier import ClassifierConfig, TrainedClassifier, train_classifier
from .conditioning import LABEL_NAMES, ConditionVector
from .denoiser import Denoiser, DenoiserConfig
from .diffusion import (DiffusionTrainConfig, DiffusionTrainer, SampleRequest,
                        ddim_sample, replica_seed)
from .harness import ExperimentConfig, emit_figure_csv, run_experiment
from .metrics import evaluate_predictions
from .pgm import write_pgm
from .schedule import make_schedule
from .toydata import builtin_site, generate_site, load_dataset, resolve_dataset, save_dataset


def _labels_arg(text: str) -> tuple:
    """Comma-separated label names -> 14-slot multi-hot tuple."""
    slots = [0] * len(LABEL_NAMES)
    if text:
        for name in text.split(","):
            name = name.strip()
            if name not in LABEL_NAMES:
                raise argparse.ArgumentTypeError(
                    f"unknown label {name!r}; choose from "
                    + ", ".join(LABEL_NAMES))
            slots[LABEL_NAMES.index(name)] = 1
    return tuple(slots)


def _multipliers_arg(text: str) -> tuple:
    try:
        return tuple(int(x) for x in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad multiplier list {text!r}") from exc


def _write_manifest(out: Path, payload: dict) -> None:
    payload = {"tool_version": __version__, **payload}
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _cmd_gen_data(args) -> int:
    spec = builtin_site(args.site, args.n, image_size=args.image_size)
    records = generate_site(spec, args.seed)
    save_dataset(args.out, records,
                 meta={"command": "gen-data", "site": args.site, "n": args.n,
                       "seed": args.seed, "image_size": args.image_size})
    print(f"wrote {len(records)} images to {args.out}")
    return 0


def _cmd_train_diffusion(args) -> int:
    records = load_dataset(args.data)
    size = records[0].pixels.shape[0]
    images = np.stack([r.pixels for r in records])
    conds = [r.condition_vector() for r in records]
    model = Denoiser.create(
        DenoiserConfig(image_size=size, base_channels=args.base_channels,
                       channel_multipliers=args.channel_multipliers),
        seed=args.seed)
    trainer = DiffusionTrainer(
        model, make_schedule(args.schedule, args.schedule_steps),
        DiffusionTrainConfig(steps=args.steps, batch_size=args.batch_size,
                             learning_rate=args.lr, ema_decay=args.ema_decay,
                             seed=args.seed))
    losses = trainer.fit(images, conds, log_every=args.log_every)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trainer.ema_model().save(out / "diffusion.ckpt")
    _write_manifest(out, {
        "command": "train-diffusion", "data": str(args.data),
        "steps": args.steps, "batch_size": args.batch_size, "lr": args.lr,
        "ema_decay": args.ema_decay, "seed": args.seed,
        "base_channels": args.base_channels,
        "channel_multipliers": list(args.channel_multipliers),
        "schedule": args.schedule, "schedule_steps": args.schedule_steps,
        "final_loss": losses[-1]})
    print(f"checkpoint at {out / 'diffusion.ckpt'}; final loss {losses[-1]:.4f}")
    return 0


def _cmd_sample(args) -> int:
    model = Denoiser.load(args.checkpoint)
    schedule = make_schedule(args.schedule, args.schedule_steps)
    cond = ConditionVector(labels=args.labels, age_decade=args.age_decade,
                           sex=args.sex, race=args.race)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.n):
        request = SampleRequest(cond=cond, cfg_scale=args.cfg_scale,
                                n_steps=args.steps,
                                seed=replica_seed(args.seed, i, 1))
        write_pgm(out / f"sample_{i:04d}.pgm", ddim_sample(model, request, schedule))
    _write_manifest(out, {
        "command": "sample", "checkpoint": str(args.checkpoint), "n": args.n,
        "cfg_scale": args.cfg_scale, "steps": args.steps, "seed": args.seed,
        "schedule": args.schedule, "schedule_steps": args.schedule_steps,
        "labels": list(args.labels), "age_decade": args.age_decade,
        "sex": args.sex, "race": args.race})
    print(f"wrote {args.n} images to {out}")
    return 0


def _cmd_train_classifier(args) -> int:
    train = resolve_dataset(load_dataset(args.data), "training")
    val = resolve_dataset(load_dataset(args.val), "training")
    size = train.images.shape[1]
    config = ClassifierConfig(image_size=size, base_channels=args.base_channels,
                              learning_rate=args.lr, batch_size=args.batch_size,
                              max_epochs=args.epochs, ema_decay=args.ema_decay,
                              seed=args.seed)
    model = train_classifier(train, val, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model.save(out / "classifier.ckpt")
    _write_manifest(out, {
        "command": "train-classifier", "data": str(args.data),
        "val": str(args.val), "config": config.to_dict(),
        "best_val_loss": model.best_val_loss})
    print(f"checkpoint at {out / 'classifier.ckpt'}; "
          f"best validation loss {model.best_val_loss:.4f}")
    return 0


def _cmd_evaluate(args) -> int:
    model = TrainedClassifier.load(args.checkpoint)
    data = resolve_dataset(load_dataset(args.data), "testing")
    report = evaluate_predictions(
        model.predict(data.images), data.targets, data.masks, LABEL_NAMES,
        model_id=str(args.checkpoint), dataset_id=str(args.data),
        n_boot=args.n_boot, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")
    _write_manifest(out, {
        "command": "evaluate", "checkpoint": str(args.checkpoint),
        "data": str(args.data), "n_boot": args.n_boot, "seed": args.seed})
    print(f"macro AUROC {report.macro_auroc:.4f} "
          f"[{report.macro_ci_lower:.4f}, {report.macro_ci_upper:.4f}] "
          f"over {report.n_images} images")
    return 0


def _cmd_experiment_run(args) -> int:
    with open(args.config, encoding="utf-8") as fh:
        config = ExperimentConfig.from_dict(json.load(fh))
    manifest = run_experiment(config, progress=args.progress)
    print(f"manifest at {Path(manifest.root) / 'manifest.json'} "
          f"({len(manifest.metrics)} metric files)")
    return 0


def _cmd_report(args) -> int:
    paths, warnings_log = emit_figure_csv(args.manifests, args.out)
    for line in warnings_log:
        print(f"warning: {line}", file=sys.stderr)
    for path in paths:
        print(f"wrote {path}")
    if not paths:
        print("error: no figure CSV could be produced", file=sys.stderr)
        return 2
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="synthsup",
        description="Two-site synthetic-supplementation study pipeline")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a procedural site corpus")
    p.add_argument("--site", required=True, choices=("siteA", "siteB"))
    p.add_argument("--n", required=True, type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--image-size", type=int, default=32)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train-diffusion", help="train the conditional denoiser")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=4000)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--ema-decay", type=float, default=0.999)
    p.add_argument("--base-channels", type=int, default=32)
    p.add_argument("--channel-multipliers", type=_multipliers_arg,
                   default=(1, 2, 2))
    p.add_argument("--schedule", choices=("cosine", "linear"), default="cosine")
    p.add_argument("--schedule-steps", type=int, default=1000)
    p.add_argument("--log-every", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_train_diffusion)

    p = sub.add_parser("sample", help="draw guided samples from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--cfg-scale", type=float, default=0.0)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--schedule", choices=("cosine", "linear"), default="cosine")
    p.add_argument("--schedule-steps", type=int, default=1000)
    p.add_argument("--labels", type=_labels_arg, default=_labels_arg(""),
                   help="comma-separated label names to condition on")
    p.add_argument("--age-decade", type=int, default=5)
    p.add_argument("--sex", type=int, default=0, choices=(0, 1))
    p.add_argument("--race", type=int, default=0, choices=tuple(range(5)))
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("train-classifier", help="train the multi-label classifier")
    p.add_argument("--data", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=8)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-5)
    p.add_argument("--ema-decay", type=float, default=0.9999)
    p.add_argument("--base-channels", type=int, default=24)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_train_classifier)

    p = sub.add_parser("evaluate", help="score a classifier on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-boot", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("experiment", help="run or summarize experiment families")
    esub = p.add_subparsers(dest="subcommand", required=True)
    pr = esub.add_parser("run", help="run one experiment family from JSON config")
    pr.add_argument("--config", required=True)
    pr.add_argument("--progress", action="store_true")
    pr.set_defaults(func=_cmd_experiment_run)
    pp = esub.add_parser("report", help="emit figure CSVs from run manifests")
    pp.add_argument("manifests", nargs="+")
    pp.add_argument("--out", required=True)
    pp.set_defaults(func=_cmd_report)

    p = sub.add_parser("report", help="emit figure CSVs from run manifests")
    p.add_argument("manifests", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1

    threads = os.environ.get("SYNTHSUP_THREADS")
    if threads:
        try:
            torch.set_num_threads(int(threads))
        except ValueError:
            print(f"error: SYNTHSUP_THREADS={threads!r} is not an integer",
                  file=sys.stderr)
            return 1

    try:
        return args.func(args)
    except (ValueError, OSError, KeyError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
