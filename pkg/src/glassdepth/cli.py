"""Command-line interface: dataset generation, training, evaluation,
prediction, and the embedded self-check.

Every setting lives in a flat ``key = value`` config file (``#`` starts a
comment); command-line flags override file values, which override the
built-in defaults.  ``glassdepth <command> --help`` lists the flags, and
the key table below is printed by ``--help-keys``.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from .check import run_checks
from .data import (SynthConfig, generate_scene, load_dataset, load_sample,
                   save_depth_png, write_manifest, write_sample)
from .errors import ConfigError, GlassDepthError
from .geometry import depth_to_pointcloud, write_ply
from .loss import LossConfig
from .metrics import aggregate, evaluate, format_table, report_lines
from .model import ModelConfig, ModelParams, predict_depth
from .train import (TrainConfig, history_to_csv, load_checkpoint,
                    save_checkpoint, train)

# key -> (parser, default, help); the single source of configuration truth
KEY_SPECS = {
    # model architecture
    "modality": ("str", "rgbd", "input planes: rgbd, rgb or depth"),
    "embed_dim": ("int", 32, "token width after patch embedding"),
    "stage_depths": ("ints", (2, 2, 2, 2), "transformer units per encoder stage"),
    "heads": ("ints", (2, 4, 8, 16), "attention heads per encoder stage"),
    "window": ("int", 5, "attention window edge (clamped per stage to fit)"),
    "use_ffm": ("bool", True, "enable the squeeze-excite fusion gates"),
    "ffm_reduction": ("int", 4, "bottleneck ratio inside the fusion gates"),
    "height": ("int", 240, "input image height in pixels"),
    "width": ("int", 320, "input image width in pixels"),
    "max_depth": ("float", 10.0, "depth normalization ceiling in metres"),
    # training
    "batch_size": ("int", 16, "samples per optimizer step"),
    "lr": ("float", 1e-3, "initial learning rate"),
    "weight_decay": ("float", 0.05, "decoupled AdamW weight decay"),
    "epochs": ("int", 40, "training epochs"),
    "lr_milestones": ("ints", (15, 30), "epochs at which lr decays"),
    "lr_gamma": ("float", 0.1, "lr decay factor at each milestone"),
    "augment": ("bool", True, "random flip/rotate augmentation"),
    "seed": ("int", 0, "seed for all randomness in the run"),
    "max_steps": ("int", 0, "stop after this many steps (0 = no cap)"),
    # loss
    "beta_normal": ("float", 0.01, "weight of the normal-consistency term"),
    "alpha_masked": ("float", 1.0, "weight of the transparent-region loss"),
    "beta_unmasked": ("float", 0.1, "weight of the whole-image loss"),
    # synthetic data generation
    "count": ("int", 8, "number of samples to generate"),
    "min_objects": ("int", 2, "minimum objects per scene"),
    "max_objects": ("int", 5, "maximum objects per scene"),
    "background_depth_min": ("float", 1.2, "nearest background plane depth"),
    "background_depth_max": ("float", 2.5, "farthest background plane depth"),
    "transparent_fraction": ("float", 0.7, "per-object transparency probability"),
    "p_background": ("float", 0.5, "masked pixel reads the background"),
    "p_missing": ("float", 0.3, "masked pixel drops out"),
    "p_noise": ("float", 0.2, "masked pixel reads noisy truth"),
    "noise_sigma": ("float", 0.005, "sensor noise in metres"),
    # evaluation
    "mask_only": ("bool", True, "evaluate transparent pixels only"),
}


def _parse_value(key: str, text: str):
    kind = KEY_SPECS[key][0]
    text = text.strip()
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "bool":
            low = text.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if kind == "ints":
            if not text:
                return ()
            return tuple(int(p) for p in text.replace(",", " ").split())
        return text
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: {exc}") from exc


def parse_config_file(path) -> Dict[str, object]:
    """Flat ``key = value`` file; unknown keys are rejected by name."""
    values: Dict[str, object] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in KEY_SPECS:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = _parse_value(key, value)
    return values


def resolve_config(args: argparse.Namespace) -> Dict[str, object]:
    """defaults <- config file <- command-line flags."""
    cfg = {key: spec[1] for key, spec in KEY_SPECS.items()}
    if getattr(args, "config", None):
        cfg.update(parse_config_file(args.config))
    if getattr(args, "extent", None):
        try:
            w, h = (int(p) for p in args.extent.lower().split("x"))
        except ValueError as exc:
            raise ConfigError(f"--extent expects WxH, got {args.extent!r}") from exc
        cfg["width"], cfg["height"] = w, h
    if getattr(args, "no_ffm", False):
        cfg["use_ffm"] = False
    if getattr(args, "no_augment", False):
        cfg["augment"] = False
    if getattr(args, "modality", None):
        cfg["modality"] = args.modality
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "count", None) is not None:
        cfg["count"] = args.count
    if getattr(args, "max_steps", None) is not None:
        cfg["max_steps"] = args.max_steps
    if getattr(args, "all_pixels", False):
        cfg["mask_only"] = False
    if getattr(args, "mask_only", False):
        cfg["mask_only"] = True
    return cfg


def make_model_config(cfg: Dict[str, object]) -> ModelConfig:
    return ModelConfig(
        modality=cfg["modality"], embed_dim=cfg["embed_dim"],
        stage_depths=tuple(cfg["stage_depths"]), heads=tuple(cfg["heads"]),
        window=cfg["window"], use_ffm=cfg["use_ffm"],
        ffm_reduction=cfg["ffm_reduction"], height=cfg["height"],
        width=cfg["width"], max_depth=cfg["max_depth"])


def make_train_config(cfg: Dict[str, object]) -> TrainConfig:
    return TrainConfig(
        batch_size=cfg["batch_size"], lr=cfg["lr"],
        weight_decay=cfg["weight_decay"], epochs=cfg["epochs"],
        lr_milestones=tuple(cfg["lr_milestones"]), lr_gamma=cfg["lr_gamma"],
        augment=cfg["augment"], seed=cfg["seed"])


def make_loss_config(cfg: Dict[str, object]) -> LossConfig:
    return LossConfig(beta_normal=cfg["beta_normal"],
                      alpha_masked=cfg["alpha_masked"],
                      beta_unmasked=cfg["beta_unmasked"])


def make_synth_config(cfg: Dict[str, object], seed: int) -> SynthConfig:
    return SynthConfig(
        height=cfg["height"], width=cfg["width"],
        min_objects=cfg["min_objects"], max_objects=cfg["max_objects"],
        background_depth=(cfg["background_depth_min"], cfg["background_depth_max"]),
        transparent_fraction=cfg["transparent_fraction"],
        p_background=cfg["p_background"], p_missing=cfg["p_missing"],
        p_noise=cfg["p_noise"], noise_sigma=cfg["noise_sigma"], seed=seed)


def cmd_gen(args) -> int:
    cfg = resolve_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    count = int(cfg["count"])
    child_seeds = np.random.SeedSequence(cfg["seed"]).generate_state(max(count, 1))
    names = []
    for i in range(count):
        name = f"sample_{i:05d}"
        sample = generate_scene(make_synth_config(cfg, int(child_seeds[i])))
        write_sample(sample, out / name)
        names.append(name)
    write_manifest(out, names)
    print(f"wrote {count} samples to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    dataset = load_dataset(args.data)
    model_cfg = make_model_config(cfg)
    train_cfg = make_train_config(cfg)
    loss_cfg = make_loss_config(cfg)
    max_steps = int(cfg["max_steps"]) or None
    params, history = train(dataset, model_cfg, train_cfg, loss_cfg,
                            max_steps=max_steps)
    out = Path(args.out)
    save_checkpoint(params, out)
    csv_path = out.with_suffix(".history.csv")
    csv_path.write_text(history_to_csv(history))
    print(f"trained {len(history)} steps on {len(dataset)} samples")
    print(f"final loss {history[-1].loss:.6f}")
    print(f"checkpoint: {out}")
    print(f"history: {csv_path}")
    return 0


def _load_model(args, cfg) -> ModelParams:
    params = ModelParams.create(make_model_config(cfg), seed=int(cfg["seed"]))
    params.load_state(load_checkpoint(args.ckpt))
    return params


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    dataset = load_dataset(args.data)
    params = _load_model(args, cfg)
    rows = []
    for i, sample in enumerate(dataset):
        pred = predict_depth(sample, params)
        valid = sample.gt_depth > 0
        sel = (sample.mask.astype(bool) & valid) if cfg["mask_only"] else valid
        rows.append((f"sample_{i:05d}", evaluate(pred, sample.gt_depth, sel)))
    agg = aggregate([r for _, r in rows])
    print(format_table(rows + [("aggregate", agg)]))
    for label, report in rows:
        for line in report_lines(report, prefix=f"{label}."):
            print(line)
    for line in report_lines(agg, prefix="aggregate."):
        print(line)
    return 0


def cmd_predict(args) -> int:
    cfg = resolve_config(args)
    sample = load_sample(args.input)
    params = _load_model(args, cfg)
    pred = predict_depth(sample, params)
    save_depth_png(args.out_depth, pred)
    cloud = depth_to_pointcloud(pred, sample.rgb, sample.intrinsics)
    write_ply(cloud, args.out_ply)
    print(f"depth: {args.out_depth}")
    print(f"cloud: {args.out_ply} ({len(cloud)} points)")
    return 0


def cmd_check(args) -> int:
    results = run_checks(inject_fault=args.inject_fault)
    for r in results:
        print(f"[{'PASS' if r.ok else 'FAIL'}] {r.name:<24} {r.seconds:6.2f}s  {r.detail}")
    total = sum(r.seconds for r in results)
    n_fail = sum(not r.ok for r in results)
    print(f"{len(results) - n_fail}/{len(results)} checks passed in {total:.2f}s")
    return 1 if n_fail else 0


def _print_keys() -> None:
    print(f"{'key':<22}{'default':<16}description")
    for key, (kind, default, help_text) in KEY_SPECS.items():
        if isinstance(default, tuple):
            default = ",".join(str(d) for d in default)
        print(f"{key:<22}{str(default):<16}{help_text}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="glassdepth",
        description="Depth completion for transparent objects.")
    parser.add_argument("--help-keys", action="store_true",
                        help="list every config-file key with its default")
    sub = parser.add_subparsers(dest="command")

    def common(p, arch=False):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int, help="override the run seed")
        if arch:
            p.add_argument("--modality", choices=("rgbd", "rgb", "depth"))
            p.add_argument("--no-ffm", action="store_true",
                           help="disable the fusion gates")
            p.add_argument("--extent", help="input extents as WxH, e.g. 320x240")

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--count", type=int, help="number of samples")
    p.add_argument("--extent", help="image extents as WxH")

    p = sub.add_parser("train", help="train a model")
    common(p, arch=True)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--no-augment", action="store_true",
                   help="disable flip/rotate augmentation")
    p.add_argument("--max-steps", type=int, help="cap optimizer steps")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    common(p, arch=True)
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--mask-only", action="store_true",
                   help="evaluate transparent pixels only (default)")
    g.add_argument("--all-pixels", action="store_true",
                   help="evaluate every pixel with valid ground truth")

    p = sub.add_parser("predict", help="predict depth for one sample")
    common(p, arch=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True, help="sample directory")
    p.add_argument("--out-depth", required=True, help="16-bit mm PNG output")
    p.add_argument("--out-ply", required=True, help="ASCII PLY output")

    p = sub.add_parser("check", help="run the embedded verification suite")
    p.add_argument("--inject-fault", action="store_true",
                   help="flip one backward rule to prove the checks bite")
    return parser


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "check": cmd_check,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.help_keys:
        _print_keys()
        return 0
    if not args.command:
        parser.print_help()
        return 2
    try:
        return COMMANDS[args.command](args)
    except GlassDepthError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
