"""Command-line interface: synth / train / infer / eval / ablate."""

from __future__ import annotations

import argparse
import logging
from dataclasses import replace
from pathlib import Path

from .ablation import run_ablation
from .config import PROFILES, VARIANTS, RunConfig
from .data.manifest import load_manifest
from .data.synthetic import generate_synthetic
from .evaluate import evaluate_predictions
from .inference import MODES, load_model_from_checkpoint, run_inference
from .train import train
from .utils import read_json


def _deep_update(base: dict, override: dict) -> dict:
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _deep_update(base[k], v)
        else:
            base[k] = v
    return base


def resolve_config(args) -> RunConfig:
    """profile -> optional JSON config overlay -> CLI overrides."""
    cfg_dict = PROFILES[args.profile]().to_dict()
    if getattr(args, "config", None):
        _deep_update(cfg_dict, read_json(args.config))
    cfg = RunConfig.from_dict(cfg_dict)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "variant", None):
        cfg = replace(cfg, variant=args.variant)
    if getattr(args, "epochs", None):
        cfg = replace(cfg, train=replace(cfg.train, epochs=args.epochs))
    return cfg


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--profile", choices=sorted(PROFILES), default="toy")
    p.add_argument("--config", help="JSON file overlaying the profile")
    p.add_argument("--seed", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cellseg",
        description="Nuclei instance segmentation with a ViT + spatial-prior adapter",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--cell-classes", type=int, default=3)
    p.add_argument("--tissue-classes", type=int, default=2)
    p.add_argument("--patients", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train one model variant")
    p.add_argument("--data", required=True, help="dataset manifest.json")
    p.add_argument("--out", required=True)
    p.add_argument("--variant", choices=VARIANTS, default=None)
    p.add_argument("--epochs", type=int, default=None)
    _add_config_args(p)

    p = sub.add_parser("infer", help="run inference over a manifest")
    p.add_argument("--data", required=True, help="manifest.json to predict")
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint", help="model checkpoint (not needed for --mode ideal)")
    p.add_argument("--mode", choices=MODES, default="native")
    p.add_argument("--degrade", action="store_true",
                   help="2x down/up corruption before prediction")
    p.add_argument("--overlays", action="store_true")
    _add_config_args(p)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--data", required=True, help="ground-truth manifest.json")
    p.add_argument("--pred", required=True, help="directory with {id}_inst predictions")
    p.add_argument("--out", default=None, help="report JSON path")

    p = sub.add_parser("ablate", help="train and compare the three variants")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--num-seeds", type=int, default=3)
    p.add_argument("--epochs", type=int, default=8)
    _add_config_args(p)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.command == "synth":
        path = generate_synthetic(
            args.out, count=args.count, image_size=args.image_size,
            num_cell_classes=args.cell_classes,
            num_tissue_classes=args.tissue_classes,
            seed=args.seed, num_patients=args.patients,
        )
        print(path)
    elif args.command == "train":
        cfg = resolve_config(args)
        summary = train(cfg, args.data, args.out)
        print(f"best val mPQ {summary['best_val_mPQ']:.4f} "
              f"(epoch {summary['best_epoch']})")
    elif args.command == "infer":
        manifest = load_manifest(args.data)
        if args.checkpoint:
            model, cfg, _ = load_model_from_checkpoint(args.checkpoint)
        else:
            if args.mode != "ideal":
                raise SystemExit("--checkpoint is required unless --mode ideal")
            model, cfg = None, resolve_config(args)
        ids = run_inference(
            model, cfg, manifest, args.out, mode=args.mode,
            degrade=args.degrade, overlays=args.overlays,
        )
        print(f"{len(ids)} predictions -> {args.out}")
    elif args.command == "eval":
        report = evaluate_predictions(args.data, args.pred, args.out)
        keys = ("mPQ", "mDQ", "mSQ", "bPQ", "DICE", "AJI")
        print("  ".join(f"{k}={report[k]:.4f}" for k in keys))
    elif args.command == "ablate":
        cfg = resolve_config(args)
        base_seed = cfg.seed
        run_ablation(
            cfg, args.data, args.out,
            seeds=[base_seed + i for i in range(args.num_seeds)],
            epochs=args.epochs,
        )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
