"""Ablation harness: adapter vs frozen decoder-only vs full fine-tuning.

All variants share the dataset, split, schedule and budget; each seed
trains the three variants, evaluates them on the held-out test split at
native resolution, and additionally evaluates the adapter variant on
magnification-shifted (2x down/up) inputs.
"""

from __future__ import annotations

import logging
from pathlib import Path

from .config import VARIANTS, RunConfig
from .data.manifest import load_manifest
from .evaluate import evaluate_predictions
from .inference import load_model_from_checkpoint, run_inference
from .train import ablation_config, train
from .utils import write_json

log = logging.getLogger(__name__)


def _test_mpq(run_dir: Path, degrade: bool = False) -> float:
    model, cfg, _ = load_model_from_checkpoint(run_dir / "best.ckpt")
    test_manifest_path = run_dir / "test_manifest.json"
    pred_dir = run_dir / ("pred_degraded" if degrade else "pred_test")
    run_inference(
        model, cfg, load_manifest(test_manifest_path), pred_dir,
        mode="native", degrade=degrade,
    )
    report = evaluate_predictions(test_manifest_path, pred_dir,
                                  pred_dir / "report.json")
    return report["mPQ"]


def run_ablation(
    base_cfg: RunConfig,
    manifest_path: str | Path,
    out_dir: str | Path,
    seeds: list[int],
    epochs: int = 8,
) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    per_seed = []
    for seed in seeds:
        row: dict = {"seed": seed}
        for variant in VARIANTS:
            cfg = ablation_config(base_cfg, variant, seed, epochs)
            run_dir = out / f"seed{seed}" / variant
            summary = train(cfg, manifest_path, run_dir)
            row[variant] = _test_mpq(run_dir)
            row[f"{variant}_best_val"] = summary["best_val_mPQ"]
        row["adapter_degraded"] = _test_mpq(out / f"seed{seed}" / "adapter", degrade=True)
        per_seed.append(row)
        log.info("seed %d: %s", seed, {k: v for k, v in row.items() if k != "seed"})

    n = len(per_seed)
    adapter_wins = sum(1 for r in per_seed if r["adapter"] > r["decoder_only"])
    degrade_drops = sum(1 for r in per_seed if r["adapter_degraded"] < r["adapter"])
    report = {
        "epochs": epochs,
        "seeds": seeds,
        "per_seed": per_seed,
        "adapter_wins_over_decoder_only": adapter_wins,
        "adapter_beats_decoder_only_majority": adapter_wins * 2 > n,
        "degradation_drops": degrade_drops,
        "degradation_drops_majority": degrade_drops * 2 > n,
    }
    write_json(report, out / "ablation_report.json")
    print(format_table(report))
    return report


def format_table(report: dict) -> str:
    header = f"{'seed':>6} {'adapter':>10} {'decoder_only':>13} {'full_finetune':>14} {'adapter@2x':>11}"
    lines = [header, "-" * len(header)]
    for r in report["per_seed"]:
        lines.append(
            f"{r['seed']:>6} {r['adapter']:>10.4f} {r['decoder_only']:>13.4f} "
            f"{r['full_finetune']:>14.4f} {r['adapter_degraded']:>11.4f}"
        )
    lines.append(
        f"adapter > decoder_only in {report['adapter_wins_over_decoder_only']}"
        f"/{len(report['per_seed'])} seeds; degradation drops mPQ in "
        f"{report['degradation_drops']}/{len(report['per_seed'])}"
    )
    return "\n".join(lines)
