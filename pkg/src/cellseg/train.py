"""Training loop: AdamW, per-epoch exponential LR, frozen-encoder variants.

Per-step losses go to ``losses.jsonl`` (one JSON object per optimizer step,
all eight components plus the total); per-epoch validation metrics go to
``val_metrics.jsonl``.  The best checkpoint is selected on validation mPQ.
The learning rate is assigned directly as ``lr * decay**epoch`` each epoch
so the logged schedule is exact.
"""

from __future__ import annotations

import logging
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig
from .containers import InstanceResult
from .data.manifest import Manifest, Sample, load_manifest, load_sample, save_manifest, split_by_patient
from .losses import total_loss
from .metrics import multiclass_pq, pq
from .network import SegModel, build_model, freeze_encoder, trainable_parameters
from .postprocess import predictions_to_instances
from .registry import ParameterRegistry, group_checksum, save_checkpoint
from .targets import targets_from_instances
from .utils import append_jsonl, set_deterministic, write_json

log = logging.getLogger(__name__)


def _augment(sample: Sample, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Random flips and 90-degree rotations applied to image and label alike."""
    image, inst = sample.image, sample.inst_map
    if rng.random() < 0.5:
        image, inst = image[:, ::-1], inst[:, ::-1]
    if rng.random() < 0.5:
        image, inst = image[::-1, :], inst[::-1, :]
    k = int(rng.integers(0, 4))
    if k:
        image, inst = np.rot90(image, k), np.rot90(inst, k)
    return np.ascontiguousarray(image), np.ascontiguousarray(inst)


def _batch_tensors(
    samples: list[Sample], rng: np.random.Generator | None, device=None
) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    """Stack samples into model inputs and loss targets.

    Targets are rebuilt from the (possibly augmented) instance map so the
    offset maps always match the geometry the model sees.
    """
    images, np_t, hv_t, nc_t, tc_t = [], [], [], [], []
    for s in samples:
        if rng is not None:
            image, inst = _augment(s, rng)
        else:
            image, inst = s.image, s.inst_map
        t = targets_from_instances(inst, s.types, s.tissue_class)
        images.append(np.transpose(image, (2, 0, 1)))
        np_t.append(t.np_target)
        hv_t.append(np.transpose(t.hv_target, (2, 0, 1)))
        nc_t.append(t.nc_target)
        tc_t.append(t.tissue_class)
    batch = torch.from_numpy(np.stack(images)).float()
    targets = {
        "np_target": torch.from_numpy(np.stack(np_t)).long(),
        "hv_target": torch.from_numpy(np.stack(hv_t)).float(),
        "nc_target": torch.from_numpy(np.stack(nc_t)).long(),
        "tissue_class": torch.tensor(tc_t, dtype=torch.long),
    }
    return batch, targets


def ground_truth_result(sample: Sample) -> InstanceResult:
    return InstanceResult(inst_map=sample.inst_map, types=dict(sample.types))


def validate(model: SegModel, cfg: RunConfig, samples: list[Sample],
             batch_size: int = 8) -> dict:
    """Native-resolution inference + postprocessing + dataset mPQ/bPQ."""
    gt_results, pred_results = [], []
    binary = None
    for i in range(0, len(samples), batch_size):
        chunk = samples[i:i + batch_size]
        batch, _ = _batch_tensors(chunk, rng=None)
        for s, maps in zip(chunk, model.predict_maps(batch)):
            pred = predictions_to_instances(maps, cfg.postprocess)
            gt = ground_truth_result(s)
            gt_results.append(gt)
            pred_results.append(pred)
            r = pq(gt.inst_map, pred.inst_map)
            binary = r if binary is None else binary + r
    mc = multiclass_pq(gt_results, pred_results, cfg.num_cell_classes)
    return {"mPQ": mc["mPQ"], "bPQ": binary.pq if binary is not None else 1.0}


def train(cfg: RunConfig, manifest_path: str | Path, out_dir: str | Path) -> dict:
    """Train one model variant; returns (and writes) the run summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = set_deterministic(cfg.seed)

    manifest = load_manifest(manifest_path)
    train_m, val_m, test_m = split_by_patient(manifest, cfg.train.split_ratios, cfg.seed)
    for name, m in (("train", train_m), ("val", val_m), ("test", test_m)):
        save_manifest(m, out / f"{name}_manifest.json")
    train_samples = [load_sample(train_m, r) for r in train_m.samples]
    val_samples = [load_sample(val_m, r) for r in val_m.samples]
    log.info("split: %d train / %d val / %d test images",
             len(train_samples), len(val_samples), len(test_m))

    model = build_model(cfg)
    if cfg.variant in ("adapter", "decoder_only"):
        freeze_encoder(model)
    encoder_checksum_before = group_checksum(model, "encoder")

    params = trainable_parameters(model)
    opt = torch.optim.AdamW(params, lr=cfg.train.lr, weight_decay=cfg.train.weight_decay)

    losses_path = out / "losses.jsonl"
    metrics_path = out / "val_metrics.jsonl"
    best = {"epoch": -1, "mPQ": -1.0}
    step = 0
    first_epoch_loss = last_epoch_loss = float("nan")
    for epoch in range(cfg.train.epochs):
        lr = cfg.train.lr * cfg.train.lr_decay ** epoch
        for g in opt.param_groups:
            g["lr"] = lr
        model.train()
        order = rng.permutation(len(train_samples))
        epoch_losses = []
        for i in range(0, len(order), cfg.train.batch_size):
            chunk = [train_samples[j] for j in order[i:i + cfg.train.batch_size]]
            batch, targets = _batch_tensors(chunk, rng if cfg.train.augment else None)
            out_maps = model(batch)
            total, breakdown = total_loss(out_maps, targets, cfg.loss_weights)
            if not torch.isfinite(total):
                raise RuntimeError(
                    f"non-finite loss at step {step}: "
                    + ", ".join(f"{k}={float(v):.4g}" for k, v in breakdown.items())
                )
            opt.zero_grad()
            total.backward()
            opt.step()
            record = {"step": step}
            record.update({k: v.item() for k, v in breakdown.items()})
            record["total"] = total.item()
            append_jsonl(record, losses_path)
            epoch_losses.append(record["total"])
            step += 1
        epoch_mean = float(np.mean(epoch_losses))
        if epoch == 0:
            first_epoch_loss = epoch_mean
        last_epoch_loss = epoch_mean

        val = validate(model, cfg, val_samples)
        append_jsonl({"epoch": epoch, "lr": lr, "train_loss": epoch_mean, **val},
                     metrics_path)
        log.info("epoch %d: lr %.3g loss %.4f val mPQ %.4f", epoch, lr, epoch_mean,
                 val["mPQ"])
        if val["mPQ"] > best["mPQ"]:
            best = {"epoch": epoch, "mPQ": val["mPQ"]}
            _save(model, cfg, out / "best.ckpt", epoch=epoch, val_mPQ=val["mPQ"])

    _save(model, cfg, out / "last.ckpt", epoch=cfg.train.epochs - 1,
          val_mPQ=best["mPQ"])
    encoder_checksum_after = group_checksum(model, "encoder")
    summary = {
        "variant": cfg.variant,
        "seed": cfg.seed,
        "epochs": cfg.train.epochs,
        "steps": step,
        "best_epoch": best["epoch"],
        "best_val_mPQ": best["mPQ"],
        "first_epoch_train_loss": first_epoch_loss,
        "last_epoch_train_loss": last_epoch_loss,
        "encoder_frozen": cfg.variant in ("adapter", "decoder_only"),
        "encoder_checksum_before": encoder_checksum_before,
        "encoder_checksum_after": encoder_checksum_after,
        "out_dir": str(out),
    }
    write_json(summary, out / "summary.json")
    return summary


def _save(model: SegModel, cfg: RunConfig, path: Path, **meta) -> None:
    save_checkpoint(
        ParameterRegistry.from_model(model), path,
        meta={"config": cfg.to_dict(), **meta},
    )


def ablation_config(cfg: RunConfig, variant: str, seed: int, epochs: int) -> RunConfig:
    return replace(cfg, variant=variant, seed=seed, train=replace(cfg.train, epochs=epochs))
