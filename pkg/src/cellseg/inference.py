"""Inference runner: native resolution, tiled 40x-scale transfer, or the
ideal-maps bypass that exercises postprocessing without a model."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig
from .containers import PredictionMaps, save_instance_result
from .data.manifest import Manifest, Sample, load_sample
from .data.tiling import FRAME, degrade_halfres, merge_and_downsample, upsample_and_tile
from .network import SegModel, build_model
from .overlay import save_overlay
from .postprocess import predictions_to_instances
from .registry import load_checkpoint
from .targets import ideal_maps
from .utils import write_json

log = logging.getLogger(__name__)

MODES = ("native", "upsample40x", "ideal")


def load_model_from_checkpoint(path: str | Path) -> tuple[SegModel, RunConfig, dict]:
    reg, meta = load_checkpoint(path)
    if "config" not in meta:
        raise ValueError(f"{path}: checkpoint carries no config metadata")
    cfg = RunConfig.from_dict(meta["config"])
    model = build_model(cfg)
    reg.load_into_model(model, strict=True)
    model.eval()
    return model, cfg, meta


def _predict_native(model: SegModel, image: np.ndarray) -> PredictionMaps:
    batch = torch.from_numpy(np.transpose(image, (2, 0, 1))).float().unsqueeze(0)
    return model.predict_maps(batch)[0]


def _predict_tiled(model: SegModel, image: np.ndarray) -> PredictionMaps:
    if image.shape[:2] != (FRAME, FRAME):
        raise ValueError(
            f"upsample40x mode expects {FRAME}x{FRAME} frames, got {image.shape[:2]}"
        )
    tile_preds = []
    for origin, tile in upsample_and_tile(image):
        tile_preds.append((origin, _predict_native(model, tile)))
    return merge_and_downsample(tile_preds)


def predict_sample(
    model: SegModel | None,
    cfg: RunConfig,
    sample: Sample,
    mode: str = "native",
    degrade: bool = False,
) -> PredictionMaps:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if mode == "ideal":
        return ideal_maps(
            sample.inst_map, sample.types, cfg.num_cell_classes,
            cfg.num_tissue_classes, sample.tissue_class,
        )
    if model is None:
        raise ValueError(f"mode {mode!r} requires a model")
    image = degrade_halfres(sample.image) if degrade else sample.image
    if mode == "native":
        return _predict_native(model, image)
    return _predict_tiled(model, image)


def run_inference(
    model: SegModel | None,
    cfg: RunConfig,
    manifest: Manifest,
    out_dir: str | Path,
    mode: str = "native",
    degrade: bool = False,
    overlays: bool = False,
) -> list[str]:
    """Predict every manifest sample and write ``{id}_inst.png/.json`` pairs.

    Output is deterministic: the same inputs produce identical files.
    Returns the processed sample ids.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ids = []
    tissue_pred: dict[str, int] = {}
    for ref in manifest.samples:
        sample = load_sample(manifest, ref)
        pred = predict_sample(model, cfg, sample, mode=mode, degrade=degrade)
        result = predictions_to_instances(pred, cfg.postprocess)
        save_instance_result(result, out / f"{ref.id}_inst")
        tissue_pred[ref.id] = int(np.argmax(pred.tissue_logits))
        if overlays:
            save_overlay(sample.image, result, out / f"{ref.id}_overlay.png")
        ids.append(ref.id)
    write_json({"mode": mode, "degrade": degrade, "tissue_class": tissue_pred},
               out / "inference_meta.json")
    log.info("wrote %d predictions to %s (mode=%s)", len(ids), out, mode)
    return ids
