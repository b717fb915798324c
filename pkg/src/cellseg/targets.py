"""Training-target construction from instance ground truth."""

from __future__ import annotations

import numpy as np

from .containers import PredictionMaps, TargetMaps


def hv_from_instances(inst_map: np.ndarray) -> np.ndarray:
    """Horizontal/vertical offset targets, (H, W, 2) float32.

    For every instance, each pixel stores its offset from the instance
    center of mass (mean pixel coordinate), normalized per axis and per
    instance so the extreme offsets reach exactly -1/+1.  Background is 0;
    a single-pixel instance is 0.  Channel 0 is horizontal (x), channel 1
    vertical (y).
    """
    hv = np.zeros(inst_map.shape + (2,), dtype=np.float32)
    for inst_id in np.unique(inst_map):
        if inst_id == 0:
            continue
        ys, xs = np.nonzero(inst_map == inst_id)
        for channel, coords in ((0, xs), (1, ys)):
            off = coords.astype(np.float64) - coords.mean()
            neg_extent = -off.min()
            pos_extent = off.max()
            if neg_extent > 0:
                off[off < 0] /= neg_extent
            if pos_extent > 0:
                off[off > 0] /= pos_extent
            hv[ys, xs, channel] = off.astype(np.float32)
    return hv


def type_map_from_instances(inst_map: np.ndarray, types: dict[int, int]) -> np.ndarray:
    """Pixelwise cell-class map (0 background, classes from 1)."""
    out = np.zeros_like(inst_map, dtype=np.int32)
    for inst_id, cls in types.items():
        out[inst_map == inst_id] = cls
    return out


def targets_from_instances(
    inst_map: np.ndarray, types: dict[int, int], tissue_class: int
) -> TargetMaps:
    return TargetMaps(
        np_target=(inst_map > 0).astype(np.int32),
        hv_target=hv_from_instances(inst_map),
        nc_target=type_map_from_instances(inst_map, types),
        tissue_class=int(tissue_class),
    )


def ideal_maps(
    inst_map: np.ndarray,
    types: dict[int, int],
    num_cell_classes: int,
    num_tissue_classes: int,
    tissue_class: int = 0,
) -> PredictionMaps:
    """One-hot prediction maps a perfect model would emit for this ground truth.

    Used by the inference bypass mode to exercise the postprocessing and
    metrics stack without a trained network.
    """
    h, w = inst_map.shape
    fg = (inst_map > 0)
    np_probs = np.zeros((h, w, 2), dtype=np.float32)
    np_probs[..., 1] = fg
    np_probs[..., 0] = ~fg
    nc = type_map_from_instances(inst_map, types)
    nc_probs = np.zeros((h, w, num_cell_classes + 1), dtype=np.float32)
    for c in range(num_cell_classes + 1):
        nc_probs[..., c] = nc == c
    tissue_logits = np.full(num_tissue_classes, -50.0, dtype=np.float32)
    tissue_logits[int(tissue_class)] = 50.0
    return PredictionMaps(
        np_probs=np_probs,
        hv=hv_from_instances(inst_map),
        nc_probs=nc_probs,
        tissue_logits=tissue_logits,
    )
