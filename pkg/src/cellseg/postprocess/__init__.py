"""Marker-controlled watershed postprocessing.

Pipeline from dense prediction maps to an instance segmentation:

1. foreground = nucleus probability > ``fg_threshold``;
2. horizontal/vertical derivative responses of the hv maps (fixed 5-tap
   kernels), min-max normalized to [0, 1] per map and inverted so that the
   instance borders (which respond negatively, the hv fields ramping from
   -1 to +1 across every instance) carry magnitude ~1 while interiors sit
   near 0;
3. energy = 1 - max(grad_h, grad_v), masked to foreground (high inside
   nuclei, low along their borders);
4. markers = connected components of (energy > ``marker_threshold``) inside
   the foreground, minus components smaller than ``min_size``;
5. priority-flood watershed over -energy restricted to the foreground,
   ties broken by pixel index;
6. relabel to consecutive ids; per-instance type = argmax of the summed
   type probabilities (background channel excluded, ties to the lowest
   class id).

The flood kernel has a compiled (Cython) and a pure-Python backend that
produce bit-identical results; the compiled one is used when available
unless ``CELLSEG_PURE_PY`` is set.
"""

from __future__ import annotations

import os

import numpy as np
from scipy import ndimage

from ..config import PostprocessConfig
from ..containers import InstanceResult, PredictionMaps
from ..kernels import derivative_kernels

if os.environ.get("CELLSEG_PURE_PY"):
    from .flood_py import flood
    FLOOD_BACKEND = "python"
else:
    try:
        from ._flood import flood  # type: ignore[attr-defined]
        FLOOD_BACKEND = "compiled"
    except ImportError:
        from .flood_py import flood
        FLOOD_BACKEND = "python"

__all__ = [
    "FLOOD_BACKEND", "flood", "instances_from_maps", "assign_types", "relabel",
    "instance_centroids", "predictions_to_instances", "energy_landscape",
]


def _normalize01(x: np.ndarray) -> np.ndarray:
    lo = x.min()
    span = x.max() - lo
    if span <= 0:
        return np.zeros_like(x)
    return (x - lo) / span


def energy_landscape(
    np_probs: np.ndarray, hv: np.ndarray, cfg: PostprocessConfig
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (foreground mask, energy map, marker labels)."""
    fg = np_probs[..., 1] > cfg.fg_threshold
    kh, kv = derivative_kernels()
    # Border pixels respond negatively in their own axis (the ramps ascend),
    # so the inverted min-max puts borders at ~1 and interiors near 0.
    gh = 1.0 - _normalize01(ndimage.correlate(hv[..., 0].astype(np.float64), kh, mode="constant"))
    gv = 1.0 - _normalize01(ndimage.correlate(hv[..., 1].astype(np.float64), kv, mode="constant"))
    energy = (1.0 - np.maximum(gh, gv)) * fg
    marker_mask = (energy > cfg.marker_threshold) & fg
    markers, num = ndimage.label(marker_mask)
    if num:
        counts = np.bincount(markers.ravel(), minlength=num + 1)
        small = np.flatnonzero(counts < cfg.min_size)
        if small.size:
            markers[np.isin(markers, small[small > 0])] = 0
    return fg, energy, markers.astype(np.int32)


def instances_from_maps(
    np_probs: np.ndarray, hv: np.ndarray, cfg: PostprocessConfig | None = None
) -> np.ndarray:
    """Dense maps -> consecutive-id instance map via marker-controlled watershed."""
    cfg = cfg or PostprocessConfig()
    fg, energy, markers = energy_landscape(np_probs, hv, cfg)
    if markers.max() == 0:
        return np.zeros(np_probs.shape[:2], dtype=np.int32)
    labels = np.ascontiguousarray(markers, dtype=np.int32)
    flood(
        np.ascontiguousarray(-energy, dtype=np.float64),
        labels,
        np.ascontiguousarray(fg, dtype=np.uint8),
    )
    return relabel(labels)


def relabel(inst_map: np.ndarray) -> np.ndarray:
    """Map the sorted original ids onto 1..K (identity if already consecutive)."""
    ids = np.unique(inst_map)
    ids = ids[ids > 0]
    if ids.size == 0:
        return inst_map.astype(np.int32, copy=True)
    lut = np.zeros(int(ids.max()) + 1, dtype=np.int32)
    lut[ids] = np.arange(1, ids.size + 1, dtype=np.int32)
    return lut[inst_map]


def assign_types(inst_map: np.ndarray, nc_probs: np.ndarray) -> dict[int, int]:
    """Per-instance type by summed probabilities, background channel excluded.

    Ties resolve to the lowest class id.
    """
    out: dict[int, int] = {}
    num_classes = nc_probs.shape[-1] - 1
    for inst_id in np.unique(inst_map):
        if inst_id == 0:
            continue
        mask = inst_map == inst_id
        scores = nc_probs[mask].sum(axis=0)[1:]
        out[int(inst_id)] = int(np.argmax(scores)) + 1 if num_classes else 1
    return out


def instance_centroids(inst_map: np.ndarray) -> dict[int, tuple[float, float]]:
    out: dict[int, tuple[float, float]] = {}
    for inst_id in np.unique(inst_map):
        if inst_id == 0:
            continue
        ys, xs = np.nonzero(inst_map == inst_id)
        out[int(inst_id)] = (float(xs.mean()), float(ys.mean()))
    return out


def predictions_to_instances(
    pred: PredictionMaps, cfg: PostprocessConfig | None = None
) -> InstanceResult:
    inst_map = instances_from_maps(pred.np_probs, pred.hv, cfg)
    return InstanceResult(
        inst_map=inst_map,
        types=assign_types(inst_map, pred.nc_probs),
        centroids=instance_centroids(inst_map),
    )
