"""Typed containers passed between model, postprocessor and metrics.

All dense fields are numpy arrays in (H, W, C) layout; instance maps are
int32 with background 0 and positive instance ids.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image


@dataclass
class PredictionMaps:
    """Per-image dense model outputs.

    np_probs:      (H, W, 2) softmax probabilities, channel 1 = nucleus.
    hv:            (H, W, 2) horizontal/vertical offset maps in [-1, 1].
    nc_probs:      (H, W, C+1) per-type softmax probabilities, channel 0 = background.
    tissue_logits: (T,) raw tissue-class scores.
    """

    np_probs: np.ndarray
    hv: np.ndarray
    nc_probs: np.ndarray
    tissue_logits: np.ndarray

    def validate(self) -> "PredictionMaps":
        h, w, c = self.np_probs.shape
        if c != 2:
            raise ValueError(f"np_probs must have 2 channels, got {c}")
        if self.hv.shape != (h, w, 2):
            raise ValueError(f"hv shape {self.hv.shape} != {(h, w, 2)}")
        if self.nc_probs.shape[:2] != (h, w):
            raise ValueError("nc_probs spatial shape mismatch")
        if self.tissue_logits.ndim != 1:
            raise ValueError("tissue_logits must be a vector")
        for name, arr in (("np_probs", self.np_probs), ("nc_probs", self.nc_probs)):
            s = arr.sum(axis=-1)
            if not np.allclose(s, 1.0, atol=1e-4):
                raise ValueError(f"{name} rows do not sum to 1")
        if self.hv.min() < -1.0 - 1e-6 or self.hv.max() > 1.0 + 1e-6:
            raise ValueError("hv values outside [-1, 1]")
        return self


@dataclass
class TargetMaps:
    """Per-image training targets.

    np_target: (H, W) {0,1} nucleus-vs-background.
    hv_target: (H, W, 2) horizontal/vertical offsets in [-1, 1], background 0.
    nc_target: (H, W) int type ids, 0 = background.
    tissue_class: scalar int.
    """

    np_target: np.ndarray
    hv_target: np.ndarray
    nc_target: np.ndarray
    tissue_class: int


@dataclass
class InstanceResult:
    """Final per-image instance segmentation.

    inst_map:  (H, W) int32, 0 background, ids 1..K consecutive.
    types:     id -> cell class (1..C).
    centroids: id -> (x, y) in pixel coordinates.
    """

    inst_map: np.ndarray
    types: dict[int, int] = field(default_factory=dict)
    centroids: dict[int, tuple[float, float]] = field(default_factory=dict)

    def validate(self) -> "InstanceResult":
        ids = np.unique(self.inst_map)
        ids = ids[ids > 0]
        expected = np.arange(1, len(ids) + 1)
        if not np.array_equal(ids, expected):
            raise ValueError(f"instance ids not consecutive from 1: {ids.tolist()[:8]}...")
        for i in ids.tolist():
            if i not in self.types:
                raise ValueError(f"instance {i} missing a type entry")
        return self

    @property
    def num_instances(self) -> int:
        return int(self.inst_map.max())


def save_instance_result(result: InstanceResult, path_base: str | Path) -> tuple[Path, Path]:
    """Write ``<base>.png`` (16-bit instance map) and ``<base>.json`` sidecar."""
    base = Path(path_base)
    base.parent.mkdir(parents=True, exist_ok=True)
    if result.inst_map.max() > np.iinfo(np.uint16).max:
        raise ValueError("instance ids exceed 16-bit PNG range")
    png_path = base.with_suffix(".png")
    json_path = base.with_suffix(".json")
    Image.fromarray(result.inst_map.astype(np.uint16)).save(png_path)
    sidecar = {
        "types": {str(k): int(v) for k, v in sorted(result.types.items())},
        "centroids": {
            str(k): [float(v[0]), float(v[1])] for k, v in sorted(result.centroids.items())
        },
    }
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump(sidecar, f, indent=2)
        f.write("\n")
    return png_path, json_path


def load_instance_result(path_base: str | Path) -> InstanceResult:
    base = Path(path_base)
    inst = np.asarray(Image.open(base.with_suffix(".png")), dtype=np.int32)
    with open(base.with_suffix(".json"), "r", encoding="utf-8") as f:
        sidecar = json.load(f)
    types = {int(k): int(v) for k, v in sidecar.get("types", {}).items()}
    centroids = {
        int(k): (float(v[0]), float(v[1])) for k, v in sidecar.get("centroids", {}).items()
    }
    return InstanceResult(inst_map=inst, types=types, centroids=centroids)
