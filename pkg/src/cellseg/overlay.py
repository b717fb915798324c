"""Instance-boundary overlays for quick visual inspection."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .containers import InstanceResult

# distinct, readable on histology-like backgrounds
PALETTE = np.array([
    (230, 25, 75), (60, 180, 75), (0, 130, 200), (245, 130, 48),
    (145, 30, 180), (70, 240, 240), (240, 50, 230), (210, 245, 60),
], dtype=np.uint8)


def boundary_mask(inst_map: np.ndarray) -> np.ndarray:
    """Pixels whose 4-neighborhood crosses an instance border."""
    bd = np.zeros(inst_map.shape, dtype=bool)
    bd[:-1, :] |= inst_map[:-1, :] != inst_map[1:, :]
    bd[1:, :] |= inst_map[1:, :] != inst_map[:-1, :]
    bd[:, :-1] |= inst_map[:, :-1] != inst_map[:, 1:]
    bd[:, 1:] |= inst_map[:, 1:] != inst_map[:, :-1]
    return bd & (inst_map > 0)


def overlay_image(image: np.ndarray, result: InstanceResult) -> np.ndarray:
    """Draw class-colored instance boundaries onto an RGB image.

    ``image`` may be float in [0, 1] or uint8; returns uint8.
    """
    if image.dtype != np.uint8:
        canvas = (np.clip(image, 0, 1) * 255).astype(np.uint8).copy()
    else:
        canvas = image.copy()
    bd = boundary_mask(result.inst_map)
    max_id = int(result.inst_map.max())
    color_lut = np.zeros((max_id + 1, 3), dtype=np.uint8)
    for inst_id, cls in result.types.items():
        color_lut[inst_id] = PALETTE[(cls - 1) % len(PALETTE)]
    canvas[bd] = color_lut[result.inst_map[bd]]
    return canvas


def save_overlay(image: np.ndarray, result: InstanceResult, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(overlay_image(image, result)).save(path)
    return path
