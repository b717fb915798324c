"""Magnification-transfer tiling: 20x frames to 40x-scale tiles and back.

A 256x256 frame is bilinearly upsampled to 480x480 and cut into four
256x256 tiles with 32-pixel overlaps at fixed origins (0,0), (224,0),
(0,224), (224,224).  Per-tile predictions are merged by averaging the
overlaps on the 480 canvas, downsampled back to 256, and the probability
fields renormalized.  Tiling a single full-canvas prediction and merging it
reproduces that prediction exactly (the averages are of equal values).
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

from ..containers import PredictionMaps

FRAME = 256
CANVAS = 480
TILE = 256
ORIGINS = ((0, 0), (224, 0), (0, 224), (224, 224))  # (x, y)


def resize_bilinear(array: np.ndarray, size: int) -> np.ndarray:
    """(H, W, C) float -> (size, size, C), align_corners=False bilinear."""
    t = torch.from_numpy(np.ascontiguousarray(array, dtype=np.float32))
    t = t.permute(2, 0, 1).unsqueeze(0)
    out = F.interpolate(t, size=(size, size), mode="bilinear", align_corners=False)
    return out[0].permute(1, 2, 0).numpy()


def cut_tiles(canvas: np.ndarray) -> list[tuple[tuple[int, int], np.ndarray]]:
    """Cut the four fixed tiles out of a (CANVAS, CANVAS, C) array."""
    if canvas.shape[:2] != (CANVAS, CANVAS):
        raise ValueError(f"canvas must be {CANVAS}x{CANVAS}, got {canvas.shape[:2]}")
    return [
        ((x, y), canvas[y:y + TILE, x:x + TILE].copy()) for x, y in ORIGINS
    ]


def upsample_and_tile(image: np.ndarray) -> list[tuple[tuple[int, int], np.ndarray]]:
    """256x256 image -> four 256x256 tiles of the 480x480 upsampled canvas."""
    if image.shape[:2] != (FRAME, FRAME):
        raise ValueError(f"expected a {FRAME}x{FRAME} frame, got {image.shape[:2]}")
    return cut_tiles(resize_bilinear(image, CANVAS))


def merge_tiles(tiles: list[tuple[tuple[int, int], np.ndarray]]) -> np.ndarray:
    """Average per-tile maps back onto the 480x480 canvas."""
    channels = tiles[0][1].shape[-1]
    acc = np.zeros((CANVAS, CANVAS, channels), dtype=np.float64)
    cover = np.zeros((CANVAS, CANVAS, 1), dtype=np.float64)
    for (x, y), tile in tiles:
        if tile.shape[:2] != (TILE, TILE):
            raise ValueError(f"tile at {(x, y)} has shape {tile.shape[:2]}")
        acc[y:y + TILE, x:x + TILE] += tile
        cover[y:y + TILE, x:x + TILE] += 1.0
    if (cover == 0).any():
        raise ValueError("tiles do not cover the canvas")
    return (acc / cover).astype(np.float32)


def _renormalize(probs: np.ndarray) -> np.ndarray:
    s = probs.sum(axis=-1, keepdims=True)
    s[s <= 0] = 1.0
    return probs / s


def merge_and_downsample(
    tile_preds: list[tuple[tuple[int, int], PredictionMaps]], out_size: int = FRAME
) -> PredictionMaps:
    """Merge four tile predictions into one frame-resolution prediction."""
    merged_np = merge_tiles([(o, p.np_probs) for o, p in tile_preds])
    merged_hv = merge_tiles([(o, p.hv) for o, p in tile_preds])
    merged_nc = merge_tiles([(o, p.nc_probs) for o, p in tile_preds])
    tissue = np.mean([p.tissue_logits for _, p in tile_preds], axis=0)
    return PredictionMaps(
        np_probs=_renormalize(resize_bilinear(merged_np, out_size)),
        hv=np.clip(resize_bilinear(merged_hv, out_size), -1.0, 1.0),
        nc_probs=_renormalize(resize_bilinear(merged_nc, out_size)),
        tissue_logits=tissue.astype(np.float32),
    )


def degrade_halfres(image: np.ndarray) -> np.ndarray:
    """Magnification-shift corruption: bilinear 2x downsample then back up."""
    h = image.shape[0]
    return resize_bilinear(resize_bilinear(image, h // 2), h)


def upsample_labels_nearest(inst_map: np.ndarray, size: int) -> np.ndarray:
    """Nearest-neighbor label upsampling (center-aligned sampling grid)."""
    h, w = inst_map.shape
    ys = np.minimum((np.arange(size) + 0.5) * h / size, h - 1).astype(np.int64)
    xs = np.minimum((np.arange(size) + 0.5) * w / size, w - 1).astype(np.int64)
    return inst_map[np.ix_(ys, xs)]
