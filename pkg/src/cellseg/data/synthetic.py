"""Synthetic nuclei scenes with exact instance ground truth.

Each image is a textured background with 4-12 non-overlapping ellipse
nuclei.  Every cell class has a distinct chroma signature so type
classification is learnable from color; the scene's tissue class is derived
from the dominant nucleus class (modulo the tissue-class count, since the
two knobs are independent).  Generation is fully driven by one seed:
re-running with the same arguments reproduces byte-identical files.
"""

from __future__ import annotations

import colorsys
import logging
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from ..containers import InstanceResult, save_instance_result
from ..utils import write_json

log = logging.getLogger(__name__)

_BACKGROUND_RGB = np.array([0.85, 0.78, 0.83])
_PLACEMENT_RETRIES = 200


def class_palette(num_classes: int) -> np.ndarray:
    """Stable, well-separated RGB color per cell class (rows 0..C-1)."""
    colors = [
        colorsys.hsv_to_rgb((c / num_classes + 0.58) % 1.0, 0.60, 0.52)
        for c in range(num_classes)
    ]
    return np.array(colors)


def _render_scene(
    rng: np.random.Generator,
    image_size: int,
    num_cell_classes: int,
    min_nuclei: int = 4,
    max_nuclei: int = 12,
) -> tuple[np.ndarray, np.ndarray, dict[int, int]]:
    """Return (image float [0,1], inst_map int32, types)."""
    h = w = image_size
    palette = class_palette(num_cell_classes)

    # Textured background: low-frequency color wash plus fine grain.
    image = np.empty((h, w, 3), dtype=np.float64)
    for ch in range(3):
        wash = gaussian_filter(rng.normal(0.0, 1.0, (h, w)), sigma=image_size / 16)
        image[..., ch] = _BACKGROUND_RGB[ch] + 0.04 * wash
    image += rng.normal(0.0, 0.015, (h, w, 3))

    inst_map = np.zeros((h, w), dtype=np.int32)
    types: dict[int, int] = {}
    yy, xx = np.mgrid[0:h, 0:w]

    r_lo = max(3.0, image_size / 20)
    r_hi = max(r_lo + 1.5, image_size / 9)
    target = int(rng.integers(min_nuclei, max_nuclei + 1))
    placed: list[tuple[float, float, float]] = []  # (cy, cx, outer radius)
    next_id = 1
    for _ in range(target):
        ok = False
        for _attempt in range(_PLACEMENT_RETRIES):
            a = rng.uniform(r_lo, r_hi)
            b = rng.uniform(r_lo, a)
            theta = rng.uniform(0.0, np.pi)
            r_out = a
            cy = rng.uniform(r_out + 1, h - r_out - 1)
            cx = rng.uniform(r_out + 1, w - r_out - 1)
            if all((cy - py) ** 2 + (cx - px) ** 2 > (r_out + pr + 1.0) ** 2
                   for py, px, pr in placed):
                ok = True
                break
        if not ok:
            log.warning("placement budget exhausted: %d of %d nuclei placed",
                        len(placed), target)
            break
        placed.append((cy, cx, r_out))
        ct, st = np.cos(theta), np.sin(theta)
        u = ((xx - cx) * ct + (yy - cy) * st) / a
        v = (-(xx - cx) * st + (yy - cy) * ct) / b
        rr = u * u + v * v
        mask = rr <= 1.0
        cls = int(rng.integers(1, num_cell_classes + 1))
        inst_map[mask] = next_id
        types[next_id] = cls
        shade = 0.72 + 0.28 * (1.0 - np.sqrt(np.clip(rr[mask], 0, 1)))  # darker rim
        color = palette[cls - 1] * (1.0 + rng.normal(0.0, 0.03, 3))
        image[mask] = color[None, :] * shade[:, None]
        image[mask] += rng.normal(0.0, 0.02, (int(mask.sum()), 3))
        next_id += 1

    return np.clip(image, 0.0, 1.0), inst_map, types


def dominant_class(types: dict[int, int]) -> int:
    """Most frequent cell class; ties resolve to the lowest class id."""
    if not types:
        return 1
    counts = np.bincount(list(types.values()))
    return int(np.argmax(counts))


def generate_synthetic(
    out_dir: str | Path,
    count: int = 200,
    image_size: int = 64,
    num_cell_classes: int = 3,
    num_tissue_classes: int = 2,
    seed: int = 0,
    num_patients: int | None = None,
    min_nuclei: int = 4,
    max_nuclei: int = 12,
) -> Path:
    """Write a dataset under ``out_dir`` and return the manifest path.

    Layout: ``images/{id}.png`` (8-bit RGB), ``labels/{id}.png`` (16-bit
    instance map) with ``labels/{id}.json`` sidecars, ``manifest.json``.
    """
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "labels").mkdir(parents=True, exist_ok=True)
    if num_patients is None:
        num_patients = min(count, max(5, count // 20))
    per_patient = -(-count // num_patients)  # ceil
    rng = np.random.default_rng(seed)
    samples = []
    for k in range(count):
        image, inst_map, types = _render_scene(
            rng, image_size, num_cell_classes, min_nuclei, max_nuclei
        )
        tissue = dominant_class(types) % num_tissue_classes
        sample_id = f"img{k:04d}"
        Image.fromarray((image * 255).round().astype(np.uint8)).save(
            out / "images" / f"{sample_id}.png"
        )
        ys_xs = {
            i: (float(np.nonzero(inst_map == i)[1].mean()),
                float(np.nonzero(inst_map == i)[0].mean()))
            for i in types
        }
        save_instance_result(
            InstanceResult(inst_map=inst_map, types=types, centroids=ys_xs),
            out / "labels" / sample_id,
        )
        samples.append({
            "id": sample_id,
            "image": f"images/{sample_id}.png",
            "label": f"labels/{sample_id}",
            "tissue_class": int(tissue),
            "patient_id": f"patient{k // per_patient:03d}",
        })
    manifest = {
        "seed": seed,
        "image_size": image_size,
        "magnification": "20x",
        "num_cell_classes": num_cell_classes,
        "num_tissue_classes": num_tissue_classes,
        "class_names": [f"cell_type_{c}" for c in range(1, num_cell_classes + 1)],
        "samples": samples,
    }
    manifest_path = out / "manifest.json"
    write_json(manifest, manifest_path)
    return manifest_path
