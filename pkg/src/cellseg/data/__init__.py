"""Data pipeline: synthetic generation, manifests, splits, tiling."""

from .manifest import (  # noqa: F401
    Manifest, Sample, SampleRef, load_manifest, load_sample, save_manifest,
    split_by_patient,
)
from .synthetic import class_palette, dominant_class, generate_synthetic  # noqa: F401
from .tiling import (  # noqa: F401
    CANVAS, FRAME, ORIGINS, TILE, cut_tiles, degrade_halfres,
    merge_and_downsample, merge_tiles, resize_bilinear, upsample_and_tile,
    upsample_labels_nearest,
)
