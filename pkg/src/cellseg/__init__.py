"""Nuclei instance segmentation and classification.

A frozen ViT encoder augmented with a CNN spatial-prior adapter (injected
via deformable cross-attention), a tri-branch upsampling decoder, composite
losses, marker-controlled watershed postprocessing, panoptic-quality
evaluation, and a synthetic-data harness that makes the whole pipeline
testable on a desk.
"""

__version__ = "0.1.0"

from .config import RunConfig, paper_config, toy_config  # noqa: F401
from .containers import InstanceResult, PredictionMaps, TargetMaps  # noqa: F401
from .network import SegModel, build_model  # noqa: F401
