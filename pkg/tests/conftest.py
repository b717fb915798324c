"""Shared fixtures: deterministic RNGs, small configs, a tiny dataset."""

from __future__ import annotations

import dataclasses

import numpy as np
import pytest
import torch

from cellseg.config import (
    AdapterConfig, DecoderConfig, EncoderConfig, PostprocessConfig,
    RunConfig, TrainConfig, toy_config,
)
from cellseg.data.synthetic import generate_synthetic


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)


@pytest.fixture()
def toy_cfg() -> RunConfig:
    return toy_config(seed=0)


def tiny_config(**overrides) -> RunConfig:
    """Smallest config that still exercises every architectural path.

    32x32 inputs, a 4-block ViT with one block per interaction group, and
    narrow decoder stages -- cheap enough for finite-difference probing.
    """
    cfg = RunConfig(
        encoder=EncoderConfig(
            image_size=32, patch_size=16, embed_dim=16, depth=4, num_heads=2,
            num_interaction_blocks=4,
        ),
        adapter=AdapterConfig(spm_channels=(4, 8, 8, 8), attn_heads=2, attn_points=2),
        decoder=DecoderConfig(stage_channels=(12, 10, 8, 6), skip_channels=(8, 6, 4, 4)),
        train=TrainConfig(epochs=2),
        postprocess=PostprocessConfig(min_size=3),
        num_cell_classes=3,
        num_tissue_classes=2,
        seed=0,
    )
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


@pytest.fixture()
def tiny_cfg() -> RunConfig:
    return tiny_config()


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory) -> str:
    """12 synthetic 64x64 images (3 cell classes, 2 tissue classes)."""
    root = tmp_path_factory.mktemp("synth_small")
    return str(generate_synthetic(
        root, count=12, image_size=64, num_cell_classes=3, num_tissue_classes=2, seed=3,
    ))
