"""Configuration dataclasses and the two built-in profiles.

``RunConfig`` is the single umbrella object the CLI and trainer consume.
Profiles:

* ``toy``    -- desk-scale settings: 64x64 images, small ViT, 3 cell classes,
                2 tissue classes, 20 epochs.  Everything in the test suite
                runs on this profile.
* ``paper``  -- full-scale settings (256x256 tiles, ViT-Base-sized encoder).
                Provided for completeness; training it is outside the desk
                budget.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .utils import read_json

VARIANTS = ("adapter", "decoder_only", "full_finetune")


@dataclass
class EncoderConfig:
    image_size: int = 256
    patch_size: int = 16
    in_channels: int = 3
    embed_dim: int = 768
    depth: int = 12
    num_heads: int = 12
    mlp_ratio: float = 4.0
    num_interaction_blocks: int = 4

    def __post_init__(self):
        if self.image_size % self.patch_size != 0:
            raise ValueError(
                f"image_size {self.image_size} not divisible by patch_size {self.patch_size}"
            )
        if self.embed_dim % self.num_heads != 0:
            raise ValueError("embed_dim must be divisible by num_heads")
        if self.depth % self.num_interaction_blocks != 0:
            raise ValueError(
                f"depth {self.depth} not divisible by num_interaction_blocks "
                f"{self.num_interaction_blocks}"
            )
        for name in ("image_size", "patch_size", "embed_dim", "depth", "num_heads",
                     "num_interaction_blocks"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def grid_size(self) -> int:
        return self.image_size // self.patch_size

    @property
    def blocks_per_group(self) -> int:
        return self.depth // self.num_interaction_blocks


@dataclass
class AdapterConfig:
    spm_channels: tuple[int, int, int, int] = (64, 128, 256, 256)
    attn_heads: int = 4
    attn_points: int = 4
    ffn_ratio: float = 0.25

    def __post_init__(self):
        if len(self.spm_channels) != 4:
            raise ValueError("spm_channels must list one width per conv block (4)")
        if min(self.spm_channels) <= 0 or self.attn_heads <= 0 or self.attn_points <= 0:
            raise ValueError("adapter widths/heads/points must be positive")


@dataclass
class DecoderConfig:
    # Output widths of the four upsampling stages (1/8, 1/4, 1/2, 1/1).
    stage_channels: tuple[int, int, int, int] = (256, 128, 64, 32)
    # Widths the skip maps are adjusted to before concatenation, one per stage.
    skip_channels: tuple[int, int, int, int] = (128, 64, 32, 16)

    def __post_init__(self):
        if len(self.stage_channels) != 4 or len(self.skip_channels) != 4:
            raise ValueError("decoder stage/skip channel tuples must have length 4")
        if min(self.stage_channels) <= 0 or min(self.skip_channels) <= 0:
            raise ValueError("decoder channel widths must be positive")


@dataclass
class LossWeights:
    np_dice: float = 1.0
    np_ft: float = 1.0
    hv_mse: float = 1.0
    hv_msge: float = 1.0
    nc_dice: float = 1.0
    nc_ft: float = 1.0
    nc_ce: float = 1.0
    tc_ce: float = 1.0


@dataclass
class PostprocessConfig:
    fg_threshold: float = 0.5
    marker_threshold: float = 0.4
    min_size: int = 10


@dataclass
class TrainConfig:
    lr: float = 3e-4
    lr_decay: float = 0.85          # multiplicative, applied per epoch
    weight_decay: float = 0.01
    batch_size: int = 4
    epochs: int = 50
    split_ratios: tuple[float, float, float] = (0.64, 0.16, 0.20)
    augment: bool = True

    def __post_init__(self):
        if self.lr <= 0 or not (0 < self.lr_decay <= 1) or self.batch_size <= 0:
            raise ValueError("invalid optimizer settings")
        if self.epochs <= 0:
            raise ValueError("epochs must be positive")
        if abs(sum(self.split_ratios) - 1.0) > 1e-9:
            raise ValueError("split_ratios must sum to 1")


@dataclass
class RunConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    adapter: AdapterConfig = field(default_factory=AdapterConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    postprocess: PostprocessConfig = field(default_factory=PostprocessConfig)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    num_cell_classes: int = 5
    num_tissue_classes: int = 19
    variant: str = "adapter"
    seed: int = 0

    def __post_init__(self):
        if self.num_cell_classes <= 0 or self.num_tissue_classes <= 0:
            raise ValueError("class counts must be positive")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        kwargs: dict[str, Any] = {}
        sub = {
            "encoder": EncoderConfig,
            "adapter": AdapterConfig,
            "decoder": DecoderConfig,
            "train": TrainConfig,
            "postprocess": PostprocessConfig,
            "loss_weights": LossWeights,
        }
        for key, klass in sub.items():
            if key in d:
                val = d.pop(key)
                if isinstance(val, dict):
                    val = {k: tuple(v) if isinstance(v, list) else v for k, v in val.items()}
                    val = klass(**val)
                kwargs[key] = val
        kwargs.update(d)
        return cls(**kwargs)

    @classmethod
    def from_json(cls, path: str | Path) -> "RunConfig":
        return cls.from_dict(read_json(path))


def toy_config(seed: int = 0) -> RunConfig:
    """Desk-scale profile used throughout the test suite."""
    return RunConfig(
        encoder=EncoderConfig(
            image_size=64, patch_size=16, embed_dim=64, depth=8, num_heads=4,
            num_interaction_blocks=4,
        ),
        adapter=AdapterConfig(spm_channels=(16, 32, 64, 64), attn_heads=2, attn_points=2),
        decoder=DecoderConfig(stage_channels=(64, 48, 32, 24), skip_channels=(32, 24, 16, 12)),
        train=TrainConfig(epochs=20),
        postprocess=PostprocessConfig(min_size=3),
        num_cell_classes=3,
        num_tissue_classes=2,
        seed=seed,
    )


def paper_config(seed: int = 0) -> RunConfig:
    """Full-scale profile (256x256 tiles, ViT-Base encoder)."""
    return RunConfig(seed=seed)


PROFILES = {"toy": toy_config, "paper": paper_config}
