"""Tri-branch upsampling decoder with a tissue-classification head.

Three structurally identical but independent branches decode the 1/16
bottleneck back to full resolution through four 2x stages:

* ``np`` -- nucleus vs background, 2-channel softmax;
* ``hv`` -- horizontal/vertical offset regression, 2-channel tanh;
* ``nc`` -- nucleus type, (C+1)-channel softmax (channel 0 background).

Each stage is a 2x transposed conv, concatenation of the dimension-adjusted
skip(s), then two 3x3 conv+BN+ReLU units.  Five skips are live: the 1/16
pyramid level enters the first stage through a 2x deconv next to the 1/8
level's 1x1 projection; the 1/4 and 1/2 levels enter the middle stages; a
conv+BN+ReLU on the raw image feeds the full-resolution stage.  The skip
projections are shared by the three branches.  Tissue classification is a
linear head on the class token.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .adapter import ConvUnit
from .config import DecoderConfig


class DeconvUnit(nn.Module):
    """2x transposed conv + BN + ReLU."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.up = nn.ConvTranspose2d(in_ch, out_ch, kernel_size=2, stride=2)
        self.bn = nn.BatchNorm2d(out_ch)
        self.relu = nn.ReLU(inplace=True)

    def forward(self, x):
        return self.relu(self.bn(self.up(x)))


class DecoderStage(nn.Module):
    def __init__(self, in_ch: int, skip_ch: int, out_ch: int):
        super().__init__()
        self.up = nn.ConvTranspose2d(in_ch, in_ch, kernel_size=2, stride=2)
        self.conv1 = ConvUnit(in_ch + skip_ch, out_ch)
        self.conv2 = ConvUnit(out_ch, out_ch)

    def forward(self, x: torch.Tensor, skips: list[torch.Tensor]) -> torch.Tensor:
        x = self.up(x)
        x = torch.cat([x] + skips, dim=1)
        return self.conv2(self.conv1(x))


class DecoderBranch(nn.Module):
    def __init__(self, dim: int, cfg: DecoderConfig, out_channels: int):
        super().__init__()
        c1, c2, c3, c4 = cfg.stage_channels
        k1, k2, k3, k4 = cfg.skip_channels
        self.stage1 = DecoderStage(dim, 2 * k1, c1)   # 1/16 -> 1/8, two skips
        self.stage2 = DecoderStage(c1, k2, c2)        # 1/8 -> 1/4
        self.stage3 = DecoderStage(c2, k3, c3)        # 1/4 -> 1/2
        self.stage4 = DecoderStage(c3, k4, c4)        # 1/2 -> 1/1
        self.head = nn.Conv2d(c4, out_channels, kernel_size=1)

    def forward(self, bottleneck: torch.Tensor, skips: dict[str, torch.Tensor]) -> torch.Tensor:
        x = self.stage1(bottleneck, [skips["h4_up"], skips["h3"]])
        x = self.stage2(x, [skips["h2"]])
        x = self.stage3(x, [skips["h1"]])
        x = self.stage4(x, [skips["image"]])
        return self.head(x)


class TokenPyramid(nn.Module):
    """Pyramid for adapter-free variants, built from per-quarter token grids.

    Grid tokens after each encoder quarter are reshaped to 1/16 maps and
    upsampled by trainable deconv stacks to 1/2, 1/4 and 1/8; the last
    quarter feeds the 1/16 level through a 1x1 conv.
    """

    def __init__(self, dim: int):
        super().__init__()
        self.up_half = nn.Sequential(DeconvUnit(dim, dim), DeconvUnit(dim, dim), DeconvUnit(dim, dim))
        self.up_quarter = nn.Sequential(DeconvUnit(dim, dim), DeconvUnit(dim, dim))
        self.up_eighth = DeconvUnit(dim, dim)
        self.proj = nn.Conv2d(dim, dim, kernel_size=1)

    def forward(self, group_grids: list[torch.Tensor]) -> dict[int, torch.Tensor]:
        g1, g2, g3, g4 = group_grids
        return {2: self.up_half(g1), 4: self.up_quarter(g2), 8: self.up_eighth(g3),
                16: self.proj(g4)}


class TriBranchDecoder(nn.Module):
    def __init__(
        self,
        dim: int,
        in_channels: int,
        cfg: DecoderConfig,
        num_cell_classes: int,
        num_tissue_classes: int,
        token_pyramid: bool = False,
    ):
        super().__init__()
        k1, k2, k3, k4 = cfg.skip_channels
        if token_pyramid:
            self.pyramid = TokenPyramid(dim)
        # shared skip projections
        self.adjust4 = nn.ConvTranspose2d(dim, k1, kernel_size=2, stride=2)
        self.adjust3 = nn.Conv2d(dim, k1, kernel_size=1)
        self.adjust2 = nn.Conv2d(dim, k2, kernel_size=1)
        self.adjust1 = nn.Conv2d(dim, k3, kernel_size=1)
        self.image_skip = ConvUnit(in_channels, k4)
        # branches (attribute names define the parameter namespace)
        self.add_module("np", DecoderBranch(dim, cfg, 2))
        self.add_module("hv", DecoderBranch(dim, cfg, 2))
        self.add_module("nc", DecoderBranch(dim, cfg, num_cell_classes + 1))
        self.tissue_head = nn.Linear(dim, num_tissue_classes)

    def forward(
        self,
        bottleneck: torch.Tensor,
        pyramid: dict[int, torch.Tensor],
        images: torch.Tensor,
        cls_token: torch.Tensor,
    ) -> dict[str, torch.Tensor]:
        skips = {
            "h4_up": self.adjust4(pyramid[16]),
            "h3": self.adjust3(pyramid[8]),
            "h2": self.adjust2(pyramid[4]),
            "h1": self.adjust1(pyramid[2]),
            "image": self.image_skip(images),
        }
        np_branch = getattr(self, "np")
        hv_branch = getattr(self, "hv")
        nc_branch = getattr(self, "nc")
        return {
            "np_probs": torch.softmax(np_branch(bottleneck, skips), dim=1),
            "hv": torch.tanh(hv_branch(bottleneck, skips)),
            "nc_probs": torch.softmax(nc_branch(bottleneck, skips), dim=1),
            "tissue_logits": self.tissue_head(cls_token),
        }
