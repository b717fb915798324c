"""CNN spatial-prior adapter with deformable-attention interaction.

A small convolutional pyramid (the spatial prior module) runs alongside the
frozen ViT.  Before each encoder quarter an injector adds spatial detail
into the patch tokens through deformable cross-attention, gated by a
per-channel vector ``gamma`` initialized to zero so the encoder stream is
untouched at init.  After each quarter an extractor pulls the updated ViT
context back into the spatial tokens (cross-attention, then a residual
FFN).  The final spatial tokens become a 1/4, 1/8, 1/16 feature pyramid;
the 1/2 level is synthesized from the 1/4 level with a transposed conv.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .config import AdapterConfig
from .deform import DeformableAttention
from .vit import ViTEncoder, grid_reference_points


class ConvUnit(nn.Module):
    """3x3 conv + BN + ReLU."""

    def __init__(self, in_ch: int, out_ch: int, stride: int = 1):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False)
        self.bn = nn.BatchNorm2d(out_ch)
        self.relu = nn.ReLU(inplace=True)

    def forward(self, x):
        return self.relu(self.bn(self.conv(x)))


class SPMBlock(nn.Module):
    """Stack of 3x3 conv units; only the last one is strided."""

    def __init__(self, in_ch: int, out_ch: int, num_convs: int):
        super().__init__()
        self._convs: list[ConvUnit] = []
        for j in range(num_convs):
            unit = ConvUnit(
                in_ch if j == 0 else out_ch,
                out_ch,
                stride=2 if j == num_convs - 1 else 1,
            )
            self.add_module(f"conv{j + 1}", unit)
            self._convs.append(unit)

    def forward(self, x):
        for unit in self._convs:
            x = unit(x)
        return x


class SpatialPriorModule(nn.Module):
    """Four conv blocks at cumulative scales 1/2, 1/4, 1/8, 1/16.

    The first block has four conv layers, the rest two; the last layer of
    each block is the strided one.  The last three block outputs are mapped
    to the token width by 1x1 convolutions and returned as the (1/4, 1/8,
    1/16) value pyramid.
    """

    def __init__(self, in_channels: int, channels: tuple[int, int, int, int], dim: int):
        super().__init__()
        c1, c2, c3, c4 = channels
        self.block1 = SPMBlock(in_channels, c1, num_convs=4)
        self.block2 = SPMBlock(c1, c2, num_convs=2)
        self.block3 = SPMBlock(c2, c3, num_convs=2)
        self.block4 = SPMBlock(c3, c4, num_convs=2)
        self.proj2 = nn.Conv2d(c2, dim, 1)
        self.proj3 = nn.Conv2d(c3, dim, 1)
        self.proj4 = nn.Conv2d(c4, dim, 1)

    def forward(self, images: torch.Tensor) -> list[torch.Tensor]:
        h, w = images.shape[-2:]
        if h < 16 or w < 16:
            raise ValueError(f"image {h}x{w} too small for four stride-2 reductions")
        x = self.block1(images)
        f2 = self.block2(x)
        f3 = self.block3(f2)
        f4 = self.block4(f3)
        return [self.proj2(f2), self.proj3(f3), self.proj4(f4)]


class Injector(nn.Module):
    """Adds spatial detail to ViT tokens, gated by a zero-initialized gamma."""

    def __init__(self, dim: int, num_heads: int, num_points: int, num_levels: int = 3):
        super().__init__()
        self.query_norm = nn.LayerNorm(dim)
        self.value_norm = nn.LayerNorm(dim)
        self.attn = DeformableAttention(dim, num_heads, num_points, num_levels)
        self.gamma = nn.Parameter(torch.zeros(dim))

    def forward(self, grid_tokens, spatial_tokens, spatial_shapes, reference_points):
        attn = self.attn(
            self.query_norm(grid_tokens), self.value_norm(spatial_tokens),
            spatial_shapes, reference_points,
        )
        return grid_tokens + self.gamma * attn


class Extractor(nn.Module):
    """Pulls updated ViT context back into the spatial tokens."""

    def __init__(self, dim: int, num_heads: int, num_points: int, ffn_ratio: float):
        super().__init__()
        self.query_norm = nn.LayerNorm(dim)
        self.value_norm = nn.LayerNorm(dim)
        self.attn = DeformableAttention(dim, num_heads, num_points, num_levels=1)
        self.ffn_norm = nn.LayerNorm(dim)
        hidden = max(1, int(dim * ffn_ratio))
        self.ffn = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

    def forward(self, spatial_tokens, grid_tokens, grid_shape, reference_points):
        attn = self.attn(
            self.query_norm(spatial_tokens), self.value_norm(grid_tokens),
            [grid_shape], reference_points,
        )
        spatial_tokens = spatial_tokens + attn
        return spatial_tokens + self.ffn(self.ffn_norm(spatial_tokens))


class SpatialAdapter(nn.Module):
    """SPM + per-quarter injector/extractor pairs + pyramid assembly."""

    def __init__(self, dim: int, in_channels: int, cfg: AdapterConfig, num_blocks: int):
        super().__init__()
        self.num_blocks = num_blocks
        self.spm = SpatialPriorModule(in_channels, cfg.spm_channels, dim)
        self._injectors: list[Injector] = []
        self._extractors: list[Extractor] = []
        for i in range(num_blocks):
            inj = Injector(dim, cfg.attn_heads, cfg.attn_points, num_levels=3)
            ext = Extractor(dim, cfg.attn_heads, cfg.attn_points, cfg.ffn_ratio)
            self.add_module(f"injector{i + 1}", inj)
            self.add_module(f"extractor{i + 1}", ext)
            self._injectors.append(inj)
            self._extractors.append(ext)
        self.up = nn.ConvTranspose2d(dim, dim, kernel_size=2, stride=2)

    @staticmethod
    def flatten_levels(level_maps: list[torch.Tensor]) -> tuple[torch.Tensor, list[tuple[int, int]]]:
        """(B,D,h,w) maps -> concatenated row-major tokens + shape list."""
        shapes = [(m.shape[-2], m.shape[-1]) for m in level_maps]
        tokens = torch.cat([m.flatten(2).transpose(1, 2) for m in level_maps], dim=1)
        return tokens, shapes

    def interaction_forward(
        self, encoder: ViTEncoder, images: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor, list[tuple[int, int]], tuple[int, int]]:
        """Interleave inject / encoder-quarter / extract over the whole trunk.

        Returns (tokens, spatial_tokens, spatial_shapes, grid): tokens are the
        final ViT tokens after the closing LayerNorm, class token first; the
        class token never enters the adapter.
        """
        if encoder.num_groups != self.num_blocks:
            raise ValueError(
                f"adapter has {self.num_blocks} interaction blocks but encoder "
                f"has {encoder.num_groups} groups"
            )
        tokens, (gh, gw) = encoder.prepare_tokens(images)
        spatial, spatial_shapes = self.flatten_levels(self.spm(images))
        b = tokens.shape[0]
        ref_vit = grid_reference_points(gh, gw, dtype=tokens.dtype, device=tokens.device)
        ref_vit = ref_vit.unsqueeze(0).expand(b, -1, -1)
        ref_sp = torch.cat([
            grid_reference_points(h, w, dtype=tokens.dtype, device=tokens.device)
            for h, w in spatial_shapes
        ])
        ref_sp = ref_sp.unsqueeze(0).expand(b, -1, -1)
        for i in range(self.num_blocks):
            cls, grid = tokens[:, :1], tokens[:, 1:]
            grid = self._injectors[i](grid, spatial, spatial_shapes, ref_vit)
            tokens = torch.cat([cls, grid], dim=1)
            tokens = encoder.group_forward(tokens, i)
            spatial = self._extractors[i](spatial, tokens[:, 1:], (gh, gw), ref_sp)
        return encoder.norm(tokens), spatial, spatial_shapes, (gh, gw)

    def build_pyramid(
        self, spatial: torch.Tensor, spatial_shapes: list[tuple[int, int]]
    ) -> dict[int, torch.Tensor]:
        """Final spatial tokens -> {2: 1/2, 4: 1/4, 8: 1/8, 16: 1/16} maps."""
        b = spatial.shape[0]
        sizes = [h * w for h, w in spatial_shapes]
        parts = spatial.split(sizes, dim=1)
        maps = [
            p.transpose(1, 2).reshape(b, -1, h, w)
            for p, (h, w) in zip(parts, spatial_shapes)
        ]
        h2, h3, h4 = maps
        return {2: self.up(h2), 4: h2, 8: h3, 16: h4}
