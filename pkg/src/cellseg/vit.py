"""Plain pre-norm ViT encoder with group-wise execution.

The transformer is deliberately standard: patch embedding by a strided
linear projection, a class token, learnable 1-D position embeddings, and
pre-norm blocks

    z' = z + MHA(LN(z))
    z  = z' + MLP(LN(z'))

followed by a final LayerNorm after the last block.  Blocks are named
``block1..blockL`` and partitioned into ``num_interaction_blocks`` equal
groups so an adapter can interleave with the stream; running the groups
back-to-back is bitwise identical to the plain forward pass.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import EncoderConfig


def trunc_normal_(t: torch.Tensor, std: float = 0.02) -> None:
    nn.init.trunc_normal_(t, std=std, a=-2 * std, b=2 * std)


class SelfAttention(nn.Module):
    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        if dim % num_heads != 0:
            raise ValueError("dim must be divisible by num_heads")
        self.num_heads = num_heads
        self.scale = (dim // num_heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, n, d = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.num_heads, d // self.num_heads)
        q, k, v = qkv.permute(2, 0, 3, 1, 4).unbind(0)  # (b, heads, n, hd)
        attn = (q @ k.transpose(-2, -1)) * self.scale
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, d)
        return self.proj(out)


class Mlp(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.act(self.fc1(x)))


class EncoderBlock(nn.Module):
    def __init__(self, dim: int, num_heads: int, mlp_ratio: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = SelfAttention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, int(dim * mlp_ratio))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        x = x + self.mlp(self.norm2(x))
        return x


class PatchEmbed(nn.Module):
    """Linear projection of flattened PxPxC patches, as a strided conv."""

    def __init__(self, patch_size: int, in_channels: int, dim: int):
        super().__init__()
        self.patch_size = patch_size
        self.proj = nn.Conv2d(in_channels, dim, kernel_size=patch_size, stride=patch_size)

    def forward(self, images: torch.Tensor) -> tuple[torch.Tensor, tuple[int, int]]:
        b, c, h, w = images.shape
        if h % self.patch_size or w % self.patch_size:
            raise ValueError(
                f"image size {h}x{w} not divisible by patch size {self.patch_size}"
            )
        x = self.proj(images)  # (b, d, gh, gw)
        gh, gw = x.shape[-2:]
        return x.flatten(2).transpose(1, 2), (gh, gw)


class ViTEncoder(nn.Module):
    """ViT trunk exposing per-group execution for adapter interleaving."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.patch_embed = PatchEmbed(cfg.patch_size, cfg.in_channels, cfg.embed_dim)
        num_patches = cfg.grid_size * cfg.grid_size
        self.cls_token = nn.Parameter(torch.zeros(1, 1, cfg.embed_dim))
        self.pos_embed = nn.Parameter(torch.zeros(1, num_patches + 1, cfg.embed_dim))
        self._blocks: list[EncoderBlock] = []
        for i in range(cfg.depth):
            blk = EncoderBlock(cfg.embed_dim, cfg.num_heads, cfg.mlp_ratio)
            self.add_module(f"block{i + 1}", blk)
            self._blocks.append(blk)
        self.norm = nn.LayerNorm(cfg.embed_dim)
        self._init_weights()

    def _init_weights(self):
        trunc_normal_(self.cls_token)
        trunc_normal_(self.pos_embed)
        for m in self.modules():
            if isinstance(m, nn.Linear):
                trunc_normal_(m.weight)
                if m.bias is not None:
                    nn.init.zeros_(m.bias)
            elif isinstance(m, nn.Conv2d):
                trunc_normal_(m.weight)
                if m.bias is not None:
                    nn.init.zeros_(m.bias)

    # -- token plumbing ----------------------------------------------------

    @property
    def num_groups(self) -> int:
        return self.cfg.num_interaction_blocks

    def _pos_embed_for(self, gh: int, gw: int) -> torch.Tensor:
        """Position embedding, bilinearly resized if the token grid differs."""
        g = self.cfg.grid_size
        if (gh, gw) == (g, g):
            return self.pos_embed
        cls_pos = self.pos_embed[:, :1]
        grid_pos = self.pos_embed[:, 1:].reshape(1, g, g, -1).permute(0, 3, 1, 2)
        grid_pos = F.interpolate(grid_pos, size=(gh, gw), mode="bilinear", align_corners=False)
        grid_pos = grid_pos.permute(0, 2, 3, 1).reshape(1, gh * gw, -1)
        return torch.cat([cls_pos, grid_pos], dim=1)

    def prepare_tokens(self, images: torch.Tensor) -> tuple[torch.Tensor, tuple[int, int]]:
        """images (B,3,H,W) -> tokens (B, 1+gh*gw, D) with cls token first."""
        x, (gh, gw) = self.patch_embed(images)
        cls = self.cls_token.expand(x.shape[0], -1, -1)
        x = torch.cat([cls, x], dim=1)
        return x + self._pos_embed_for(gh, gw), (gh, gw)

    def group_forward(self, tokens: torch.Tensor, group_index: int) -> torch.Tensor:
        """Run one contiguous quarter of the blocks (0-based group index)."""
        if not 0 <= group_index < self.num_groups:
            raise IndexError(f"group_index {group_index} out of range")
        per = self.cfg.blocks_per_group
        for blk in self._blocks[group_index * per: (group_index + 1) * per]:
            tokens = blk(tokens)
        return tokens

    def forward_tokens(self, images: torch.Tensor) -> tuple[torch.Tensor, tuple[int, int]]:
        """Full pass: all blocks then the final LayerNorm."""
        tokens, grid = self.prepare_tokens(images)
        for blk in self._blocks:
            tokens = blk(tokens)
        return self.norm(tokens), grid


def grid_reference_points(gh: int, gw: int, dtype=torch.float32, device=None) -> torch.Tensor:
    """Cell-center reference points for an (gh, gw) token grid.

    Returns (gh*gw, 2) normalized (x, y) in [0, 1], row-major token order.
    """
    ys = (torch.arange(gh, dtype=dtype, device=device) + 0.5) / gh
    xs = (torch.arange(gw, dtype=dtype, device=device) + 0.5) / gw
    yy, xx = torch.meshgrid(ys, xs, indexing="ij")
    return torch.stack([xx, yy], dim=-1).reshape(-1, 2)
