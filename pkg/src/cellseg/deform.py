"""Multi-scale deformable cross-attention.

Each query predicts, per head and per value level, a small set of sampling
offsets around its reference point plus matching attention weights
(softmax-normalized over levels x points per head).  Values are bilinearly
sampled at the offset locations -- out-of-bounds taps contribute zeros --
then combined by the weights and projected.

Locations are normalized (x, y) in [0, 1] over each level's grid; a
normalized location maps to pixel coordinate ``loc * size - 0.5`` so that
cell centers sit at integer pixel coordinates (the align_corners=False
convention).  Offsets are predicted in units of one grid cell of the level
being sampled.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


def deform_attn_core(
    value: torch.Tensor,
    value_shapes: list[tuple[int, int]],
    locations: torch.Tensor,
    weights: torch.Tensor,
    num_heads: int,
) -> torch.Tensor:
    """Weighted bilinear sampling over a token pyramid.

    Args:
        value: (B, V, D) projected value tokens, levels concatenated in
            ``value_shapes`` order, each level flattened row-major.
        value_shapes: [(h, w), ...] per level; sum(h*w) == V.
        locations: (B, Q, heads, L, P, 2) normalized (x, y) sampling points.
        weights: (B, Q, heads, L, P) attention weights.
        num_heads: number of heads D is split into.

    Returns:
        (B, Q, D) sampled features (heads re-concatenated, no output proj).
    """
    b, v, d = value.shape
    if sum(h * w for h, w in value_shapes) != v:
        raise ValueError(f"value has {v} tokens but shapes sum to "
                         f"{sum(h * w for h, w in value_shapes)}")
    _, q, heads, num_levels, points, _ = locations.shape
    head_dim = d // num_heads
    value_list = value.split([h * w for h, w in value_shapes], dim=1)
    grids = 2 * locations - 1
    sampled_levels = []
    for lvl, (h, w) in enumerate(value_shapes):
        # (B, h*w, heads, hd) -> (B*heads, hd, h, w)
        v_l = (value_list[lvl].reshape(b, h * w, num_heads, head_dim)
               .permute(0, 2, 3, 1).reshape(b * num_heads, head_dim, h, w))
        # (B, Q, heads, P, 2) -> (B*heads, Q, P, 2)
        g_l = grids[:, :, :, lvl].permute(0, 2, 1, 3, 4).reshape(b * num_heads, q, points, 2)
        sampled = F.grid_sample(
            v_l, g_l, mode="bilinear", padding_mode="zeros", align_corners=False
        )  # (B*heads, hd, Q, P)
        sampled_levels.append(sampled)
    stacked = torch.stack(sampled_levels, dim=-2)  # (B*heads, hd, Q, L, P)
    w_ = weights.permute(0, 2, 1, 3, 4).reshape(b * num_heads, 1, q, num_levels, points)
    out = (stacked * w_).sum(dim=(-2, -1))  # (B*heads, hd, Q)
    return out.reshape(b, num_heads, head_dim, q).permute(0, 3, 1, 2).reshape(b, q, d)


class DeformableAttention(nn.Module):
    """Deformable cross-attention from query tokens onto a token pyramid.

    At init the offset head is zeroed (every sample lands exactly on its
    reference point) and the weight head is zeroed (uniform attention after
    the softmax), so the module starts out as a local average around the
    reference points.
    """

    def __init__(self, dim: int, num_heads: int, num_points: int, num_levels: int):
        super().__init__()
        if dim % num_heads != 0:
            raise ValueError("dim must be divisible by num_heads")
        self.dim = dim
        self.num_heads = num_heads
        self.num_points = num_points
        self.num_levels = num_levels
        self.sampling_offsets = nn.Linear(dim, num_heads * num_levels * num_points * 2)
        self.attention_weights = nn.Linear(dim, num_heads * num_levels * num_points)
        self.value_proj = nn.Linear(dim, dim)
        self.output_proj = nn.Linear(dim, dim)
        self._reset_parameters()

    def _reset_parameters(self):
        nn.init.zeros_(self.sampling_offsets.weight)
        nn.init.zeros_(self.sampling_offsets.bias)
        nn.init.zeros_(self.attention_weights.weight)
        nn.init.zeros_(self.attention_weights.bias)
        nn.init.xavier_uniform_(self.value_proj.weight)
        nn.init.zeros_(self.value_proj.bias)
        nn.init.xavier_uniform_(self.output_proj.weight)
        nn.init.zeros_(self.output_proj.bias)

    def sampling_parameters(
        self, query: torch.Tensor, reference_points: torch.Tensor,
        value_shapes: list[tuple[int, int]],
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Predicted (locations, weights) for introspection and testing.

        locations: (B, Q, heads, L, P, 2) normalized; weights (B, Q, heads, L, P).
        """
        b, q, _ = query.shape
        offsets = self.sampling_offsets(query).reshape(
            b, q, self.num_heads, self.num_levels, self.num_points, 2
        )
        weights = self.attention_weights(query).reshape(
            b, q, self.num_heads, self.num_levels * self.num_points
        )
        weights = weights.softmax(dim=-1).reshape(
            b, q, self.num_heads, self.num_levels, self.num_points
        )
        normalizer = query.new_tensor([[w, h] for h, w in value_shapes])  # (L, 2) as (x, y)
        locations = (
            reference_points[:, :, None, None, None, :]
            + offsets / normalizer[None, None, None, :, None, :]
        )
        return locations, weights

    def forward(
        self,
        query: torch.Tensor,
        value: torch.Tensor,
        value_shapes: list[tuple[int, int]],
        reference_points: torch.Tensor,
    ) -> torch.Tensor:
        """query (B,Q,D); value (B,V,D); reference_points (B,Q,2) in [0,1]."""
        if len(value_shapes) != self.num_levels:
            raise ValueError(
                f"expected {self.num_levels} value levels, got {len(value_shapes)}"
            )
        locations, weights = self.sampling_parameters(query, reference_points, value_shapes)
        out = deform_attn_core(
            self.value_proj(value), value_shapes, locations, weights, self.num_heads
        )
        return self.output_proj(out)
