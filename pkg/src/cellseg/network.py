"""Full segmentation network: encoder + (optional) adapter + decoder.

Three variants share the code path:

* ``adapter``       -- frozen ViT + spatial-prior adapter (the full model);
* ``decoder_only``  -- frozen ViT, no adapter, token-derived pyramid;
* ``full_finetune`` -- same wiring as ``decoder_only`` with the encoder
                       trainable (freezing is the trainer's job).

Parameter names are stable and grouped by component: ``encoder.block{i}...``,
``adapter.spm.block{k}.conv{j}...``, ``adapter.injector{i}.gamma``,
``decoder.{np|hv|nc}.stage{s}...``, ``decoder.tissue_head``.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn

from .adapter import SpatialAdapter
from .config import RunConfig
from .containers import PredictionMaps
from .decoder import TriBranchDecoder
from .utils import to_numpy
from .vit import ViTEncoder


class SegModel(nn.Module):
    def __init__(self, cfg: RunConfig):
        super().__init__()
        self.cfg = cfg
        self.with_adapter = cfg.variant == "adapter"
        self.encoder = ViTEncoder(cfg.encoder)
        if self.with_adapter:
            self.adapter = SpatialAdapter(
                cfg.encoder.embed_dim, cfg.encoder.in_channels, cfg.adapter,
                cfg.encoder.num_interaction_blocks,
            )
        self.decoder = TriBranchDecoder(
            cfg.encoder.embed_dim, cfg.encoder.in_channels, cfg.decoder,
            cfg.num_cell_classes, cfg.num_tissue_classes,
            token_pyramid=not self.with_adapter,
        )

    def _grid_map(self, grid_tokens: torch.Tensor, grid: tuple[int, int]) -> torch.Tensor:
        b, n, d = grid_tokens.shape
        gh, gw = grid
        return grid_tokens.transpose(1, 2).reshape(b, d, gh, gw)

    def forward(self, images: torch.Tensor) -> dict[str, torch.Tensor]:
        if self.with_adapter:
            tokens, spatial, spatial_shapes, grid = self.adapter.interaction_forward(
                self.encoder, images
            )
            pyramid = self.adapter.build_pyramid(spatial, spatial_shapes)
        else:
            tokens, grid = self.encoder.prepare_tokens(images)
            group_grids = []
            for i in range(self.encoder.num_groups):
                tokens = self.encoder.group_forward(tokens, i)
                group_grids.append(self._grid_map(tokens[:, 1:], grid))
            tokens = self.encoder.norm(tokens)
            pyramid = self.decoder.pyramid(group_grids)
        bottleneck = self._grid_map(tokens[:, 1:], grid)
        return self.decoder(bottleneck, pyramid, images, tokens[:, 0])

    @torch.no_grad()
    def predict_maps(self, images: torch.Tensor) -> list[PredictionMaps]:
        """Run inference and split the batch into per-image containers."""
        was_training = self.training
        self.eval()
        try:
            out = self(images)
        finally:
            if was_training:
                self.train()
        maps = []
        for i in range(images.shape[0]):
            maps.append(PredictionMaps(
                np_probs=np.transpose(to_numpy(out["np_probs"][i]), (1, 2, 0)),
                hv=np.transpose(to_numpy(out["hv"][i]), (1, 2, 0)),
                nc_probs=np.transpose(to_numpy(out["nc_probs"][i]), (1, 2, 0)),
                tissue_logits=to_numpy(out["tissue_logits"][i]),
            ))
        return maps


def build_model(cfg: RunConfig) -> SegModel:
    return SegModel(cfg)


def trainable_parameters(model: SegModel) -> list[torch.nn.Parameter]:
    return [p for p in model.parameters() if p.requires_grad]


def freeze_encoder(model: SegModel) -> None:
    for p in model.encoder.parameters():
        p.requires_grad_(False)
