"""ViT encoder: token plumbing, grouped execution, reference points."""

import pytest
import torch

from cellseg.config import EncoderConfig
from cellseg.vit import EncoderBlock, ViTEncoder, grid_reference_points

from oracles import finite_diff_max_rel_err


def _toy_encoder():
    return ViTEncoder(EncoderConfig(
        image_size=64, patch_size=16, embed_dim=64, depth=8, num_heads=4,
        num_interaction_blocks=4,
    ))


def test_token_shapes():
    enc = _toy_encoder()
    tokens, grid = enc.prepare_tokens(torch.randn(2, 3, 64, 64))
    assert grid == (4, 4)
    assert tokens.shape == (2, 17, 64)  # cls + 4*4 patches
    out, _ = enc.forward_tokens(torch.randn(2, 3, 64, 64))
    assert out.shape == (2, 17, 64)


def test_grouped_execution_matches_full_forward():
    enc = _toy_encoder().eval()
    images = torch.randn(2, 3, 64, 64)
    tokens, _ = enc.prepare_tokens(images)
    for g in range(enc.num_groups):
        tokens = enc.group_forward(tokens, g)
    full, _ = enc.forward_tokens(images)
    assert torch.equal(enc.norm(tokens), full)


def test_group_index_bounds():
    enc = _toy_encoder()
    tokens, _ = enc.prepare_tokens(torch.randn(1, 3, 64, 64))
    with pytest.raises(IndexError):
        enc.group_forward(tokens, 4)
    with pytest.raises(IndexError):
        enc.group_forward(tokens, -1)


def test_blocks_are_individually_addressable():
    enc = _toy_encoder()
    names = dict(enc.named_parameters())
    assert "block1.attn.qkv.weight" in names
    assert "block8.mlp.fc2.bias" in names
    assert "norm.weight" in names


def test_pos_embed_resized_for_other_grids():
    enc = _toy_encoder()
    # native grid: returned as-is
    assert enc._pos_embed_for(4, 4) is enc.pos_embed
    # 32x32 input -> 2x2 grid, interpolated embedding, forward still works
    tokens, grid = enc.prepare_tokens(torch.randn(1, 3, 32, 32))
    assert grid == (2, 2)
    assert tokens.shape == (1, 5, 64)
    out, _ = enc.forward_tokens(torch.randn(1, 3, 32, 32))
    assert out.shape == (1, 5, 64)


def test_patch_embed_requires_divisible_input():
    enc = _toy_encoder()
    with pytest.raises(ValueError, match="divisible"):
        enc.prepare_tokens(torch.randn(1, 3, 60, 60))


def test_grid_reference_points_are_cell_centers():
    ref = grid_reference_points(2, 2, dtype=torch.float64)
    expected = torch.tensor(
        [[0.25, 0.25], [0.75, 0.25], [0.25, 0.75], [0.75, 0.75]], dtype=torch.float64
    )
    assert torch.equal(ref, expected)
    ref3 = grid_reference_points(1, 4, dtype=torch.float64)
    assert torch.allclose(ref3[:, 0], torch.tensor([0.125, 0.375, 0.625, 0.875]).double())
    assert torch.all(ref3[:, 1] == 0.5)


def test_encoder_block_gradients():
    torch.manual_seed(3)
    block = EncoderBlock(dim=8, num_heads=2, mlp_ratio=2.0).double()
    x = torch.randn(1, 5, 8, dtype=torch.float64)
    params = [p for p in block.parameters() if p.requires_grad]

    def loss_fn():
        return (block(x) ** 2).sum()

    assert finite_diff_max_rel_err(loss_fn, params, max_coords=6) < 1e-4
