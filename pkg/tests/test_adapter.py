"""Spatial-prior adapter: SPM pyramid, injector/extractor, transparency."""

import numpy as np
import pytest
import torch

from cellseg.adapter import Extractor, Injector, SpatialAdapter, SpatialPriorModule
from cellseg.config import AdapterConfig, EncoderConfig
from cellseg.vit import ViTEncoder, grid_reference_points

from oracles import finite_diff_max_rel_err


def test_spm_level_shapes_64():
    spm = SpatialPriorModule(3, (16, 32, 64, 64), dim=64)
    levels = spm(torch.randn(2, 3, 64, 64))
    assert [tuple(l.shape) for l in levels] == [
        (2, 64, 16, 16), (2, 64, 8, 8), (2, 64, 4, 4)
    ]
    tokens, shapes = SpatialAdapter.flatten_levels(levels)
    assert shapes == [(16, 16), (8, 8), (4, 4)]
    assert tokens.shape == (2, 336, 64)


def test_spm_level_shapes_256():
    spm = SpatialPriorModule(3, (4, 4, 4, 4), dim=8)
    levels = spm(torch.randn(1, 3, 256, 256))
    tokens, shapes = SpatialAdapter.flatten_levels(levels)
    assert shapes == [(64, 64), (32, 32), (16, 16)]
    assert tokens.shape == (1, 5376, 8)


def test_spm_rejects_tiny_images():
    spm = SpatialPriorModule(3, (4, 4, 4, 4), dim=8)
    with pytest.raises(ValueError):
        spm(torch.randn(1, 3, 8, 8))


def test_flatten_levels_row_major():
    m = torch.arange(6, dtype=torch.float32).reshape(1, 1, 2, 3)
    tokens, shapes = SpatialAdapter.flatten_levels([m])
    assert shapes == [(2, 3)]
    assert torch.equal(tokens.flatten(), torch.tensor([0.0, 1, 2, 3, 4, 5]))


def _encoder_and_adapter(dim=32):
    enc_cfg = EncoderConfig(
        image_size=64, patch_size=16, embed_dim=dim, depth=4, num_heads=2,
        num_interaction_blocks=4,
    )
    encoder = ViTEncoder(enc_cfg)
    adapter = SpatialAdapter(
        dim, 3, AdapterConfig(spm_channels=(4, 8, 8, 8), attn_heads=2, attn_points=2),
        num_blocks=4,
    )
    return encoder, adapter


def test_adapter_is_transparent_at_init():
    """gamma starts at zero, so the ViT token stream is untouched: bitwise."""
    torch.manual_seed(11)
    encoder, adapter = _encoder_and_adapter()
    encoder.eval(); adapter.eval()
    images = torch.randn(2, 3, 64, 64)
    with torch.no_grad():
        tokens, _, _, _ = adapter.interaction_forward(encoder, images)
        plain, _ = encoder.forward_tokens(images)
    assert torch.equal(tokens, plain)


def test_adapter_engages_when_gamma_nonzero():
    torch.manual_seed(12)
    encoder, adapter = _encoder_and_adapter()
    encoder.eval(); adapter.eval()
    images = torch.randn(1, 3, 64, 64)
    with torch.no_grad():
        adapter.injector1.gamma.fill_(1.0)
        tokens, _, _, _ = adapter.interaction_forward(encoder, images)
        plain, _ = encoder.forward_tokens(images)
    assert not torch.allclose(tokens, plain)


def test_group_count_mismatch_rejected():
    encoder, _ = _encoder_and_adapter()
    adapter = SpatialAdapter(32, 3, AdapterConfig(spm_channels=(4, 8, 8, 8)), num_blocks=2)
    with pytest.raises(ValueError, match="interaction blocks"):
        adapter.interaction_forward(encoder, torch.randn(1, 3, 64, 64))


def test_pyramid_levels_and_shapes():
    torch.manual_seed(13)
    encoder, adapter = _encoder_and_adapter()
    images = torch.randn(2, 3, 64, 64)
    _, spatial, shapes, _ = adapter.interaction_forward(encoder, images)
    pyramid = adapter.build_pyramid(spatial, shapes)
    assert sorted(pyramid) == [2, 4, 8, 16]
    assert tuple(pyramid[2].shape) == (2, 32, 32, 32)   # deconv of the 1/4 level
    assert tuple(pyramid[4].shape) == (2, 32, 16, 16)
    assert tuple(pyramid[8].shape) == (2, 32, 8, 8)
    assert tuple(pyramid[16].shape) == (2, 32, 4, 4)


def test_injector_gamma_gradient_alive_at_zero():
    """The gate multiplies the attention output, so d(loss)/d(gamma) != 0
    even while gamma itself is still exactly zero."""
    torch.manual_seed(21)
    inj = Injector(dim=8, num_heads=2, num_points=2, num_levels=2).double()
    grid = torch.randn(1, 4, 8, dtype=torch.float64)
    spatial = torch.randn(1, 4 + 1, 8, dtype=torch.float64)
    shapes = [(2, 2), (1, 1)]
    ref = grid_reference_points(2, 2, dtype=torch.float64).unsqueeze(0)
    with torch.no_grad():  # non-trivial attention pattern
        inj.attn.sampling_offsets.weight.normal_(0, 0.3)
        inj.attn.attention_weights.weight.normal_(0, 0.3)

    def loss_fn():
        return (inj(grid, spatial, shapes, ref) ** 2).sum()

    grads = torch.autograd.grad(loss_fn(), [inj.gamma])
    assert grads[0].abs().max() > 0
    params = [p for p in inj.parameters() if p.requires_grad]
    assert finite_diff_max_rel_err(loss_fn, params, max_coords=4) < 1e-4


def test_extractor_order_attention_then_ffn():
    """Residuals apply in sequence: attention first, then the FFN on the sum."""
    torch.manual_seed(22)
    ext = Extractor(dim=8, num_heads=2, num_points=2, ffn_ratio=0.5).double()
    spatial = torch.randn(1, 6, 8, dtype=torch.float64)
    grid = torch.randn(1, 4, 8, dtype=torch.float64)
    ref = torch.rand(1, 6, 2, dtype=torch.float64)
    out = ext(spatial, grid, (2, 2), ref)
    attn = ext.attn(ext.query_norm(spatial), ext.value_norm(grid), [(2, 2)], ref)
    mid = spatial + attn
    expected = mid + ext.ffn(ext.ffn_norm(mid))
    assert torch.equal(out, expected)

    params = list(ext.ffn.parameters())

    def loss_fn():
        return (ext(spatial, grid, (2, 2), ref) ** 2).sum()

    assert finite_diff_max_rel_err(loss_fn, params, max_coords=6) < 1e-4


def test_adapter_parameter_names():
    _, adapter = _encoder_and_adapter()
    names = {n for n, _ in adapter.named_parameters()}
    assert "spm.block1.conv1.conv.weight" in names
    assert "spm.proj2.weight" in names
    assert "injector1.gamma" in names
    assert "injector4.attn.sampling_offsets.weight" in names
    assert "extractor2.ffn.0.weight" in names
    assert "up.weight" in names
