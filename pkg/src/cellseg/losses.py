"""Composite segmentation losses.

All functions take batched channels-first tensors and reduce to a scalar.
Soft counts are summed over batch and spatial dims per class, so a batch is
treated as one large map.  The total is the weighted sum of eight terms:

    np: dice + focal tversky          (nucleus-vs-background softmax)
    hv: mse + masked gradient mse     (offset regression)
    nc: dice + focal tversky + ce     (type softmax)
    tc: ce                            (tissue logits)
"""

from __future__ import annotations

import torch
import torch.nn.functional as F

from .config import LossWeights
from .kernels import derivative_kernels

EPS = 1e-5
_LOG_EPS = 1e-8


def _one_hot(target: torch.Tensor, num_classes: int, dtype) -> torch.Tensor:
    return F.one_hot(target.long(), num_classes).to(dtype).permute(0, 3, 1, 2)


def dice_loss(probs: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Soft-Dice complement, averaged over classes.

    probs: (B, C, H, W) probabilities; target: (B, H, W) integer labels.
    """
    t = _one_hot(target, probs.shape[1], probs.dtype)
    inter = (probs * t).sum(dim=(0, 2, 3))
    denom = probs.sum(dim=(0, 2, 3)) + t.sum(dim=(0, 2, 3))
    dice = (2.0 * inter + EPS) / (denom + EPS)
    return (1.0 - dice).mean()


def focal_tversky_loss(
    probs: torch.Tensor,
    target: torch.Tensor,
    alpha: float = 0.7,
    beta: float = 0.3,
    gamma: float = 0.75,
) -> torch.Tensor:
    """Focal Tversky loss with soft counts, averaged over classes.

    The index is smoothed as TI = (2*TP + eps) / (2*(TP + alpha*FN + beta*FP)
    + eps) so that alpha = beta = 0.5 with a unit exponent reduces exactly to
    the Dice complement above, smoothing term included.  The focal exponent
    is 1/gamma.
    """
    t = _one_hot(target, probs.shape[1], probs.dtype)
    tp = (probs * t).sum(dim=(0, 2, 3))
    fn = ((1.0 - probs) * t).sum(dim=(0, 2, 3))
    fp = (probs * (1.0 - t)).sum(dim=(0, 2, 3))
    ti = (2.0 * tp + EPS) / (2.0 * (tp + alpha * fn + beta * fp) + EPS)
    return ((1.0 - ti) ** (1.0 / gamma)).mean()


def focal_tversky_terms(
    probs: torch.Tensor, target_onehot: torch.Tensor,
    alpha: float = 0.7, beta: float = 0.3, gamma: float = 0.75,
) -> torch.Tensor:
    """Per-class focal Tversky terms for arbitrary (already one-hot) targets."""
    tp = (probs * target_onehot).sum(dim=(0, 2, 3))
    fn = ((1.0 - probs) * target_onehot).sum(dim=(0, 2, 3))
    fp = (probs * (1.0 - target_onehot)).sum(dim=(0, 2, 3))
    ti = (2.0 * tp + EPS) / (2.0 * (tp + alpha * fn + beta * fp) + EPS)
    return (1.0 - ti) ** (1.0 / gamma)


def hv_mse_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Plain MSE over both offset channels and all pixels."""
    return ((pred - target) ** 2).mean()


def hv_gradients(hv: torch.Tensor) -> torch.Tensor:
    """Apply the fixed 5-tap derivative kernels: d/dx to channel 0, d/dy to 1.

    hv: (B, 2, H, W) -> (B, 2, H, W) with zero padding at the borders.
    """
    kh, kv = derivative_kernels()
    k = torch.stack([
        torch.as_tensor(kh, dtype=hv.dtype, device=hv.device),
        torch.as_tensor(kv, dtype=hv.dtype, device=hv.device),
    ]).unsqueeze(1)  # (2, 1, 5, 5)
    return F.conv2d(hv, k, padding=kh.shape[0] // 2, groups=2)


def hv_msge_loss(pred: torch.Tensor, target: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """MSE of the derivative responses, restricted to nuclear pixels.

    mask: (B, H, W) with 1 on nucleus pixels.  Invariant to constant offsets
    of the prediction because the kernels are zero-sum.  Returns 0 when the
    mask is empty.
    """
    gp = hv_gradients(pred)
    gt = hv_gradients(target)
    m = mask.to(pred.dtype).unsqueeze(1)
    total = m.sum() * 2.0
    if total.item() == 0:
        return pred.sum() * 0.0
    return (m * (gp - gt) ** 2).sum() / total


def ce_from_probs(probs: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Cross-entropy computed from probabilities (the branches emit softmax)."""
    logp = torch.log(probs.clamp(min=_LOG_EPS))
    return F.nll_loss(logp, target.long())


def tissue_ce_loss(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    return F.cross_entropy(logits, target.long())


def total_loss(
    outputs: dict[str, torch.Tensor],
    targets: dict[str, torch.Tensor],
    weights: LossWeights | None = None,
) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    """Weighted sum of all eight terms.

    Returns (total, breakdown); breakdown holds the weighted contributions
    and the total is their exact sequential sum.
    """
    w = weights or LossWeights()
    np_t, hv_t = targets["np_target"], targets["hv_target"]
    nc_t, tc_t = targets["nc_target"], targets["tissue_class"]
    breakdown = {
        "np_dice": w.np_dice * dice_loss(outputs["np_probs"], np_t),
        "np_ft": w.np_ft * focal_tversky_loss(outputs["np_probs"], np_t),
        "hv_mse": w.hv_mse * hv_mse_loss(outputs["hv"], hv_t),
        "hv_msge": w.hv_msge * hv_msge_loss(outputs["hv"], hv_t, np_t),
        "nc_dice": w.nc_dice * dice_loss(outputs["nc_probs"], nc_t),
        "nc_ft": w.nc_ft * focal_tversky_loss(outputs["nc_probs"], nc_t),
        "nc_ce": w.nc_ce * ce_from_probs(outputs["nc_probs"], nc_t),
        "tc_ce": w.tc_ce * tissue_ce_loss(outputs["tissue_logits"], tc_t),
    }
    total = None
    for v in breakdown.values():
        total = v if total is None else total + v
    return total, breakdown
