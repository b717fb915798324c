"""Independent reference implementations used to cross-check the package.

Everything in here is deliberately slow and written from first principles:
per-query python loops with manual bilinear interpolation for the
deformable attention, per-id set arithmetic for the instance metrics, and
central finite differences for gradients.  Nothing is shared with the
package source, so agreement between the two is meaningful.
"""

from __future__ import annotations

import math

import numpy as np
import torch


# ---------------------------------------------------------------------------
# Deformable attention
# ---------------------------------------------------------------------------

def bilinear_sample(plane: np.ndarray, px: float, py: float) -> np.ndarray:
    """Bilinear read of plane (..., h, w) at a continuous pixel coordinate.

    Taps that fall outside the plane contribute zero, with the interpolation
    weights unchanged (the padding_mode='zeros' convention).
    """
    h, w = plane.shape[-2:]
    x0, y0 = math.floor(px), math.floor(py)
    out = np.zeros(plane.shape[:-2], dtype=np.float64)
    for yi in (y0, y0 + 1):
        for xi in (x0, x0 + 1):
            wgt = (1.0 - abs(px - xi)) * (1.0 - abs(py - yi))
            if 0 <= xi < w and 0 <= yi < h and wgt != 0.0:
                out = out + wgt * plane[..., yi, xi]
    return out


def deform_attention_oracle(
    module,
    query: torch.Tensor,
    value: torch.Tensor,
    value_shapes: list[tuple[int, int]],
    reference_points: torch.Tensor,
) -> np.ndarray:
    """Dense-loop re-derivation of DeformableAttention.forward.

    Reads the module's linear weights and replays the whole computation --
    offset/weight heads, softmax, value projection, per-point bilinear
    sampling at ``loc * size - 0.5`` with zero padding, head re-concat and
    output projection -- one query at a time in numpy float64.
    """
    w_off = module.sampling_offsets.weight.detach().cpu().numpy().astype(np.float64)
    b_off = module.sampling_offsets.bias.detach().cpu().numpy().astype(np.float64)
    w_att = module.attention_weights.weight.detach().cpu().numpy().astype(np.float64)
    b_att = module.attention_weights.bias.detach().cpu().numpy().astype(np.float64)
    w_val = module.value_proj.weight.detach().cpu().numpy().astype(np.float64)
    b_val = module.value_proj.bias.detach().cpu().numpy().astype(np.float64)
    w_out = module.output_proj.weight.detach().cpu().numpy().astype(np.float64)
    b_out = module.output_proj.bias.detach().cpu().numpy().astype(np.float64)

    q_np = query.detach().cpu().numpy().astype(np.float64)
    v_np = value.detach().cpu().numpy().astype(np.float64)
    ref = reference_points.detach().cpu().numpy().astype(np.float64)

    batch, num_q, dim = q_np.shape
    heads, levels, points = module.num_heads, module.num_levels, module.num_points
    head_dim = dim // heads

    v_proj = v_np @ w_val.T + b_val  # (B, V, D)
    out = np.zeros((batch, num_q, dim), dtype=np.float64)
    for b in range(batch):
        planes = []  # per level: (heads, head_dim, h, w)
        start = 0
        for (h, w) in value_shapes:
            tokens = v_proj[b, start:start + h * w]
            start += h * w
            planes.append(tokens.reshape(h, w, heads, head_dim).transpose(2, 3, 0, 1))
        for qi in range(num_q):
            feat = q_np[b, qi]
            offsets = (w_off @ feat + b_off).reshape(heads, levels, points, 2)
            logits = (w_att @ feat + b_att).reshape(heads, levels * points)
            ex = np.exp(logits - logits.max(axis=1, keepdims=True))
            weights = (ex / ex.sum(axis=1, keepdims=True)).reshape(heads, levels, points)
            gathered = np.zeros((heads, head_dim), dtype=np.float64)
            for hh in range(heads):
                for lvl, (gh, gw) in enumerate(value_shapes):
                    for pp in range(points):
                        loc_x = ref[b, qi, 0] + offsets[hh, lvl, pp, 0] / gw
                        loc_y = ref[b, qi, 1] + offsets[hh, lvl, pp, 1] / gh
                        tap = bilinear_sample(
                            planes[lvl][hh], loc_x * gw - 0.5, loc_y * gh - 0.5
                        )
                        gathered[hh] += weights[hh, lvl, pp] * tap
            out[b, qi] = w_out @ gathered.reshape(dim) + b_out
    return out


def random_deform_case(rng: np.random.Generator):
    """Random tiny DeformableAttention module + float64 inputs for fuzzing.

    The offset and weight heads are re-randomized (they are zero at init),
    and reference points may fall slightly outside [0, 1] so the zero-padding
    path gets exercised.
    """
    from cellseg.deform import DeformableAttention

    heads = int(rng.choice([1, 2, 3]))
    head_dim = int(rng.choice([1, 2, 4]))
    dim = heads * head_dim
    levels = int(rng.integers(1, 4))
    points = int(rng.integers(1, 5))
    module = DeformableAttention(dim, heads, points, levels).double()
    with torch.no_grad():
        for head in (module.sampling_offsets, module.attention_weights):
            head.weight.normal_(0.0, 0.5, generator=torch.Generator().manual_seed(
                int(rng.integers(0, 2**31))))
            head.bias.normal_(0.0, 0.5, generator=torch.Generator().manual_seed(
                int(rng.integers(0, 2**31))))
    value_shapes = [(int(rng.integers(1, 6)), int(rng.integers(1, 6)))
                    for _ in range(levels)]
    batch = int(rng.integers(1, 3))
    num_q = int(rng.integers(1, 7))
    total = sum(h * w for h, w in value_shapes)
    query = torch.from_numpy(rng.standard_normal((batch, num_q, dim)))
    value = torch.from_numpy(rng.standard_normal((batch, total, dim)))
    ref = torch.from_numpy(rng.uniform(-0.1, 1.1, size=(batch, num_q, 2)))
    return module, query, value, value_shapes, ref


# ---------------------------------------------------------------------------
# Instance metrics
# ---------------------------------------------------------------------------

def _regions(inst_map: np.ndarray) -> dict[int, frozenset]:
    out = {}
    for inst_id in np.unique(inst_map):
        if inst_id == 0:
            continue
        ys, xs = np.nonzero(inst_map == inst_id)
        out[int(inst_id)] = frozenset(zip(ys.tolist(), xs.tolist()))
    return out


def pq_counts_oracle(
    gt: np.ndarray, pred: np.ndarray, iou_threshold: float = 0.5
) -> tuple[int, int, int, float]:
    """(tp, fp, fn, iou_sum) by exhaustive pairwise set enumeration."""
    gt_regions, pred_regions = _regions(gt), _regions(pred)
    matched_gt, matched_pred = set(), set()
    iou_sum = 0.0
    for gid, gset in gt_regions.items():
        for pid, pset in pred_regions.items():
            inter = len(gset & pset)
            if inter == 0:
                continue
            iou = inter / len(gset | pset)
            if iou > iou_threshold:
                assert gid not in matched_gt and pid not in matched_pred
                matched_gt.add(gid)
                matched_pred.add(pid)
                iou_sum += iou
    tp = len(matched_gt)
    return tp, len(pred_regions) - tp, len(gt_regions) - tp, iou_sum


def pq_scores(tp: int, fp: int, fn: int, iou_sum: float) -> tuple[float, float, float]:
    """(dq, sq, pq) from matching counts; no instances anywhere scores 1."""
    if tp + fp + fn == 0:
        return 1.0, 1.0, 1.0
    dq = tp / (tp + 0.5 * fp + 0.5 * fn)
    sq = iou_sum / tp if tp else 0.0
    return dq, sq, dq * sq


def dice_counts_oracle(gt: np.ndarray, pred: np.ndarray) -> tuple[int, int]:
    gt_fg, pred_fg = gt > 0, pred > 0
    return 2 * int((gt_fg & pred_fg).sum()), int(gt_fg.sum()) + int(pred_fg.sum())


def aji_counts_oracle(gt: np.ndarray, pred: np.ndarray) -> tuple[int, int]:
    """(intersection, union) accumulators of the aggregated Jaccard index.

    Greedy over ground-truth ids in ascending order; each gt id takes the
    best-IoU unused prediction it overlaps (ties to the lowest pred id).
    Unmatched gt adds its own area to the union; leftover predictions are
    appended at the end.
    """
    gt_regions, pred_regions = _regions(gt), _regions(pred)
    used = set()
    inter_total, union_total = 0, 0
    for gid in sorted(gt_regions):
        gset = gt_regions[gid]
        best_pid, best_iou = None, -1.0
        for pid in sorted(pred_regions):
            if pid in used:
                continue
            inter = len(gset & pred_regions[pid])
            if inter == 0:
                continue
            iou = inter / len(gset | pred_regions[pid])
            if iou > best_iou:
                best_pid, best_iou = pid, iou
        if best_pid is None:
            union_total += len(gset)
        else:
            used.add(best_pid)
            inter_total += len(gset & pred_regions[best_pid])
            union_total += len(gset | pred_regions[best_pid])
    for pid, pset in pred_regions.items():
        if pid not in used:
            union_total += len(pset)
    return inter_total, union_total


def class_submap_oracle(inst_map: np.ndarray, types: dict[int, int], cls: int) -> np.ndarray:
    out = np.zeros_like(inst_map)
    for inst_id, inst_cls in types.items():
        if inst_cls == cls:
            out[inst_map == inst_id] = inst_id
    return out


def report_oracle(pairs, num_classes: int) -> dict:
    """Dataset-level mPQ/mDQ/mSQ/bPQ/DICE/AJI from (gt, pred) result pairs.

    Each pair is (gt_result, pred_result) with .inst_map and .types.  All
    quantities accumulate counts across images before any division.
    """
    per_class = {c: [0, 0, 0, 0.0] for c in range(1, num_classes + 1)}
    binary = [0, 0, 0, 0.0]
    dice_num = dice_den = 0
    aji_inter = aji_union = 0
    for gt_res, pred_res in pairs:
        for c in range(1, num_classes + 1):
            gm = class_submap_oracle(gt_res.inst_map, gt_res.types, c)
            pm = class_submap_oracle(pred_res.inst_map, pred_res.types, c)
            tp, fp, fn, iou = pq_counts_oracle(gm, pm)
            acc = per_class[c]
            acc[0] += tp; acc[1] += fp; acc[2] += fn; acc[3] += iou
        tp, fp, fn, iou = pq_counts_oracle(gt_res.inst_map, pred_res.inst_map)
        binary[0] += tp; binary[1] += fp; binary[2] += fn; binary[3] += iou
        dn, dd = dice_counts_oracle(gt_res.inst_map, pred_res.inst_map)
        dice_num += dn; dice_den += dd
        ai, au = aji_counts_oracle(gt_res.inst_map, pred_res.inst_map)
        aji_inter += ai; aji_union += au
    present = [c for c, acc in per_class.items() if acc[0] + acc[1] + acc[2] > 0]
    if present:
        dqs, sqs, pqs = zip(*(pq_scores(*per_class[c]) for c in present))
        m_dq, m_sq, m_pq = (float(np.mean(v)) for v in (dqs, sqs, pqs))
    else:
        m_dq = m_sq = m_pq = 1.0
    _, _, b_pq = pq_scores(*binary)
    return {
        "mPQ": m_pq,
        "mDQ": m_dq,
        "mSQ": m_sq,
        "bPQ": b_pq,
        "DICE": 1.0 if dice_den == 0 else dice_num / dice_den,
        "AJI": 1.0 if aji_union == 0 else aji_inter / aji_union,
    }


def random_instance_map(rng: np.random.Generator, size: int = 32, max_instances: int = 6) -> np.ndarray:
    """Random blobby label map for metric fuzzing (ids may be non-consecutive)."""
    out = np.zeros((size, size), dtype=np.int32)
    n = int(rng.integers(0, max_instances + 1))
    ids = rng.choice(np.arange(1, 4 * max_instances + 2), size=n, replace=False)
    for inst_id in ids:
        cy, cx = rng.integers(0, size, size=2)
        ry, rx = rng.integers(1, max(2, size // 4), size=2)
        yy, xx = np.ogrid[:size, :size]
        blob = ((yy - cy) / max(ry, 1)) ** 2 + ((xx - cx) / max(rx, 1)) ** 2 <= 1.0
        out[blob] = inst_id
    return out


# ---------------------------------------------------------------------------
# Finite-difference gradient checking
# ---------------------------------------------------------------------------

def finite_diff_max_rel_err(
    loss_fn,
    params: list[torch.Tensor],
    eps: float = 1e-6,
    max_coords: int = 24,
    seed: int = 0,
    atol: float = 1e-7,
) -> float:
    """Worst relative error between autograd and central differences.

    loss_fn() must rebuild the scalar loss from scratch on every call (it is
    re-evaluated after each in-place parameter nudge).  All tensors involved
    are expected to be float64.  For parameters with more than ``max_coords``
    entries a fixed random subset of coordinates is probed.

    Coordinates where the two estimates agree within ``atol`` count as exact:
    some derivatives are structurally zero (a softmax cancels the key bias of
    dot-product attention, for example) and central differences measure pure
    roundoff there, which no relative denominator can interpret.  Float64
    roundoff at this eps sits around 1e-9, so a genuinely missing gradient
    larger than ``atol`` is still caught.
    """
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=False)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for param, grad in zip(params, grads):
        flat = param.data.view(-1)
        grad_flat = grad.reshape(-1)
        n = flat.numel()
        coords = np.arange(n) if n <= max_coords else rng.choice(n, size=max_coords, replace=False)
        for i in coords:
            i = int(i)
            orig = flat[i].item()
            flat[i] = orig + eps
            up = loss_fn().item()
            flat[i] = orig - eps
            down = loss_fn().item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * eps)
            analytic = grad_flat[i].item()
            if abs(numeric - analytic) <= atol:
                continue
            denom = max(abs(numeric), abs(analytic), 1e-6)
            worst = max(worst, abs(numeric - analytic) / denom)
    return worst
