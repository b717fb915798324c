"""Instance segmentation metrics: PQ family, DICE, AJI.

Matching is at IoU strictly greater than 0.5, which makes matches unique
(asserted, not assumed).  Dataset aggregation is an associative reduction:
TP/FP/FN/IoU sums (and DICE/AJI numerators and denominators) are summed
over images before any quotient is formed; per-class scores average only
over classes present in the ground truth or the predictions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .containers import InstanceResult


def _contingency(gt: np.ndarray, pred: np.ndarray):
    """Sorted positive ids plus the intersection-area table between them.

    Returns (gt_ids, pred_ids, inter[G, P], gt_areas[G], pred_areas[P]).
    """
    if gt.shape != pred.shape:
        raise ValueError(f"shape mismatch: gt {gt.shape} vs pred {pred.shape}")
    gt_ids = np.unique(gt)
    gt_ids = gt_ids[gt_ids > 0]
    pred_ids = np.unique(pred)
    pred_ids = pred_ids[pred_ids > 0]
    g_lut = np.zeros(int(gt.max()) + 1 if gt_ids.size else 1, dtype=np.int64)
    g_lut[gt_ids] = np.arange(1, gt_ids.size + 1)
    p_lut = np.zeros(int(pred.max()) + 1 if pred_ids.size else 1, dtype=np.int64)
    p_lut[pred_ids] = np.arange(1, pred_ids.size + 1)
    g = g_lut[gt]
    p = p_lut[pred]
    pw = pred_ids.size + 1
    counts = np.bincount(
        (g * pw + p).ravel(), minlength=(gt_ids.size + 1) * pw
    ).reshape(gt_ids.size + 1, pw)
    inter = counts[1:, 1:]
    gt_areas = counts[1:, :].sum(axis=1)
    pred_areas = counts[:, 1:].sum(axis=0)
    return gt_ids, pred_ids, inter, gt_areas, pred_areas


def match_instances(
    gt: np.ndarray, pred: np.ndarray, iou_threshold: float = 0.5
) -> list[tuple[int, int, float]]:
    """All (gt_id, pred_id, iou) pairs with IoU strictly above the threshold.

    With a threshold of at least 0.5 each instance can appear in at most one
    pair; this is asserted rather than assumed.
    """
    gt_ids, pred_ids, inter, gt_areas, pred_areas = _contingency(gt, pred)
    union = gt_areas[:, None] + pred_areas[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        iou = np.where(union > 0, inter / union, 0.0)
    gi, pi = np.nonzero(iou > iou_threshold)
    matches = [
        (int(gt_ids[a]), int(pred_ids[b]), float(iou[a, b])) for a, b in zip(gi, pi)
    ]
    assert len({m[0] for m in matches}) == len(matches), "gt matched twice"
    assert len({m[1] for m in matches}) == len(matches), "pred matched twice"
    return matches


@dataclass
class PQResult:
    """Additive panoptic-quality counts; quotients are derived properties."""

    tp: int = 0
    fp: int = 0
    fn: int = 0
    iou_sum: float = 0.0

    def __add__(self, other: "PQResult") -> "PQResult":
        return PQResult(
            self.tp + other.tp, self.fp + other.fp, self.fn + other.fn,
            self.iou_sum + other.iou_sum,
        )

    @property
    def empty(self) -> bool:
        return self.tp + self.fp + self.fn == 0

    @property
    def dq(self) -> float:
        if self.empty:
            return 1.0  # two empty maps agree perfectly
        return self.tp / (self.tp + 0.5 * self.fp + 0.5 * self.fn)

    @property
    def sq(self) -> float:
        if self.empty:
            return 1.0
        return self.iou_sum / self.tp if self.tp else 0.0

    @property
    def pq(self) -> float:
        return self.dq * self.sq


def pq(gt: np.ndarray, pred: np.ndarray, iou_threshold: float = 0.5) -> PQResult:
    """Binary (class-agnostic) PQ counts for one image pair."""
    matches = match_instances(gt, pred, iou_threshold)
    n_gt = int(np.unique(gt[gt > 0]).size)
    n_pred = int(np.unique(pred[pred > 0]).size)
    tp = len(matches)
    return PQResult(
        tp=tp, fp=n_pred - tp, fn=n_gt - tp,
        iou_sum=float(sum(m[2] for m in matches)),
    )


def _class_submap(result: InstanceResult, cls: int) -> np.ndarray:
    keep = np.array(
        [i for i, c in result.types.items() if c == cls], dtype=np.int64
    )
    if keep.size == 0:
        return np.zeros_like(result.inst_map)
    lut = np.zeros(int(result.inst_map.max()) + 1, dtype=np.int64)
    lut[keep] = keep
    return lut[result.inst_map]


def per_class_pq(
    gt: InstanceResult, pred: InstanceResult, num_classes: int,
    iou_threshold: float = 0.5,
) -> dict[int, PQResult]:
    """PQ counts per cell class (1..num_classes), matched within class."""
    out = {}
    for cls in range(1, num_classes + 1):
        out[cls] = pq(_class_submap(gt, cls), _class_submap(pred, cls), iou_threshold)
    return out


def multiclass_pq(
    gt_results: list[InstanceResult],
    pred_results: list[InstanceResult],
    num_classes: int,
    iou_threshold: float = 0.5,
) -> dict:
    """Dataset-level mPQ/mDQ/mSQ over classes present in gt or predictions."""
    if len(gt_results) != len(pred_results):
        raise ValueError("gt/pred lists differ in length")
    acc = {c: PQResult() for c in range(1, num_classes + 1)}
    for g, p in zip(gt_results, pred_results):
        for c, r in per_class_pq(g, p, num_classes, iou_threshold).items():
            acc[c] = acc[c] + r
    present = [c for c, r in acc.items() if not r.empty]
    if present:
        m_pq = float(np.mean([acc[c].pq for c in present]))
        m_dq = float(np.mean([acc[c].dq for c in present]))
        m_sq = float(np.mean([acc[c].sq for c in present]))
    else:
        m_pq = m_dq = m_sq = 1.0
    return {
        "mPQ": m_pq, "mDQ": m_dq, "mSQ": m_sq,
        "per_class": acc, "present_classes": present,
    }


def dice_counts(gt_fg: np.ndarray, pred_fg: np.ndarray) -> tuple[int, int]:
    """(2*|A∩B|, |A|+|B|) for foreground masks, for associative aggregation."""
    a = gt_fg.astype(bool)
    b = pred_fg.astype(bool)
    return 2 * int(np.logical_and(a, b).sum()), int(a.sum()) + int(b.sum())


def dice_score(gt_fg: np.ndarray, pred_fg: np.ndarray) -> float:
    num, den = dice_counts(gt_fg, pred_fg)
    return 1.0 if den == 0 else num / den


def aji_counts(gt: np.ndarray, pred: np.ndarray) -> tuple[int, int]:
    """Aggregated-Jaccard numerator and denominator for one image pair.

    Greedy in ascending gt id: each gt takes the unused overlapping pred
    with the highest IoU (ties to the lowest pred id) and contributes that
    pair's intersection and union; a gt with no available overlap
    contributes its own area to the union.  Unused pred areas are added to
    the union at the end.
    """
    _, _, inter, gt_areas, pred_areas = _contingency(gt, pred)
    used = np.zeros(pred_areas.size, dtype=bool)
    c = 0
    u = 0
    for gi in range(gt_areas.size):
        row = inter[gi]
        cand = np.flatnonzero((row > 0) & ~used)
        if cand.size == 0:
            u += int(gt_areas[gi])
            continue
        ious = row[cand] / (gt_areas[gi] + pred_areas[cand] - row[cand])
        best = cand[int(np.argmax(ious))]  # first max -> lowest pred id
        used[best] = True
        c += int(row[best])
        u += int(gt_areas[gi] + pred_areas[best] - row[best])
    u += int(pred_areas[~used].sum())
    return c, u


def aji(gt: np.ndarray, pred: np.ndarray) -> float:
    c, u = aji_counts(gt, pred)
    return 1.0 if u == 0 else c / u


def aggregate_report(
    pairs: list[tuple[InstanceResult, InstanceResult]], num_classes: int
) -> dict:
    """Full evaluation report over (gt, pred) result pairs."""
    binary = PQResult()
    dice_num = dice_den = 0
    aji_num = aji_den = 0
    for g, p in pairs:
        binary = binary + pq(g.inst_map, p.inst_map)
        dn, dd = dice_counts(g.inst_map > 0, p.inst_map > 0)
        dice_num += dn
        dice_den += dd
        an, ad = aji_counts(g.inst_map, p.inst_map)
        aji_num += an
        aji_den += ad
    mc = multiclass_pq([g for g, _ in pairs], [p for _, p in pairs], num_classes)
    return {
        "mPQ": mc["mPQ"],
        "mDQ": mc["mDQ"],
        "mSQ": mc["mSQ"],
        "bPQ": binary.pq,
        "DICE": 1.0 if dice_den == 0 else dice_num / dice_den,
        "AJI": 1.0 if aji_den == 0 else aji_num / aji_den,
        "per_class_PQ": {str(c): r.pq for c, r in mc["per_class"].items()
                         if c in mc["present_classes"]},
        "n_images": len(pairs),
    }
