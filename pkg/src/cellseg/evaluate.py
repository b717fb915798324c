"""Dataset evaluation: ground-truth manifest vs a directory of predictions."""

from __future__ import annotations

import logging
from pathlib import Path

from .containers import load_instance_result
from .data.manifest import load_manifest
from .metrics import aggregate_report
from .postprocess import relabel
from .utils import write_json

log = logging.getLogger(__name__)


def evaluate_predictions(
    manifest_path: str | Path,
    pred_dir: str | Path,
    report_path: str | Path | None = None,
) -> dict:
    """Compute the full metric report; missing predictions are listed, not fatal."""
    manifest = load_manifest(manifest_path)
    pred_dir = Path(pred_dir)
    pairs = []
    missing = []
    for ref in manifest.samples:
        base = pred_dir / f"{ref.id}_inst"
        if not base.with_suffix(".png").exists():
            missing.append(ref.id)
            continue
        gt = load_instance_result(manifest.root / ref.label)
        gt.inst_map = relabel(gt.inst_map)
        pred = load_instance_result(base)
        pairs.append((gt, pred))
    report = aggregate_report(pairs, manifest.num_cell_classes)
    report["missing"] = missing
    if missing:
        log.warning("missing predictions for %d samples: %s", len(missing), missing[:5])
    if report_path is not None:
        write_json(report, report_path)
    return report
