"""Dataset manifest handling, sample IO and patient-disjoint splits."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from ..containers import InstanceResult, load_instance_result
from ..utils import read_json, write_json


@dataclass
class SampleRef:
    id: str
    image: str
    label: str
    tissue_class: int
    patient_id: str


@dataclass
class Manifest:
    root: Path
    samples: list[SampleRef]
    num_cell_classes: int
    num_tissue_classes: int
    class_names: list[str] = field(default_factory=list)
    magnification: str = "20x"
    image_size: int | None = None

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def patients(self) -> list[str]:
        seen: list[str] = []
        for s in self.samples:
            if s.patient_id not in seen:
                seen.append(s.patient_id)
        return seen


@dataclass
class Sample:
    id: str
    image: np.ndarray          # (H, W, 3) float32 in [0, 1]
    inst_map: np.ndarray       # (H, W) int32
    types: dict[int, int]
    tissue_class: int
    patient_id: str


def load_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    d = read_json(path)
    return Manifest(
        root=Path(d["root"]) if "root" in d else path.parent,
        samples=[SampleRef(**s) for s in d["samples"]],
        num_cell_classes=d["num_cell_classes"],
        num_tissue_classes=d["num_tissue_classes"],
        class_names=d.get("class_names", []),
        magnification=d.get("magnification", "20x"),
        image_size=d.get("image_size"),
    )


def save_manifest(manifest: Manifest, path: str | Path) -> Path:
    """Write a manifest; records the data root so copies resolve samples.

    Split manifests land in run directories, away from the images they
    reference, so the sample root is stored explicitly rather than inferred
    from the manifest's own location.
    """
    path = Path(path)
    d = {
        "root": str(manifest.root),
        "image_size": manifest.image_size,
        "magnification": manifest.magnification,
        "num_cell_classes": manifest.num_cell_classes,
        "num_tissue_classes": manifest.num_tissue_classes,
        "class_names": manifest.class_names,
        "samples": [vars(s) for s in manifest.samples],
    }
    write_json(d, path)
    return path


def load_sample(manifest: Manifest, ref: SampleRef) -> Sample:
    image = np.asarray(
        Image.open(manifest.root / ref.image).convert("RGB"), dtype=np.float32
    ) / 255.0
    label: InstanceResult = load_instance_result(manifest.root / ref.label)
    return Sample(
        id=ref.id,
        image=image,
        inst_map=label.inst_map,
        types=label.types,
        tissue_class=ref.tissue_class,
        patient_id=ref.patient_id,
    )


def split_by_patient(
    manifest: Manifest,
    ratios: tuple[float, float, float] = (0.64, 0.16, 0.20),
    seed: int = 0,
) -> tuple[Manifest, Manifest, Manifest]:
    """Patient-disjoint train/val/test split.

    Ratios apply to patients (rounded to whole patients, each nonzero split
    gets at least one patient).  Images of one patient never cross splits.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("ratios must sum to 1")
    patients = sorted(manifest.patients)
    n = len(patients)
    if n < sum(1 for r in ratios if r > 0):
        raise ValueError(f"only {n} patients for {ratios} split")
    rng = np.random.default_rng(seed)
    order = [patients[i] for i in rng.permutation(n)]
    n_val = max(1, round(n * ratios[1])) if ratios[1] > 0 else 0
    n_test = max(1, round(n * ratios[2])) if ratios[2] > 0 else 0
    n_train = n - n_val - n_test
    if n_train < 1:
        raise ValueError("not enough patients for a nonempty train split")
    groups = (
        set(order[:n_train]),
        set(order[n_train:n_train + n_val]),
        set(order[n_train + n_val:]),
    )

    def _sub(patient_set: set[str]) -> Manifest:
        return Manifest(
            root=manifest.root,
            samples=[s for s in manifest.samples if s.patient_id in patient_set],
            num_cell_classes=manifest.num_cell_classes,
            num_tissue_classes=manifest.num_tissue_classes,
            class_names=manifest.class_names,
            magnification=manifest.magnification,
            image_size=manifest.image_size,
        )

    return _sub(groups[0]), _sub(groups[1]), _sub(groups[2])
