"""Named parameter registry and the binary checkpoint format.

Checkpoint layout (little-endian throughout)::

    bytes 0..4    magic b"CVTA1"
    bytes 5..12   uint64 header length in bytes
    header        UTF-8 JSON: {"params": [{"name", "shape", "dtype",
                  "offset", "nbytes"}, ...], "meta": {...}}
    payload       concatenated raw tensor bytes in header order

Offsets are relative to the start of the payload.  Supported dtype tags are
"f4" (float32) and "f8" (float64); round-trips are bitwise because nothing
is ever cast.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
import torch

from .utils import sha256_bytes

MAGIC = b"CVTA1"
_DTYPE_TAGS = {np.dtype("<f4"): "f4", np.dtype("<f8"): "f8"}
_TAG_DTYPES = {"f4": np.dtype("<f4"), "f8": np.dtype("<f8")}


@dataclass
class ParameterRegistry:
    """Flat name -> array store with component groups and trainable flags.

    Groups are the first dotted component of each name ("encoder",
    "adapter", "decoder").  Names are unique and shapes are fixed at
    registration time.
    """

    _params: dict[str, np.ndarray] = field(default_factory=dict)
    _trainable: dict[str, bool] = field(default_factory=dict)

    def register(self, name: str, array: np.ndarray, trainable: bool = True) -> None:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name!r}")
        arr = np.ascontiguousarray(array)
        if arr.dtype not in _DTYPE_TAGS:
            raise ValueError(f"unsupported dtype {arr.dtype} for {name!r} (use float32/float64)")
        self._params[name] = arr
        self._trainable[name] = trainable

    def update(self, name: str, array: np.ndarray) -> None:
        if name not in self._params:
            raise KeyError(name)
        if tuple(array.shape) != self._params[name].shape:
            raise ValueError(
                f"shape mismatch for {name!r}: registered {self._params[name].shape}, "
                f"got {tuple(array.shape)}"
            )
        self._params[name] = np.ascontiguousarray(array)

    def get(self, name: str) -> np.ndarray:
        return self._params[name]

    def names(self) -> list[str]:
        return list(self._params.keys())

    def items(self):
        return self._params.items()

    def __len__(self) -> int:
        return len(self._params)

    def __contains__(self, name: str) -> bool:
        return name in self._params

    @property
    def groups(self) -> list[str]:
        seen = []
        for name in self._params:
            g = name.split(".", 1)[0]
            if g not in seen:
                seen.append(g)
        return seen

    def group_names(self, group: str) -> list[str]:
        prefix = group + "."
        return [n for n in self._params if n.startswith(prefix) or n == group]

    def trainable(self, name: str) -> bool:
        return self._trainable[name]

    # -- torch interop -----------------------------------------------------

    @classmethod
    def from_model(cls, model: torch.nn.Module) -> "ParameterRegistry":
        """Capture parameters plus floating-point buffers.

        BatchNorm running statistics live in buffers, not parameters, and
        eval-mode outputs are wrong without them.  Integer bookkeeping
        buffers (batch counters) are skipped: the store is float-only and
        they do not influence normalization at fixed momentum.
        """
        reg = cls()
        for name, p in model.named_parameters():
            reg.register(name, p.detach().cpu().numpy().copy(), trainable=p.requires_grad)
        for name, b in model.named_buffers():
            if b.dtype in (torch.float32, torch.float64):
                reg.register(name, b.detach().cpu().numpy().copy(), trainable=False)
        return reg

    def load_into_model(self, model: torch.nn.Module, strict: bool = True) -> None:
        targets = dict(model.named_parameters())
        targets.update(
            (n, b) for n, b in model.named_buffers()
            if b.dtype in (torch.float32, torch.float64)
        )
        _check_name_sets(set(self._params), set(targets), strict, "model")
        with torch.no_grad():
            for name, arr in self._params.items():
                if name not in targets:
                    continue
                p = targets[name]
                if tuple(p.shape) != arr.shape:
                    raise ValueError(
                        f"shape mismatch for parameter {name!r}: "
                        f"checkpoint {arr.shape}, model {tuple(p.shape)}"
                    )
                p.copy_(torch.from_numpy(arr).to(p.dtype))


def _check_name_sets(have: set, want: set, strict: bool, target: str) -> None:
    missing = sorted(want - have)
    extra = sorted(have - want)
    if strict and (missing or extra):
        raise KeyError(
            f"checkpoint/{target} name mismatch: {len(missing)} missing "
            f"(e.g. {missing[:3]}), {len(extra)} unexpected (e.g. {extra[:3]})"
        )


def save_checkpoint(
    registry: ParameterRegistry | Mapping[str, np.ndarray],
    path: str | Path,
    meta: dict | None = None,
) -> Path:
    """Serialize a registry (or plain name->array mapping) to ``path``."""
    items = registry.items() if hasattr(registry, "items") else registry
    entries = []
    blobs = []
    offset = 0
    for name, arr in items:
        arr = np.ascontiguousarray(arr)
        dt = arr.dtype.newbyteorder("<")
        if np.dtype(dt) not in _DTYPE_TAGS:
            raise ValueError(f"unsupported dtype {arr.dtype} for {name!r}")
        raw = arr.astype(dt, copy=False).tobytes()
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": _DTYPE_TAGS[np.dtype(dt)],
            "offset": offset,
            "nbytes": len(raw),
        })
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"params": entries, "meta": meta or {}}).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(len(header).to_bytes(8, "little"))
        f.write(header)
        for raw in blobs:
            f.write(raw)
    return path


def load_checkpoint(path: str | Path) -> tuple[ParameterRegistry, dict]:
    """Read a checkpoint back into a registry; returns (registry, meta)."""
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        (header_len,) = (int.from_bytes(f.read(8), "little"),)
        header = json.loads(f.read(header_len).decode("utf-8"))
        payload = f.read()
    reg = ParameterRegistry()
    for e in header["params"]:
        dt = _TAG_DTYPES[e["dtype"]]
        raw = payload[e["offset"]: e["offset"] + e["nbytes"]]
        if len(raw) != e["nbytes"]:
            raise ValueError(f"{path}: truncated payload for {e['name']!r}")
        arr = np.frombuffer(raw, dtype=dt).reshape(e["shape"]).copy()
        reg.register(e["name"], arr)
    return reg, header.get("meta", {})


def load_into_model(path: str | Path, model: torch.nn.Module, strict: bool = True) -> dict:
    reg, meta = load_checkpoint(path)
    reg.load_into_model(model, strict=strict)
    return meta


def group_checksum(model: torch.nn.Module, prefix: str) -> str:
    """SHA-256 over the raw bytes of all parameters under ``prefix``, in name order."""
    h_parts: list[bytes] = []
    for name, p in sorted(model.named_parameters()):
        if name.startswith(prefix + ".") or name == prefix:
            h_parts.append(name.encode("utf-8"))
            h_parts.append(p.detach().cpu().numpy().tobytes())
    if not h_parts:
        raise ValueError(f"no parameters under prefix {prefix!r}")
    return sha256_bytes(b"".join(h_parts))


def parameter_names(model: torch.nn.Module, prefix: str | None = None) -> list[str]:
    names = [n for n, _ in model.named_parameters()]
    if prefix is not None:
        names = [n for n in names if n.startswith(prefix + ".")]
    return names
