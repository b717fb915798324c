"""Fixed derivative kernels shared by the HV loss and the postprocessor.

The horizontal/vertical kernels are the classic distance-weighted 5x5
derivative stencils: k[y, x] = x / (x^2 + y^2) for the horizontal kernel
(and the transpose for vertical), with the center tap zero.  They are
constants of the method, not learned parameters.
"""

from __future__ import annotations

import numpy as np

KERNEL_SIZE = 5


def derivative_kernels(size: int = KERNEL_SIZE) -> tuple[np.ndarray, np.ndarray]:
    """Return (kh, kv) float64 arrays of shape (size, size).

    ``kh`` responds to horizontal (x) derivatives, ``kv`` to vertical (y).
    """
    if size % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {size}")
    r = np.arange(-(size // 2), size // 2 + 1, dtype=np.float64)
    x, y = np.meshgrid(r, r)  # x varies along columns, y along rows
    denom = x * x + y * y
    denom[denom == 0] = 1.0  # center tap stays 0 because x=y=0 there
    kh = x / denom
    kv = y / denom
    return kh, kv
