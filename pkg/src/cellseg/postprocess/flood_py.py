"""Pure-Python priority-flood kernel (fallback for the compiled version).

Claim-on-push region growing: every pixel enters the heap exactly once, so
the heap key (height, flat_index) is a total order and the result is fully
deterministic -- ties in height resolve by row-major pixel index.  The
compiled kernel in ``_flood.pyx`` implements the identical algorithm and
must produce bit-identical labels.
"""

from __future__ import annotations

import heapq

import numpy as np


def flood(height: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Grow seed labels over ``mask`` in increasing ``height`` order.

    Args:
        height: (H, W) float64 landscape (lower floods first).
        labels: (H, W) int32, seeds > 0; modified in place.
        mask:   (H, W) uint8/bool; growth is restricted to nonzero pixels.

    Returns the ``labels`` array.
    """
    h, w = height.shape
    flat_h = height.ravel()
    flat_l = labels.ravel()
    flat_m = mask.ravel()
    heap = [
        (float(flat_h[i]), int(i))
        for i in np.flatnonzero((flat_l > 0) & (flat_m != 0))
    ]
    heapq.heapify(heap)
    while heap:
        _, idx = heapq.heappop(heap)
        lab = flat_l[idx]
        y, x = divmod(idx, w)
        for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
            if 0 <= ny < h and 0 <= nx < w:
                nidx = ny * w + nx
                if flat_m[nidx] and flat_l[nidx] == 0:
                    flat_l[nidx] = lab
                    heapq.heappush(heap, (float(flat_h[nidx]), nidx))
    return labels
