"""Benchmark the compiled flood kernel against the pure-Python fallback.

Builds basin landscapes of increasing size (random disks with single-pixel
seeds at their centers, height = inverted distance transform), runs both
backends on identical inputs, and reports best-of-N wall times plus the
speedup.  Also asserts the two label outputs are bit-identical, which is
the contract the fallback is held to.

Run from the repository root:

    python3 benchmarks/bench_flood.py
    python3 benchmarks/bench_flood.py --sizes 128 256 512 1024 --repeats 5
"""

from __future__ import annotations

import argparse
import time

import numpy as np
from scipy import ndimage

from cellseg.postprocess.flood_py import flood as flood_python

try:
    from cellseg.postprocess._flood import flood as flood_compiled
except ImportError:  # pragma: no cover - depends on the built extension
    flood_compiled = None


def make_case(size: int, rng: np.random.Generator):
    """Random disks as foreground, centers as seeds, distance bowls as height."""
    fg = np.zeros((size, size), dtype=bool)
    seeds = np.zeros((size, size), dtype=np.int32)
    yy, xx = np.mgrid[0:size, 0:size]
    num = max(4, (size // 32) ** 2)
    for i in range(num):
        cy, cx = rng.integers(8, size - 8, size=2)
        r = int(rng.integers(4, 13))
        fg |= (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        seeds[cy, cx] = i + 1
    dist = ndimage.distance_transform_edt(fg)
    height = -dist / max(dist.max(), 1.0)
    seeds *= fg  # a later disk may have swallowed an earlier center
    return (
        np.ascontiguousarray(height, dtype=np.float64),
        seeds,
        np.ascontiguousarray(fg, dtype=np.uint8),
    )


def best_of(fn, height, seeds, mask, repeats: int) -> tuple[float, np.ndarray]:
    best = float("inf")
    out = None
    for _ in range(repeats):
        labels = seeds.copy()
        t0 = time.perf_counter()
        fn(height, labels, mask)
        best = min(best, time.perf_counter() - t0)
        out = labels
    return best, out


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", type=int, nargs="+", default=[128, 256, 512])
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    if flood_compiled is None:
        print("compiled backend not available; build the extension first")
        return

    rng = np.random.default_rng(args.seed)
    print(f"{'size':>6} {'fg pixels':>10} {'compiled':>12} {'python':>12} "
          f"{'speedup':>8} {'identical':>10}")
    for size in args.sizes:
        height, seeds, mask = make_case(size, rng)
        t_c, out_c = best_of(flood_compiled, height, seeds, mask, args.repeats)
        t_p, out_p = best_of(flood_python, height, seeds, mask, args.repeats)
        same = bool(np.array_equal(out_c, out_p))
        print(f"{size:>6} {int(mask.sum()):>10} {t_c * 1e3:>10.2f}ms "
              f"{t_p * 1e3:>10.2f}ms {t_p / t_c:>7.1f}x {str(same):>10}")
        if not same:
            raise SystemExit("backends disagree -- the fallback contract is broken")


if __name__ == "__main__":
    main()
