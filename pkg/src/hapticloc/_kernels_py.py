"""Pure-numpy fallback for the nearest-neighbor kernel.

Brute force over all entries, chunked over queries to bound memory. The
arithmetic (per-axis difference, square, sum) mirrors the compiled kernel
exactly, and first-minimum argmin over entries sorted by step id gives the
same lowest-step-id tie-break, so both backends return identical results.
"""
from __future__ import annotations

import numpy as np

BACKEND = "pure"


def brute_nearest(
    xy: np.ndarray, qxy: np.ndarray, chunk: int = 512
) -> tuple[np.ndarray, np.ndarray]:
    """(index, squared distance) of the nearest entry for each query point."""
    n = qxy.shape[0]
    idx = np.empty(n, dtype=np.int64)
    d2 = np.empty(n, dtype=np.float64)
    for s in range(0, n, chunk):
        q = qxy[s : s + chunk]
        dx = q[:, 0, None] - xy[None, :, 0]
        dy = q[:, 1, None] - xy[None, :, 1]
        dist2 = dx * dx + dy * dy
        best = dist2.argmin(axis=1)
        idx[s : s + chunk] = best
        d2[s : s + chunk] = dist2[np.arange(q.shape[0]), best]
    return idx, d2
