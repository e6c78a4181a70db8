"""Backend selection for the localization hot loop.

The compiled extension is used when it imported successfully; setting the
environment variable HAPTICLOC_PURE to a non-empty value other than "0"
forces the numpy fallback. Both backends return bit-identical results, so
the choice only affects speed.
"""
from __future__ import annotations

import os

import numpy as np

from . import _kernels_py

_ck = None
if os.environ.get("HAPTICLOC_PURE", "0") in ("", "0"):
    try:
        from . import _kernels as _ck  # type: ignore[no-redef]
    except ImportError:
        _ck = None

BACKEND = "compiled" if _ck is not None else "pure"


class NeighborIndex:
    """2D nearest-entry lookup with lowest-step-id tie-breaking.

    Entries must be supplied sorted by ascending step id. The compiled
    backend builds a uniform grid over the entry bounding box; the pure
    backend brute-forces. query() returns squared distances.
    """

    def __init__(self, xy: np.ndarray, sid: np.ndarray, cell_size: float = 0.25):
        xy = np.ascontiguousarray(xy, dtype=np.float64)
        sid = np.ascontiguousarray(sid, dtype=np.int64)
        if xy.ndim != 2 or xy.shape[1] != 2 or xy.shape[0] == 0:
            raise ValueError(f"xy must be non-empty (M, 2), got {xy.shape}")
        if sid.shape != (xy.shape[0],):
            raise ValueError("sid must match xy rows")
        if np.any(np.diff(sid) <= 0):
            raise ValueError("entries must be sorted by strictly increasing step id")
        if cell_size <= 0.0:
            raise ValueError("cell_size must be positive")
        self.xy = xy
        self.sid = sid
        self.cell_size = float(cell_size)
        if _ck is not None:
            self._build_grid()

    def _build_grid(self):
        xy, cell = self.xy, self.cell_size
        self._x0 = float(xy[:, 0].min())
        self._y0 = float(xy[:, 1].min())
        nx = max(1, int(np.floor((xy[:, 0].max() - self._x0) / cell)) + 1)
        ny = max(1, int(np.floor((xy[:, 1].max() - self._y0) / cell)) + 1)
        ix = np.minimum((xy[:, 0] - self._x0) // cell, nx - 1).astype(np.int64)
        iy = np.minimum((xy[:, 1] - self._y0) // cell, ny - 1).astype(np.int64)
        cell_id = ix * ny + iy
        self._order = np.argsort(cell_id, kind="stable").astype(np.int64)
        counts = np.bincount(cell_id, minlength=nx * ny)
        self._starts = np.zeros(nx * ny + 1, dtype=np.int64)
        np.cumsum(counts, out=self._starts[1:])
        self._nx, self._ny = nx, ny

    def query(self, qxy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Nearest entry index and squared 2D distance per query row."""
        qxy = np.ascontiguousarray(qxy, dtype=np.float64)
        squeeze = qxy.ndim == 1
        if squeeze:
            qxy = qxy[None, :]
        if qxy.ndim != 2 or qxy.shape[1] != 2:
            raise ValueError(f"queries must be (n, 2), got {qxy.shape}")
        if _ck is not None:
            idx, d2 = _ck.ring_nearest(
                self.xy, self.sid, self._x0, self._y0, self.cell_size,
                self._nx, self._ny, self._starts, self._order, qxy,
            )
        else:
            idx, d2 = _kernels_py.brute_nearest(self.xy, qxy)
        if squeeze:
            return idx[0], d2[0]
        return idx, d2
