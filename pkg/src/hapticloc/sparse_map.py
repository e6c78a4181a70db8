"""Sparse haptic map: one entry per mapping step.

Each entry stores the 2D foothold position, the terrain elevation at the
foothold, the step's signal embedding, and the originating step id. The map
is immutable after construction and answers exact 2D nearest-entry queries
(ties broken toward the lowest step id) through the kernel backend.

Embeddings are held as float32 (and stored that way on disk); positions and
elevations stay float64.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import net
from .kernels import NeighborIndex
from .signal_io import Trial

_MAGIC = b"HMAP\x00"
_VERSION = 1

DEFAULT_CELL_SIZE = 0.25


@dataclass(frozen=True)
class MapEntry:
    source_step_id: int
    xy: np.ndarray
    elevation: float
    embedding: np.ndarray


class SparseHapticMap:
    """Immutable set of map entries plus a 2D spatial index over xy."""

    def __init__(
        self,
        source_step_ids: np.ndarray,
        xy: np.ndarray,
        elevations: np.ndarray,
        embeddings: np.ndarray,
        cell_size: float = DEFAULT_CELL_SIZE,
    ):
        sid = np.asarray(source_step_ids, dtype=np.int64)
        xy = np.asarray(xy, dtype=np.float64)
        elev = np.asarray(elevations, dtype=np.float64)
        emb = np.asarray(embeddings, dtype=np.float32)
        n = sid.shape[0]
        if n == 0:
            raise ValueError("map must have at least one entry")
        if xy.shape != (n, 2) or elev.shape != (n,) or emb.ndim != 2 or emb.shape[0] != n:
            raise ValueError("entry array shapes disagree")
        order = np.argsort(sid, kind="stable")
        sid = sid[order]
        if np.any(np.diff(sid) <= 0):
            raise ValueError("source step ids must be unique")
        self.sid = sid
        self.xy = np.ascontiguousarray(xy[order])
        self.elevations = np.ascontiguousarray(elev[order])
        self.embeddings = np.ascontiguousarray(emb[order])
        self.embed_dim = int(emb.shape[1])
        self.cell_size = float(cell_size)
        self.index = NeighborIndex(self.xy, self.sid, cell_size)

    def __len__(self) -> int:
        return self.sid.shape[0]

    def entry(self, i: int) -> MapEntry:
        return MapEntry(
            int(self.sid[i]), self.xy[i].copy(), float(self.elevations[i]),
            self.embeddings[i].copy(),
        )

    def entries(self) -> list[MapEntry]:
        return [self.entry(i) for i in range(len(self))]

    def nearest(self, query_xy: np.ndarray) -> tuple[MapEntry, float]:
        """Closest entry in 2D and its true (not squared) distance."""
        idx, d2 = self.index.query(np.asarray(query_xy, dtype=np.float64))
        return self.entry(int(idx)), float(np.sqrt(d2))

    def nearest_batch(self, query_xy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Indices and squared 2D distances of the closest entry per query row."""
        return self.index.query(query_xy)


def build_map(
    trial: Trial, params: net.NetworkParams, cell_size: float = DEFAULT_CELL_SIZE
) -> SparseHapticMap:
    """One entry per step event, placed at the true foothold position.

    The entry position is the first two components of the event's true
    world foothold, the elevation its third, and the embedding an
    infer-mode forward pass of the event's signal.
    """
    for ev in trial.events:
        if ev.foothold_world_truth is None:
            raise ValueError(f"step {ev.step_id} has no ground-truth foothold")
    footholds = np.stack([ev.foothold_world_truth for ev in trial.events])
    signals = np.stack([ev.signal.samples for ev in trial.events])
    embeddings = net.embed(params, signals).astype(np.float32)
    sid = np.array([ev.step_id for ev in trial.events], dtype=np.int64)
    return SparseHapticMap(sid, footholds[:, :2], footholds[:, 2], embeddings, cell_size)


def _entry_dtype(embed_dim: int) -> np.dtype:
    return np.dtype(
        [("sid", "<i8"), ("x", "<f8"), ("y", "<f8"), ("e", "<f8"), ("emb", "<f4", (embed_dim,))]
    )


def save_map(m: SparseHapticMap, path: str) -> None:
    """Binary layout: magic, version, embed_dim, count, then per entry the
    step id, x, y, elevation (64-bit) and the float32 embedding."""
    rec = np.empty(len(m), dtype=_entry_dtype(m.embed_dim))
    rec["sid"] = m.sid
    rec["x"] = m.xy[:, 0]
    rec["y"] = m.xy[:, 1]
    rec["e"] = m.elevations
    rec["emb"] = m.embeddings
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<IIQ", _VERSION, m.embed_dim, len(m)))
        f.write(rec.tobytes())


def load_map(path: str, cell_size: float = DEFAULT_CELL_SIZE) -> SparseHapticMap:
    with open(path, "rb") as f:
        data = f.read()
    head = len(_MAGIC) + struct.calcsize("<IIQ")
    if len(data) < head or data[: len(_MAGIC)] != _MAGIC:
        raise ValueError(f"{path}: not a haptic map file")
    version, embed_dim, count = struct.unpack_from("<IIQ", data, len(_MAGIC))
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    dtype = _entry_dtype(embed_dim)
    expected = head + count * dtype.itemsize
    if len(data) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(data)}")
    rec = np.frombuffer(data[head:], dtype=dtype)
    xy = np.stack([rec["x"], rec["y"]], axis=1)
    return SparseHapticMap(rec["sid"], xy, rec["e"], rec["emb"], cell_size)
