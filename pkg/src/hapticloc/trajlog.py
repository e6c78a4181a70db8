"""Estimated-trajectory log produced by the localizer.

One record per step event: timestamp, step id, estimated pose, ground-truth
pose, and the effective sample size of the particle set after the weight
update (before any resampling). Serialized as CSV with the columns
timestamp,step_id,est_t*,est_q*,truth_t*,truth_q* (quaternions w,x,y,z)
and ess; float fields use shortest round-trip formatting, so writing is
deterministic and reading recovers the exact values.
"""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose

_COLUMNS = (
    ["timestamp", "step_id"]
    + [f"est_{c}" for c in ("tx", "ty", "tz", "qw", "qx", "qy", "qz")]
    + [f"truth_{c}" for c in ("tx", "ty", "tz", "qw", "qx", "qy", "qz")]
    + ["ess"]
)


@dataclass
class TrajectoryLog:
    trial_id: str
    timestamps: list[float] = field(default_factory=list)
    step_ids: list[int] = field(default_factory=list)
    est_poses: list[Pose] = field(default_factory=list)
    truth_poses: list[Pose] = field(default_factory=list)
    ess: list[float] = field(default_factory=list)

    def append(self, timestamp: float, step_id: int, est: Pose, truth: Pose, ess: float):
        self.timestamps.append(float(timestamp))
        self.step_ids.append(int(step_id))
        self.est_poses.append(est)
        self.truth_poses.append(truth)
        self.ess.append(float(ess))

    def __len__(self) -> int:
        return len(self.timestamps)


def write_trajectory(log: TrajectoryLog, path: str) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(_COLUMNS)
        for i in range(len(log)):
            e, t = log.est_poses[i], log.truth_poses[i]
            row = (
                [repr(log.timestamps[i]), log.step_ids[i]]
                + [repr(float(v)) for v in (*e.t, *e.q, *t.t, *t.q)]
                + [repr(log.ess[i])]
            )
            w.writerow(row)


def read_trajectory(path: str, trial_id: str | None = None) -> TrajectoryLog:
    if trial_id is None:
        trial_id = os.path.basename(path).split(".")[0]
    log = TrajectoryLog(trial_id)
    with open(path, newline="") as f:
        r = csv.reader(f)
        header = next(r, None)
        if header != _COLUMNS:
            raise ValueError(f"{path}: unexpected trajectory header {header}")
        for ln, row in enumerate(r, start=2):
            if len(row) != len(_COLUMNS):
                raise ValueError(f"{path}:{ln}: expected {len(_COLUMNS)} fields")
            vals = [float(v) for v in row]
            log.append(
                vals[0],
                int(row[1]),
                Pose(np.array(vals[2:5]), np.array(vals[5:9])),
                Pose(np.array(vals[9:12]), np.array(vals[12:16])),
                vals[16],
            )
    return log
