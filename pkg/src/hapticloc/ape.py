"""Absolute pose error between estimated and ground-truth trajectories.

Per record the error transform is T = P^-1 G (estimate P, ground truth G,
both in the shared world frame; no alignment step). t_3D is the norm of
T's translation and t_2D the norm of its first two components, so t_2D
ignores elevation error and never exceeds t_3D. Ground truth sampled at
different timestamps is interpolated linearly in translation and
spherically in rotation; records outside the truth time range are excluded
and counted.
"""
from __future__ import annotations

import bisect
import json
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .geometry import Pose, interpolate_pose
from .signal_io import Trial
from .trajlog import TrajectoryLog


class PoseTrajectory:
    """Time-indexed poses with interpolation at arbitrary query times."""

    def __init__(self, timestamps: Sequence[float], poses: Sequence[Pose]):
        self.timestamps = [float(t) for t in timestamps]
        self.poses = list(poses)
        if len(self.timestamps) != len(self.poses) or not self.poses:
            raise ValueError("need equally many timestamps and poses, at least one")
        if any(b <= a for a, b in zip(self.timestamps, self.timestamps[1:])):
            raise ValueError("timestamps must be strictly increasing")

    def covers(self, t: float) -> bool:
        return self.timestamps[0] <= t <= self.timestamps[-1]

    def pose_at(self, t: float) -> Pose:
        """Stored pose exactly at a known timestamp, interpolated otherwise."""
        if not self.covers(t):
            raise ValueError(f"time {t} outside [{self.timestamps[0]}, {self.timestamps[-1]}]")
        i = bisect.bisect_left(self.timestamps, t)
        if i < len(self.timestamps) and self.timestamps[i] == t:
            return self.poses[i]
        lo, hi = i - 1, i
        alpha = (t - self.timestamps[lo]) / (self.timestamps[hi] - self.timestamps[lo])
        return interpolate_pose(self.poses[lo], self.poses[hi], alpha)


@dataclass
class ApeSummary:
    trial_id: str
    t2d: np.ndarray
    t3d: np.ndarray
    n_excluded: int = 0

    @property
    def n_steps(self) -> int:
        return self.t2d.shape[0]

    @staticmethod
    def _agg(x: np.ndarray) -> dict:
        return {
            "mean": float(np.mean(x)),
            "rmse": float(np.sqrt(np.mean(x * x))),
            "median": float(np.median(x)),
            "max": float(np.max(x)),
        }

    def to_dict(self) -> dict:
        return {
            "trial_id": self.trial_id,
            "n_steps": self.n_steps,
            "n_excluded": self.n_excluded,
            "t2d": self._agg(self.t2d),
            "t3d": self._agg(self.t3d),
        }

    def write_json(self, path: str) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write("\n")


def pose_error(estimate: Pose, truth: Pose) -> tuple[float, float]:
    """(t_2D, t_3D) of the error transform estimate^-1 truth."""
    T = estimate.inverse().compose(truth)
    return float(np.linalg.norm(T.t[:2])), float(np.linalg.norm(T.t))


def ape(log: TrajectoryLog, truth: Optional[PoseTrajectory] = None) -> ApeSummary:
    """Summarize the log's pose errors against ground truth.

    With truth=None the per-record ground truth embedded in the log is
    used directly; otherwise the given trajectory is sampled at each record
    timestamp, excluding (with a warning) records outside its time range.
    """
    t2d, t3d = [], []
    n_excluded = 0
    for i in range(len(log)):
        if truth is None:
            g = log.truth_poses[i]
        else:
            ts = log.timestamps[i]
            if not truth.covers(ts):
                n_excluded += 1
                continue
            g = truth.pose_at(ts)
        e2, e3 = pose_error(log.est_poses[i], g)
        t2d.append(e2)
        t3d.append(e3)
    if n_excluded:
        warnings.warn(f"{n_excluded} records outside the ground-truth time range")
    if not t2d:
        raise ValueError("no records with ground truth to evaluate")
    return ApeSummary(log.trial_id, np.array(t2d), np.array(t3d), n_excluded)


def odometry_log(trial: Trial) -> TrajectoryLog:
    """Trajectory log using raw odometry as the estimate (the baseline)."""
    log = TrajectoryLog(trial.trial_id)
    for ev in trial.events:
        if ev.truth_pose is None:
            raise ValueError(f"step {ev.step_id} has no ground-truth pose")
        log.append(ev.timestamp, ev.step_id, ev.odom_pose, ev.truth_pose, float("nan"))
    return log


def truth_trajectory(trial: Trial) -> PoseTrajectory:
    """Ground-truth trajectory of a trial, for interpolated evaluation."""
    stamps = [ev.timestamp for ev in trial.events]
    poses = []
    for ev in trial.events:
        if ev.truth_pose is None:
            raise ValueError(f"step {ev.step_id} has no ground-truth pose")
        poses.append(ev.truth_pose)
    return PoseTrajectory(stamps, poses)
