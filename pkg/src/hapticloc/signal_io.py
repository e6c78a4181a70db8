"""Step-event data model and the on-disk trial format.

A trial is stored as JSON Lines: one header record, then one record per
step event with the 160x6 force/torque window flattened row-major.
All values are written with full round-trip precision, so
write_trial -> read_trial is the identity on every numeric field.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import Pose

SIGNAL_LEN = 160
SIGNAL_CHANNELS = 6


class TrialFormatError(ValueError):
    """Malformed trial file (parse error or invariant violation)."""


@dataclass(frozen=True)
class HapticSignal:
    """One touchdown window: 160 samples x 6 channels (Fx,Fy,Fz in N, Tx,Ty,Tz in Nm)."""

    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.shape != (SIGNAL_LEN, SIGNAL_CHANNELS):
            raise ValueError(f"signal shape {s.shape} != ({SIGNAL_LEN}, {SIGNAL_CHANNELS})")
        if not np.all(np.isfinite(s)):
            raise ValueError("signal contains non-finite values")
        object.__setattr__(self, "samples", s)


@dataclass(frozen=True)
class StepEvent:
    """One foot touchdown with its signal window, geometry, and optional ground truth."""

    step_id: int
    timestamp: float
    foot_id: int
    signal: HapticSignal
    foothold_base: np.ndarray  # foot position in the base frame, meters
    odom_pose: Pose
    truth_pose: Optional[Pose] = None
    foothold_world_truth: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.foot_id not in (0, 1, 2, 3):
            raise ValueError(f"foot_id {self.foot_id} not in 0..3 (step {self.step_id})")
        fb = np.asarray(self.foothold_base, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(fb)):
            raise ValueError(f"non-finite foothold_base (step {self.step_id})")
        object.__setattr__(self, "foothold_base", fb)
        if self.foothold_world_truth is not None:
            fw = np.asarray(self.foothold_world_truth, dtype=np.float64).reshape(3)
            if not np.all(np.isfinite(fw)):
                raise ValueError(f"non-finite foothold_world_truth (step {self.step_id})")
            object.__setattr__(self, "foothold_world_truth", fw)
        if self.truth_pose is not None and self.foothold_world_truth is None:
            raise ValueError(
                f"foothold_world_truth missing although truth_pose is present (step {self.step_id})"
            )


@dataclass
class Trial:
    """Ordered sequence of step events from one walk."""

    trial_id: str
    events: list[StepEvent]
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.events:
            raise ValueError(f"empty trial {self.trial_id!r}")
        prev = None
        for ev in self.events:
            if prev is not None:
                if ev.step_id <= prev.step_id:
                    raise ValueError(
                        f"step_id {ev.step_id} does not increase after {prev.step_id}"
                        f" in trial {self.trial_id!r}"
                    )
                if ev.timestamp <= prev.timestamp:
                    raise ValueError(
                        f"timestamp not strictly increasing at step_id {ev.step_id}"
                        f" in trial {self.trial_id!r}"
                    )
            prev = ev


def _pose_to_json(p: Pose) -> dict:
    return {"t": p.t.tolist(), "q": p.q.tolist()}


def _pose_from_json(obj) -> Pose:
    return Pose(np.array(obj["t"], dtype=np.float64), np.array(obj["q"], dtype=np.float64))


def _event_to_json(ev: StepEvent) -> dict:
    rec = {
        "step_id": ev.step_id,
        "timestamp": ev.timestamp,
        "foot_id": ev.foot_id,
        "signal": ev.signal.samples.reshape(-1).tolist(),
        "foothold_base": ev.foothold_base.tolist(),
        "odom_pose": _pose_to_json(ev.odom_pose),
    }
    if ev.truth_pose is not None:
        rec["truth_pose"] = _pose_to_json(ev.truth_pose)
    if ev.foothold_world_truth is not None:
        rec["foothold_world_truth"] = ev.foothold_world_truth.tolist()
    return rec


def _event_from_json(rec: dict, line_no: int) -> StepEvent:
    step_id = rec.get("step_id")
    try:
        sig = np.array(rec["signal"], dtype=np.float64)
        if sig.size != SIGNAL_LEN * SIGNAL_CHANNELS or sig.ndim != 1:
            raise ValueError(
                f"signal has {sig.size} values, expected {SIGNAL_LEN * SIGNAL_CHANNELS}"
                f" (step_id {step_id})"
            )
        truth = rec.get("truth_pose")
        fwt = rec.get("foothold_world_truth")
        return StepEvent(
            step_id=int(rec["step_id"]),
            timestamp=float(rec["timestamp"]),
            foot_id=int(rec["foot_id"]),
            signal=HapticSignal(sig.reshape(SIGNAL_LEN, SIGNAL_CHANNELS)),
            foothold_base=np.array(rec["foothold_base"], dtype=np.float64),
            odom_pose=_pose_from_json(rec["odom_pose"]),
            truth_pose=_pose_from_json(truth) if truth is not None else None,
            foothold_world_truth=np.array(fwt, dtype=np.float64) if fwt is not None else None,
        )
    except KeyError as e:
        raise TrialFormatError(f"line {line_no}: missing field {e.args[0]!r}") from e
    except ValueError as e:
        raise TrialFormatError(f"line {line_no}: {e}") from e


def write_trial(trial: Trial, path: str) -> None:
    """Write a trial as JSON Lines (.trial.jsonl)."""
    with open(path, "w", encoding="utf-8") as f:
        header = {"trial_id": trial.trial_id, "metadata": trial.metadata}
        f.write(json.dumps(header, allow_nan=False) + "\n")
        for ev in trial.events:
            f.write(json.dumps(_event_to_json(ev), allow_nan=False) + "\n")


def read_trial(path: str) -> Trial:
    """Read and validate a .trial.jsonl file; raises TrialFormatError on any defect."""
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    events: list[StepEvent] = []
    header = None
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise TrialFormatError(f"line {line_no}: invalid JSON: {e.msg}") from e
            if header is None:
                if "trial_id" not in rec:
                    raise TrialFormatError(f"line {line_no}: header record lacks trial_id")
                header = rec
            else:
                events.append(_event_from_json(rec, line_no))
    if header is None:
        raise TrialFormatError("empty trial: file has no header record")
    if not events:
        raise TrialFormatError(f"empty trial {header['trial_id']!r}: no step events")
    try:
        return Trial(
            trial_id=str(header["trial_id"]),
            events=events,
            metadata={str(k): str(v) for k, v in header.get("metadata", {}).items()},
        )
    except ValueError as e:
        raise TrialFormatError(str(e)) from e
