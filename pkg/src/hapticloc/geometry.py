"""Rigid-body poses and quaternion math.

Poses are 3D translations plus unit quaternions in (w, x, y, z) order.
All operations are pure and work in float64.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

QUAT_NORM_TOL = 1e-9


@dataclass(frozen=True)
class Pose:
    """SE(3) pose: translation in meters, rotation as a unit quaternion (w,x,y,z)."""

    t: np.ndarray = field(default_factory=lambda: np.zeros(3))
    q: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.float64).reshape(3)
        q = np.asarray(self.q, dtype=np.float64).reshape(4)
        if not np.all(np.isfinite(t)) or not np.all(np.isfinite(q)):
            raise ValueError("pose contains non-finite values")
        n = float(np.linalg.norm(q))
        if abs(n - 1.0) > QUAT_NORM_TOL:
            raise ValueError(f"quaternion norm {n!r} deviates from 1 by more than {QUAT_NORM_TOL}")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "q", q)

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    @staticmethod
    def from_xyzyaw(x: float, y: float, z: float, yaw: float) -> "Pose":
        return Pose(np.array([x, y, z], dtype=np.float64), quat_from_yaw(yaw))

    @staticmethod
    def from_rpy(t, roll: float, pitch: float, yaw: float) -> "Pose":
        return Pose(np.asarray(t, dtype=np.float64), quat_from_rpy(roll, pitch, yaw))

    def compose(self, other: "Pose") -> "Pose":
        """This pose applied first, then `other` relative to it: self * other."""
        return Pose(self.t + quat_rotate(self.q, other.t), quat_mul(self.q, other.q))

    def inverse(self) -> "Pose":
        qi = quat_conj(self.q)
        return Pose(-quat_rotate(qi, self.t), qi)

    def apply(self, v: np.ndarray) -> np.ndarray:
        """Transform a 3-vector from this pose's local frame into the parent frame."""
        return self.t + quat_rotate(self.q, np.asarray(v, dtype=np.float64).reshape(3))

    def yaw(self) -> float:
        w, x, y, z = self.q
        return math.atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))

    def equals(self, other: "Pose") -> bool:
        """Exact (bitwise) equality, with q and -q treated as distinct."""
        return bool(np.array_equal(self.t, other.t) and np.array_equal(self.q, other.q))


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return np.array(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ]
    )


def quat_conj(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64).reshape(4)
    n = float(np.linalg.norm(q))
    if n <= 0.0 or not math.isfinite(n):
        raise ValueError("cannot normalize zero or non-finite quaternion")
    return q / n


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vector v by unit quaternion q (v' = v + 2w(u x v) + 2 u x (u x v))."""
    u = q[1:4]
    t = 2.0 * np.cross(u, v)
    return v + q[0] * t + np.cross(u, t)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_from_yaw(yaw: float) -> np.ndarray:
    h = 0.5 * yaw
    return np.array([math.cos(h), 0.0, 0.0, math.sin(h)])


def quat_from_rpy(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Quaternion for intrinsic roll (x), pitch (y), yaw (z) applied as Rz Ry Rx."""
    cr, sr = math.cos(0.5 * roll), math.sin(0.5 * roll)
    cp, sp = math.cos(0.5 * pitch), math.sin(0.5 * pitch)
    cy, sy = math.cos(0.5 * yaw), math.sin(0.5 * yaw)
    return np.array(
        [
            cy * cp * cr + sy * sp * sr,
            cy * cp * sr - sy * sp * cr,
            cy * sp * cr + sy * cp * sr,
            sy * cp * cr - cy * sp * sr,
        ]
    )


def rotation_angle(q: np.ndarray) -> float:
    """Absolute rotation angle of a unit quaternion, in [0, pi]."""
    w = min(1.0, abs(float(q[0])))
    return 2.0 * math.acos(w)


def slerp(qa: np.ndarray, qb: np.ndarray, alpha: float) -> np.ndarray:
    """Spherical interpolation between unit quaternions; alpha in [0, 1].

    Returns qa exactly at alpha == 0 and qb exactly at alpha == 1.
    """
    if alpha == 0.0:
        return np.array(qa, dtype=np.float64)
    if alpha == 1.0:
        return np.array(qb, dtype=np.float64)
    qa = np.asarray(qa, dtype=np.float64)
    qb = np.asarray(qb, dtype=np.float64)
    dot = float(np.dot(qa, qb))
    if dot < 0.0:
        qb = -qb
        dot = -dot
    if dot > 1.0 - 1e-12:
        return quat_normalize(qa + alpha * (qb - qa))
    theta = math.acos(min(1.0, dot))
    s = math.sin(theta)
    wa = math.sin((1.0 - alpha) * theta) / s
    wb = math.sin(alpha * theta) / s
    return quat_normalize(wa * qa + wb * qb)


def interpolate_pose(a: Pose, b: Pose, alpha: float) -> Pose:
    """Linear in translation, spherical in rotation."""
    if alpha == 0.0:
        return a
    if alpha == 1.0:
        return b
    return Pose((1.0 - alpha) * a.t + alpha * b.t, slerp(a.q, b.q, alpha))


# Batched helpers over struct-of-array particle data.

def quat_mul_batch(qs: np.ndarray, q2: np.ndarray) -> np.ndarray:
    """Multiply each row of qs (N,4) by the matching row of q2 (N,4)."""
    w1, x1, y1, z1 = qs[:, 0], qs[:, 1], qs[:, 2], qs[:, 3]
    w2, x2, y2, z2 = q2[:, 0], q2[:, 1], q2[:, 2], q2[:, 3]
    return np.stack(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ],
        axis=1,
    )


def quat_rotate_batch(qs: np.ndarray, vs: np.ndarray) -> np.ndarray:
    """Rotate vs (N,3) by unit quaternions qs (N,4), row by row."""
    u = qs[:, 1:4]
    w = qs[:, 0:1]
    t = 2.0 * np.cross(u, vs)
    return vs + w * t + np.cross(u, t)


def quat_from_rpy_batch(rpy: np.ndarray) -> np.ndarray:
    """Row-wise quat_from_rpy for an (N,3) array of (roll, pitch, yaw)."""
    cr, sr = np.cos(0.5 * rpy[:, 0]), np.sin(0.5 * rpy[:, 0])
    cp, sp = np.cos(0.5 * rpy[:, 1]), np.sin(0.5 * rpy[:, 1])
    cy, sy = np.cos(0.5 * rpy[:, 2]), np.sin(0.5 * rpy[:, 2])
    return np.stack(
        [
            cy * cp * cr + sy * sp * sr,
            cy * cp * sr - sy * sp * cr,
            cy * sp * cr + sy * cp * sr,
            sy * cp * cr - cy * sp * sr,
        ],
        axis=1,
    )
