"""Haptic localization for legged robots.

Force/torque step signals are embedded with a small transformer trained by
geometric triplet mining; embeddings live in a sparse 2D foothold map that
a particle filter matches against during later walks to correct drifting
odometry.
"""
from .geometry import Pose
from .kernels import BACKEND as kernel_backend
from .signal_io import HapticSignal, StepEvent, Trial, read_trial, write_trial

__version__ = "0.1.0"

__all__ = [
    "Pose",
    "HapticSignal",
    "StepEvent",
    "Trial",
    "read_trial",
    "write_trial",
    "kernel_backend",
    "__version__",
]
