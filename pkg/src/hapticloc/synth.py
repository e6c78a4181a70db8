"""Synthetic worlds and trials for desk-scale experiments.

A world partitions a rectangular arena into Voronoi terrain regions, each
with its own base force/torque touchdown waveform (a sum of three damped
sinusoids per channel). On top of that, smooth low-frequency per-channel
modulation fields vary the waveform amplitudes with position, so signals
recorded close together are more alike than signals far apart; a smooth
elevation field gives every foothold a height. Trials walk a quadruped
body along a waypoint route, cycling four feet, with exact ground-truth
poses and odometry corrupted by body-frame accumulated drift plus white
noise. Everything is deterministic given the seeds.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .geometry import Pose, quat_from_yaw
from .signal_io import SIGNAL_CHANNELS, SIGNAL_LEN, HapticSignal, StepEvent, Trial

CHANNEL_SCALES = np.array([30.0, 30.0, 90.0, 5.0, 5.0, 2.0])
FOOT_OFFSETS = np.array([
    [0.25, 0.18],
    [0.25, -0.18],
    [-0.25, 0.18],
    [-0.25, -0.18],
])
STEP_PERIOD = 0.7


@dataclass(frozen=True)
class WorldConfig:
    arena_w: float = 3.5
    arena_h: float = 7.0
    n_regions: int = 8
    elevation_amp: float = 0.08
    elevation_waves: int = 6
    mod_depth: float = 0.8
    mod_waves: int = 10
    noise_frac: float = 0.02
    step_length: float = 0.15
    body_height: float = 0.42
    seed: int = 0

    def __post_init__(self):
        if self.arena_w <= 0 or self.arena_h <= 0:
            raise ValueError("arena dimensions must be positive")
        if self.n_regions < 1:
            raise ValueError("n_regions must be >= 1")
        if self.elevation_waves < 1 or self.mod_waves < 1:
            raise ValueError("wave counts must be >= 1")
        if not (0.0 <= self.mod_depth < 1.0):
            raise ValueError("mod_depth must be in [0, 1)")
        if self.noise_frac < 0 or self.step_length <= 0:
            raise ValueError("noise_frac must be >= 0 and step_length > 0")


@dataclass(frozen=True)
class OdometryNoiseConfig:
    trans_drift_per_m: float = 0.0
    yaw_drift_per_rad: float = 0.0
    trans_noise_std: float = 0.0
    yaw_noise_std: float = 0.0

    def __post_init__(self):
        if min(asdict(self).values()) < 0.0:
            raise ValueError("odometry noise parameters must be >= 0")


class World:
    """Sampled terrain model; all fields are defined on the whole plane."""

    def __init__(
        self,
        config: WorldConfig,
        sites: np.ndarray,
        elev_amp: np.ndarray,
        elev_k: np.ndarray,
        elev_phase: np.ndarray,
        wave_amp: np.ndarray,
        wave_decay: np.ndarray,
        wave_freq: np.ndarray,
        wave_phase: np.ndarray,
        mod_weight: np.ndarray,
        mod_k: np.ndarray,
        mod_phase: np.ndarray,
    ):
        self.config = config
        self.sites = sites
        self.elev_amp = elev_amp
        self.elev_k = elev_k
        self.elev_phase = elev_phase
        self.wave_amp = wave_amp
        self.wave_decay = wave_decay
        self.wave_freq = wave_freq
        self.wave_phase = wave_phase
        self.mod_weight = mod_weight
        self.mod_k = mod_k
        self.mod_phase = mod_phase
        # base touchdown waveform per region, (R, SIGNAL_LEN, SIGNAL_CHANNELS)
        tau = ((np.arange(SIGNAL_LEN) + 0.5) / SIGNAL_LEN)[None, None, :, None]
        comp = (
            wave_amp[:, :, None, :]
            * np.exp(-wave_decay[:, :, None, :] * tau)
            * np.sin(2.0 * np.pi * wave_freq[:, :, None, :] * tau + wave_phase[:, :, None, :])
        )
        self.base = (comp.sum(axis=3) * CHANNEL_SCALES[None, :, None]).transpose(0, 2, 1)

    def region_of(self, xy: np.ndarray) -> np.ndarray:
        xy = np.atleast_2d(np.asarray(xy, dtype=np.float64))
        d2 = ((xy[:, None, :] - self.sites[None, :, :]) ** 2).sum(axis=2)
        return d2.argmin(axis=1)

    def elevation(self, xy: np.ndarray) -> np.ndarray:
        xy = np.atleast_2d(np.asarray(xy, dtype=np.float64))
        phase = xy @ self.elev_k.T + self.elev_phase
        w = self.elev_amp / self.elev_amp.sum()
        return self.config.elevation_amp * (np.cos(phase) @ w)

    def modulation(self, xy: np.ndarray) -> np.ndarray:
        """(n, SIGNAL_CHANNELS) multiplicative amplitude factors at each point."""
        xy = np.atleast_2d(np.asarray(xy, dtype=np.float64))
        phase = np.einsum("nk,cmk->ncm", xy, self.mod_k) + self.mod_phase
        w = self.mod_weight / self.mod_weight.sum(axis=1, keepdims=True)
        return 1.0 + self.config.mod_depth * np.einsum("ncm,cm->nc", np.cos(phase), w)

    def signature(self, xy: np.ndarray) -> np.ndarray:
        """Noiseless signal(s) at the given point(s): (n, SIGNAL_LEN, SIGNAL_CHANNELS),
        squeezed to a single signal for a single point."""
        single = np.asarray(xy).ndim == 1
        xy = np.atleast_2d(np.asarray(xy, dtype=np.float64))
        sig = self.base[self.region_of(xy)] * self.modulation(xy)[:, None, :]
        return sig[0] if single else sig

    def to_dict(self) -> dict:
        return {
            "format": "hapticloc-world",
            "version": 1,
            "config": asdict(self.config),
            "sites": self.sites.tolist(),
            "elevation": {
                "amp": self.elev_amp.tolist(),
                "k": self.elev_k.tolist(),
                "phase": self.elev_phase.tolist(),
            },
            "waveforms": {
                "amp": self.wave_amp.tolist(),
                "decay": self.wave_decay.tolist(),
                "freq": self.wave_freq.tolist(),
                "phase": self.wave_phase.tolist(),
            },
            "modulation": {
                "weight": self.mod_weight.tolist(),
                "k": self.mod_k.tolist(),
                "phase": self.mod_phase.tolist(),
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "World":
        if d.get("format") != "hapticloc-world" or d.get("version") != 1:
            raise ValueError("not a version-1 world file")
        e, w, m = d["elevation"], d["waveforms"], d["modulation"]
        return cls(
            WorldConfig(**d["config"]),
            np.array(d["sites"]),
            np.array(e["amp"]), np.array(e["k"]), np.array(e["phase"]),
            np.array(w["amp"]), np.array(w["decay"]), np.array(w["freq"]),
            np.array(w["phase"]),
            np.array(m["weight"]), np.array(m["k"]), np.array(m["phase"]),
        )


def generate_world(cfg: WorldConfig) -> World:
    """Draw a world from cfg.seed. Draw order is fixed: region sites,
    elevation field, waveform coefficients, modulation fields."""
    rng = np.random.default_rng(cfg.seed)
    sites = rng.uniform(0.0, 1.0, (cfg.n_regions, 2)) * [cfg.arena_w, cfg.arena_h]

    k = cfg.elevation_waves
    elev_amp = rng.uniform(0.5, 1.0, k)
    theta = rng.uniform(0.0, 2.0 * np.pi, k)
    wavelen = rng.uniform(1.0, 3.0, k)
    elev_k = (2.0 * np.pi / wavelen)[:, None] * np.stack([np.cos(theta), np.sin(theta)], axis=1)
    elev_phase = rng.uniform(0.0, 2.0 * np.pi, k)

    shape = (cfg.n_regions, SIGNAL_CHANNELS, 3)
    wave_amp = rng.uniform(0.4, 1.0, shape)
    wave_decay = rng.uniform(1.0, 5.0, shape)
    wave_freq = rng.uniform(2.0, 16.0, shape)
    wave_phase = rng.uniform(0.0, 2.0 * np.pi, shape)

    m = cfg.mod_waves
    mod_weight = rng.uniform(0.5, 1.0, (SIGNAL_CHANNELS, m))
    theta_m = rng.uniform(0.0, 2.0 * np.pi, (SIGNAL_CHANNELS, m))
    # multi-scale wavelengths: short waves give fine position texture, long
    # waves disambiguate globally
    wavelen_m = rng.uniform(0.5, 3.5, (SIGNAL_CHANNELS, m))
    mod_k = (2.0 * np.pi / wavelen_m)[:, :, None] * np.stack(
        [np.cos(theta_m), np.sin(theta_m)], axis=2
    )
    mod_phase = rng.uniform(0.0, 2.0 * np.pi, (SIGNAL_CHANNELS, m))

    return World(
        cfg, sites, elev_amp, elev_k, elev_phase,
        wave_amp, wave_decay, wave_freq, wave_phase,
        mod_weight, mod_k, mod_phase,
    )


def save_world(world: World, path: str) -> None:
    with open(path, "w") as f:
        json.dump(world.to_dict(), f, indent=1)
        f.write("\n")


def load_world(path: str) -> World:
    with open(path) as f:
        return World.from_dict(json.load(f))


def lawnmower_route(cfg: WorldConfig, margin: float = 0.4, lane_gap: float = 0.35) -> np.ndarray:
    """Serpentine coverage waypoints over the arena's long axis."""
    x0, x1 = margin, cfg.arena_w - margin
    y0, y1 = margin, cfg.arena_h - margin
    if x1 <= x0 or y1 <= y0:
        raise ValueError("margin leaves no arena interior")
    n_lanes = max(2, int(math.floor((x1 - x0) / lane_gap)) + 1)
    xs = np.linspace(x0, x1, n_lanes)
    pts = []
    for i, x in enumerate(xs):
        if i % 2 == 0:
            pts += [[x, y0], [x, y1]]
        else:
            pts += [[x, y1], [x, y0]]
    return np.array(pts)


def random_route(
    cfg: WorldConfig,
    seed: int,
    n_waypoints: int = 7,
    margin: float = 0.5,
    min_leg: float = 1.5,
) -> np.ndarray:
    """Random waypoints in the arena interior with a minimum leg length."""
    rng = np.random.default_rng(seed)
    lo = np.array([margin, margin])
    hi = np.array([cfg.arena_w - margin, cfg.arena_h - margin])
    if np.any(hi <= lo):
        raise ValueError("margin leaves no arena interior")
    pts = [rng.uniform(lo, hi)]
    while len(pts) < n_waypoints:
        for _ in range(200):
            cand = rng.uniform(lo, hi)
            if np.linalg.norm(cand - pts[-1]) >= min_leg:
                pts.append(cand)
                break
        else:
            raise RuntimeError("could not place a waypoint with the requested leg length")
    return np.array(pts)


def _body_track(route: np.ndarray, step_length: float) -> tuple[np.ndarray, np.ndarray]:
    """Body xy positions spaced step_length along the polyline, plus yaws."""
    seg = np.diff(route, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    if np.any(seg_len == 0.0):
        raise ValueError("route has zero-length segments")
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = cum[-1]
    s = np.arange(int(math.floor(total / step_length)) + 1) * step_length
    i = np.minimum(np.searchsorted(cum, s, side="right") - 1, len(seg) - 1)
    frac = (s - cum[i]) / seg_len[i]
    pts = route[i] + seg[i] * frac[:, None]
    yaw = np.arctan2(seg[i, 1], seg[i, 0])
    return pts, yaw


def simulate_trial(
    world: World,
    route: np.ndarray,
    odom_cfg: OdometryNoiseConfig,
    seed: int,
    trial_id: str,
) -> Trial:
    """Walk the route and emit one step event per footfall.

    Ground truth is exact; odometry is truth composed with an accumulated
    body-frame error that drifts in a fixed random direction proportionally
    to distance walked (and yaw turned) plus per-step white noise, so a
    zero noise config reproduces the truth bit for bit. Draw order from
    seed: drift azimuth, drift yaw sign, signal noise, odometry translation
    noise, odometry yaw noise.
    """
    cfg = world.config
    route = np.asarray(route, dtype=np.float64)
    if route.ndim != 2 or route.shape[1] != 2 or route.shape[0] < 2:
        raise ValueError("route must be (m, 2) with m >= 2")
    if (
        np.any(route[:, 0] < 0.0) or np.any(route[:, 0] > cfg.arena_w)
        or np.any(route[:, 1] < 0.0) or np.any(route[:, 1] > cfg.arena_h)
    ):
        raise ValueError("route leaves the arena")

    body_xy, yaw = _body_track(route, cfg.step_length)
    n = body_xy.shape[0]

    rng = np.random.default_rng(seed)
    azimuth = rng.uniform(0.0, 2.0 * np.pi)
    drift_dir = np.array([0.8 * np.cos(azimuth), 0.8 * np.sin(azimuth), 0.6])
    yaw_sign = 1.0 if rng.uniform() < 0.5 else -1.0
    signal_noise = rng.standard_normal((n, SIGNAL_LEN, SIGNAL_CHANNELS))
    trans_noise = rng.standard_normal((n, 3)) * odom_cfg.trans_noise_std
    yaw_noise = rng.standard_normal(n) * odom_cfg.yaw_noise_std

    body_z = world.elevation(body_xy) + cfg.body_height
    cos_y, sin_y = np.cos(yaw), np.sin(yaw)
    foot_idx = np.arange(n) % 4
    off = FOOT_OFFSETS[foot_idx]
    foot_xy = body_xy + np.stack(
        [cos_y * off[:, 0] - sin_y * off[:, 1], sin_y * off[:, 0] + cos_y * off[:, 1]], axis=1
    )
    foot_z = world.elevation(foot_xy)
    signals = world.signature(foot_xy) + signal_noise * (cfg.noise_frac * CHANNEL_SCALES)

    events = []
    err = Pose.identity()
    prev_xy, prev_yaw = body_xy[0], yaw[0]
    for k in range(n):
        truth = Pose(
            np.array([body_xy[k, 0], body_xy[k, 1], body_z[k]]), quat_from_yaw(yaw[k])
        )
        dist = float(np.linalg.norm(body_xy[k] - prev_xy))
        dyaw = float(abs(math.remainder(yaw[k] - prev_yaw, 2.0 * math.pi)))
        d_t = drift_dir * (odom_cfg.trans_drift_per_m * dist) + trans_noise[k]
        d_yaw = yaw_sign * odom_cfg.yaw_drift_per_rad * dyaw + yaw_noise[k]
        err = err.compose(Pose(d_t, quat_from_yaw(d_yaw)))
        odom = truth.compose(err)

        foothold_world = np.array([foot_xy[k, 0], foot_xy[k, 1], foot_z[k]])
        foothold_base = truth.inverse().apply(foothold_world)
        events.append(
            StepEvent(
                step_id=k,
                timestamp=k * STEP_PERIOD,
                foot_id=int(foot_idx[k]),
                signal=HapticSignal(signals[k]),
                foothold_base=foothold_base,
                odom_pose=odom,
                truth_pose=truth,
                foothold_world_truth=foothold_world,
            )
        )
        prev_xy, prev_yaw = body_xy[k], yaw[k]

    metadata = {
        "seed": seed,
        "world_seed": cfg.seed,
        "odometry": asdict(odom_cfg),
        "route": route.tolist(),
    }
    return Trial(trial_id, events, metadata)
