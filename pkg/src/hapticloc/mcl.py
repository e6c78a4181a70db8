"""Monte Carlo localization over SE(3) driven by haptic step events.

Particles carry full 6-DoF poses. Motion: each odometry increment is
composed onto every particle with zero-mean Gaussian noise scaled by the
increment's length (translation) and turn angle (yaw); out-of-plane terms
(z, roll, pitch) get a configurable fraction of the planar noise.
Measurement: per particle, the step's foothold is transformed into the
world, matched to the nearest map entry in 2D, and scored with a product of
unnormalized Gaussians over embedding distance, 2D match distance, and
(with use_elevation, the sparse-elevation variant) elevation mismatch; a
match farther than d_t contributes the flat floor p_min. Normalization
constants cancel in the weight update, and the floor keeps unmatched steps
information-free. Resampling is systematic, gated on effective sample size.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import net
from .geometry import (
    Pose,
    quat_from_rpy_batch,
    quat_mul_batch,
    quat_normalize,
    quat_rotate_batch,
    rotation_angle,
)
from .signal_io import StepEvent, Trial
from .sparse_map import SparseHapticMap
from .trajlog import TrajectoryLog


@dataclass(frozen=True)
class MeasurementModelConfig:
    sigma_l: float = 0.4
    sigma_2d: float = 0.4
    sigma_e: float = 0.01
    d_t: float = 0.25
    p_min: float = 0.001
    use_elevation: bool = False

    def __post_init__(self):
        if min(self.sigma_l, self.sigma_2d, self.sigma_e) <= 0.0:
            raise ValueError("all sigmas must be > 0")
        if self.p_min <= 0.0 or self.d_t <= 0.0:
            raise ValueError("p_min and d_t must be > 0")


@dataclass(frozen=True)
class MclConfig:
    n_particles: int = 500
    trans_noise_per_m: float = 0.1
    yaw_noise_per_rad: float = 0.05
    out_of_plane_frac: float = 0.2
    init_xy_std: float = 0.1
    init_yaw_std: float = 0.05
    resample_threshold: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n_particles < 2:
            raise ValueError("n_particles must be >= 2")
        if min(
            self.trans_noise_per_m, self.yaw_noise_per_rad, self.out_of_plane_frac,
            self.init_xy_std, self.init_yaw_std,
        ) < 0.0:
            raise ValueError("noise parameters must be >= 0")
        if not (0.0 <= self.resample_threshold <= 1.0):
            raise ValueError("resample_threshold must be in [0, 1]")


@dataclass
class ParticleSet:
    """Struct-of-arrays particle cloud: translations, quaternions, weights."""

    t: np.ndarray
    q: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        n = self.t.shape[0]
        if self.t.shape != (n, 3) or self.q.shape != (n, 4) or self.w.shape != (n,):
            raise ValueError("particle array shapes disagree")

    @property
    def n(self) -> int:
        return self.t.shape[0]

    def pose(self, i: int) -> Pose:
        return Pose(self.t[i].copy(), self.q[i].copy())


def effective_sample_size(weights: np.ndarray) -> float:
    return float(1.0 / np.sum(weights * weights))


def init_particles(pose0: Pose, cfg: MclConfig, rng: np.random.Generator) -> ParticleSet:
    """Gaussian cloud around pose0; out-of-plane spread uses the same
    fraction of the planar standard deviations as the motion noise."""
    n = cfg.n_particles
    f = cfg.out_of_plane_frac
    t_noise = rng.standard_normal((n, 3)) * np.array(
        [cfg.init_xy_std, cfg.init_xy_std, cfg.init_xy_std * f]
    )
    rpy = rng.standard_normal((n, 3)) * np.array(
        [cfg.init_yaw_std * f, cfg.init_yaw_std * f, cfg.init_yaw_std]
    )
    t = pose0.t + t_noise
    q = quat_mul_batch(np.broadcast_to(pose0.q, (n, 4)), quat_from_rpy_batch(rpy))
    return ParticleSet(t, q, np.full(n, 1.0 / n))


def predict(
    ps: ParticleSet, increment: Pose, cfg: MclConfig, rng: np.random.Generator
) -> ParticleSet:
    """Compose the odometry increment, perturbed per particle, onto each pose.

    Noise standard deviations scale with the increment: translation noise is
    trans_noise_per_m times the translation length, yaw noise is
    yaw_noise_per_rad times the rotation angle. Weights are unchanged.
    """
    n = ps.n
    f = cfg.out_of_plane_frac
    dist = float(np.linalg.norm(increment.t))
    angle = rotation_angle(increment.q)
    sig_t = cfg.trans_noise_per_m * dist
    sig_y = cfg.yaw_noise_per_rad * angle
    t_noise = rng.standard_normal((n, 3)) * np.array([sig_t, sig_t, sig_t * f])
    rpy = rng.standard_normal((n, 3)) * np.array([sig_y * f, sig_y * f, sig_y])
    inc_t = increment.t + t_noise
    inc_q = quat_mul_batch(np.broadcast_to(increment.q, (n, 4)), quat_from_rpy_batch(rpy))
    t = ps.t + quat_rotate_batch(ps.q, inc_t)
    q = quat_mul_batch(ps.q, inc_q)
    return ParticleSet(t, q, ps.w.copy())


def foot_world(pose: Pose, foothold_base: np.ndarray) -> np.ndarray:
    """World position of a body-frame foothold under the given pose."""
    return pose.apply(np.asarray(foothold_base, dtype=np.float64))


def _foot_world_batch(ps: ParticleSet, foothold_base: np.ndarray) -> np.ndarray:
    d = np.broadcast_to(np.asarray(foothold_base, dtype=np.float64), (ps.n, 3))
    return ps.t + quat_rotate_batch(ps.q, d)


def _scores(
    m: SparseHapticMap,
    foot_pos: np.ndarray,
    embedding: np.ndarray,
    cfg: MeasurementModelConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian log-scores and the d_t gate for each (n, 3) foot position.

    Embedding distances are computed once per distinct matched entry; the
    2D term uses the squared match distance directly while the d_t gate
    compares the rooted distance, as the model is stated. Gated positions
    take the p_min floor instead of their score.
    """
    v = np.asarray(embedding, dtype=np.float64)
    if v.shape != (m.embed_dim,):
        raise ValueError(f"embedding shape {v.shape} != ({m.embed_dim},)")
    idx, d2 = m.nearest_batch(foot_pos[:, :2])
    idx = np.atleast_1d(idx)
    d2 = np.atleast_1d(d2)
    uniq, inverse = np.unique(idx, return_inverse=True)
    diff = m.embeddings[uniq].astype(np.float64) - v
    dl2 = np.einsum("ij,ij->i", diff, diff)
    s = -(dl2[inverse] / (2.0 * cfg.sigma_l**2) + d2 / (2.0 * cfg.sigma_2d**2))
    if cfg.use_elevation:
        de = foot_pos[:, 2] - m.elevations[idx]
        s -= de * de / (2.0 * cfg.sigma_e**2)
    return s, np.sqrt(d2) > cfg.d_t


def _log_likelihoods(
    m: SparseHapticMap,
    foot_pos: np.ndarray,
    embedding: np.ndarray,
    cfg: MeasurementModelConfig,
) -> np.ndarray:
    s, gated = _scores(m, foot_pos, embedding, cfg)
    return np.where(gated, math.log(cfg.p_min), s)


def likelihood(
    m: SparseHapticMap,
    foot_pos: np.ndarray,
    embedding: np.ndarray,
    cfg: MeasurementModelConfig,
) -> float:
    """Measurement likelihood of one hypothesized foot-world position.

    p_min when the nearest map entry is farther than d_t in 2D; otherwise
    the product of unnormalized Gaussians exp(-d^2 / 2 sigma^2) over the
    embedding distance, the 2D match distance, and (if use_elevation) the
    elevation difference. Always in (0, 1] except that extreme distances can
    underflow the linear value to 0; the filter update works in log space
    and is immune to that.
    """
    foot = np.asarray(foot_pos, dtype=np.float64).reshape(1, 3)
    s, gated = _scores(m, foot, embedding, cfg)
    return cfg.p_min if gated[0] else float(np.exp(s[0]))


def update(
    ps: ParticleSet,
    event: StepEvent,
    embedding: np.ndarray,
    m: SparseHapticMap,
    cfg: MeasurementModelConfig,
) -> ParticleSet:
    """Multiply weights by per-particle measurement likelihoods, normalized.

    Computed in log space with a max shift, which leaves the normalized
    weights mathematically unchanged while immune to exp underflow. When
    every particle hits the p_min floor the weights are unchanged.
    """
    foot = _foot_world_batch(ps, event.foothold_base)
    s = _log_likelihoods(m, foot, embedding, cfg)
    w = ps.w * np.exp(s - s.max())
    total = w.sum()
    if not total > 0.0:
        raise AssertionError("weight sum collapsed to zero")
    return ParticleSet(ps.t.copy(), ps.q.copy(), w / total)


def _systematic_indices(weights: np.ndarray, u: float) -> np.ndarray:
    """Offspring indices from one uniform offset u in [0, 1)."""
    n = weights.shape[0]
    positions = (u + np.arange(n)) / n
    cum = np.cumsum(weights)
    cum[-1] = 1.0
    return np.minimum(np.searchsorted(cum, positions, side="right"), n - 1)


def resample(
    ps: ParticleSet, threshold: float, rng: np.random.Generator
) -> tuple[ParticleSet, bool]:
    """Systematic resampling, gated on effective sample size.

    Runs only when ESS = 1 / sum(w^2) < threshold * n; offspring counts are
    then within +-1 of n * w_i for every draw, and output weights are
    uniform. Returns (particles, whether resampling ran).
    """
    n = ps.n
    if effective_sample_size(ps.w) >= threshold * n:
        return ps, False
    idx = _systematic_indices(ps.w, float(rng.uniform()))
    return ParticleSet(ps.t[idx].copy(), ps.q[idx].copy(), np.full(n, 1.0 / n)), True


def estimate(ps: ParticleSet) -> Pose:
    """Weighted mean pose: mean translation, and the weighted quaternion
    mean after sign-aligning every quaternion to the highest-weight one."""
    t = ps.w @ ps.t
    ref = ps.q[int(np.argmax(ps.w))]
    sign = np.where(ps.q @ ref < 0.0, -1.0, 1.0)
    q = (ps.w * sign) @ ps.q
    norm = np.linalg.norm(q)
    if norm < 1e-12:
        q = ref.copy()
    else:
        q = quat_normalize(q)
    return Pose(t, q)


def run_localization(
    trial: Trial,
    m: SparseHapticMap,
    params: net.NetworkParams,
    mcl_cfg: MclConfig,
    mm_cfg: MeasurementModelConfig,
) -> TrajectoryLog:
    """Replay a trial: per step, propagate particles with the odometry
    increment, weight them with the step's embedding against the map,
    resample when the ESS gate fires, and log the weighted-mean pose.

    Particles start in a Gaussian cloud around the trial's first
    ground-truth pose. Deterministic given mcl_cfg.seed.
    """
    if m.embed_dim != params.config.embed_dim:
        raise ValueError(
            f"map embed_dim {m.embed_dim} != network embed_dim {params.config.embed_dim}"
        )
    for ev in trial.events:
        if ev.truth_pose is None:
            raise ValueError(f"step {ev.step_id} has no ground-truth pose")

    rng = np.random.default_rng(mcl_cfg.seed)
    embeddings = net.embed(params, np.stack([ev.signal.samples for ev in trial.events]))
    ps = init_particles(trial.events[0].truth_pose, mcl_cfg, rng)
    prev_odom = trial.events[0].odom_pose
    log = TrajectoryLog(trial.trial_id)
    for k, ev in enumerate(trial.events):
        increment = prev_odom.inverse().compose(ev.odom_pose)
        ps = predict(ps, increment, mcl_cfg, rng)
        ps = update(ps, ev, embeddings[k], m, mm_cfg)
        ess = effective_sample_size(ps.w)
        ps, _ = resample(ps, mcl_cfg.resample_threshold, rng)
        log.append(ev.timestamp, ev.step_id, estimate(ps), ev.truth_pose, ess)
        prev_odom = ev.odom_pose
    return log
