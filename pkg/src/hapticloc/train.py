"""Metric learning on step embeddings.

Triplets are mined geometrically: two steps are a positive pair when their
true foothold positions lie within d_thr of each other in 3D. The loss is
the batch-all triplet formulation: every valid (anchor, positive, negative)
combination contributes a hinge on the embedding-distance margin, averaged
over the triplets whose hinge is strictly positive. Optimization is AdamW
with an exponentially decaying learning rate and a cosine-annealed,
decoupled weight decay.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import net
from .signal_io import Trial


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 128
    margin: float = 0.2
    d_thr: float = 0.25
    lr: float = 5e-4
    lr_decay: float = 0.01
    weight_decay: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 3:
            raise ValueError("batch_size must be >= 3")
        if self.margin < 0.0 or self.d_thr <= 0.0:
            raise ValueError("margin must be >= 0 and d_thr > 0")
        if not (0.0 < self.lr_decay <= 1.0):
            raise ValueError("lr_decay must be in (0, 1]")


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """lr0 * gamma^epoch, with gamma set so the rate decays by cfg.lr_decay
    (100x by default) over the whole run."""
    gamma = cfg.lr_decay ** (1.0 / cfg.epochs)
    return cfg.lr * gamma**epoch

def wd_at(epoch: int, cfg: TrainConfig) -> float:
    """Cosine annealing of the weight decay from cfg.weight_decay to 0."""
    return cfg.weight_decay * 0.5 * (1.0 + np.cos(np.pi * epoch / cfg.epochs))


@dataclass(frozen=True)
class MinedBatch:
    """Geometric positive/negative partition of one batch.

    pos_mask[a, i] is true when i is a positive for anchor a; the diagonal
    is false, and everything off-diagonal that is not positive is negative,
    so {a}, P_a, N_a partition the batch for every anchor.
    """

    pos_mask: np.ndarray

    @property
    def neg_mask(self) -> np.ndarray:
        m = ~self.pos_mask
        np.fill_diagonal(m, False)
        return m

    def positives(self, a: int) -> np.ndarray:
        return np.flatnonzero(self.pos_mask[a])

    def negatives(self, a: int) -> np.ndarray:
        return np.flatnonzero(self.neg_mask[a])


def mine(positions: np.ndarray, d_thr: float) -> MinedBatch:
    """Partition every anchor's co-batch samples by 3D foothold distance.

    A sample is a positive when its Euclidean distance to the anchor's
    position is <= d_thr (the threshold itself is a positive), negative
    otherwise. Squared distances are compared so the test is exact.
    """
    pos = np.asarray(positions, dtype=np.float64)
    if pos.ndim != 2 or pos.shape[1] != 3:
        raise ValueError(f"positions must be (N, 3), got {pos.shape}")
    if pos.shape[0] < 2:
        raise ValueError("need at least 2 positions to mine")
    if not np.all(np.isfinite(pos)):
        raise ValueError("positions must be finite")
    diff = pos[:, None, :] - pos[None, :, :]
    sq = np.einsum("ijk,ijk->ij", diff, diff)
    mask = sq <= d_thr * d_thr
    np.fill_diagonal(mask, False)
    return MinedBatch(mask)


def batch_all_loss(
    embeddings: np.ndarray, mined: MinedBatch, margin: float
) -> tuple[float, np.ndarray, int]:
    """Batch-all triplet loss and its exact gradient on the embeddings.

    Returns (loss, d_embeddings, active_count). The loss is the sum of
    max(0, d(a,p) - d(a,n) + margin) over all mined triplets, divided by
    the number of triplets with a strictly positive hinge; with none active
    both the loss and the gradient are zero. The active set is treated as
    fixed at the current point, so subgradients at the hinge kink and at
    zero embedding distance are zero.
    """
    E = np.asarray(embeddings, dtype=np.float64)
    pmask = mined.pos_mask
    nmask = mined.neg_mask
    if E.ndim != 2 or E.shape[0] != pmask.shape[0]:
        raise ValueError("embedding count must equal the mined batch size")

    sq = np.sum(E * E, axis=1)
    D2 = sq[:, None] + sq[None, :] - 2.0 * (E @ E.T)
    D = np.sqrt(np.maximum(D2, 0.0))

    hinge = D[:, :, None] - D[:, None, :] + margin
    active = (hinge > 0.0) & pmask[:, :, None] & nmask[:, None, :]
    n_active = int(active.sum())
    if n_active == 0:
        return 0.0, np.zeros_like(E), 0
    loss = float(hinge[active].sum()) / n_active

    # dL/dD over ordered pairs: +1 per active triplet on (a,p), -1 on (a,n)
    G = (active.sum(axis=2) - active.sum(axis=1)) / float(n_active)
    W = G + G.T
    invD = np.where(D > 0.0, 1.0 / np.where(D > 0.0, D, 1.0), 0.0)
    C = W * invD
    dE = C.sum(axis=1)[:, None] * E - C @ E
    return loss, dE, n_active


@dataclass
class AdamWState:
    """First/second moment accumulators, one pair per learnable tensor."""

    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: net.NetworkParams) -> "AdamWState":
        s = cls()
        for name in params.learnable_names():
            s.m[name] = np.zeros_like(params.tensors[name])
            s.v[name] = np.zeros_like(params.tensors[name])
        return s


def adamw_step(
    params: net.NetworkParams,
    grads: net.Gradients,
    state: AdamWState,
    lr: float,
    weight_decay: float,
    cfg: TrainConfig,
    decayed: Optional[set] = None,
) -> None:
    """One in-place AdamW update with bias correction.

    Weight decay is decoupled and applied as theta *= (1 - weight_decay)
    before the moment-based step; it skips normalization gains/biases and
    the positional encoding.
    """
    if decayed is None:
        decayed = net.decayed_param_names(params.config)
    for name in params.learnable_names():
        if not np.all(np.isfinite(grads[name])):
            raise FloatingPointError(f"non-finite gradient in {name} at step {state.t + 1}")
    state.t += 1
    c1 = 1.0 - cfg.beta1**state.t
    c2 = 1.0 - cfg.beta2**state.t
    for name in params.learnable_names():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        theta = params.tensors[name]
        if name in decayed:
            theta *= 1.0 - weight_decay
        theta -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)


def training_arrays(trials: Sequence[Trial]) -> tuple[np.ndarray, np.ndarray]:
    """Stack signals and true foothold positions from one or more trials."""
    signals, positions = [], []
    for trial in trials:
        for ev in trial.events:
            if ev.foothold_world_truth is None:
                raise ValueError(
                    f"trial {trial.trial_id} step {ev.step_id} has no ground-truth foothold"
                )
            signals.append(ev.signal.samples)
            positions.append(ev.foothold_world_truth)
    return np.stack(signals), np.stack(positions)


@dataclass
class TrainResult:
    params: net.NetworkParams
    epoch_losses: list[float]
    epoch_active: list[int]
    epoch_lr: list[float]
    epoch_wd: list[float]

    def write_log(self, path: str) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "mean_loss", "active_triplets", "lr", "wd"])
            for e in range(len(self.epoch_losses)):
                w.writerow([
                    e,
                    f"{self.epoch_losses[e]:.10g}",
                    self.epoch_active[e],
                    f"{self.epoch_lr[e]:.10g}",
                    f"{self.epoch_wd[e]:.10g}",
                ])


def fit(
    trials: Trial | Sequence[Trial],
    net_cfg: net.NetConfig,
    cfg: TrainConfig,
    progress: Optional[Callable[[int, float], None]] = None,
) -> TrainResult:
    """Train a fresh network on the steps of the given trials.

    Per epoch the samples are re-permuted and cut into fixed-size batches,
    dropping the partial tail (dropped samples reappear in other epochs'
    permutations). An epoch with zero active triplets is logged, not fatal.
    Deterministic given the config seeds.
    """
    if isinstance(trials, Trial):
        trials = [trials]
    X, positions = training_arrays(trials)
    params = net.init_params(net_cfg)
    return fit_arrays(params, X, positions, cfg, progress)


def fit_arrays(
    params: net.NetworkParams,
    signals: np.ndarray,
    positions: np.ndarray,
    cfg: TrainConfig,
    progress: Optional[Callable[[int, float], None]] = None,
) -> TrainResult:
    """fit() on pre-stacked (N, seq_len, in_dim) signals and (N, 3) positions."""
    X = net.signals_to_array(signals)
    pos = np.asarray(positions, dtype=np.float64)
    n = X.shape[0]
    if pos.shape != (n, 3):
        raise ValueError(f"positions shape {pos.shape} != ({n}, 3)")
    n_batches = n // cfg.batch_size
    if n_batches == 0:
        raise ValueError(f"{n} samples is fewer than one batch of {cfg.batch_size}")

    rng = np.random.default_rng(cfg.seed)
    state = AdamWState.for_params(params)
    decayed = net.decayed_param_names(params.config)
    result = TrainResult(params, [], [], [], [])
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        lr = lr_at(epoch, cfg)
        wd = wd_at(epoch, cfg)
        losses = []
        active_total = 0
        for b in range(n_batches):
            idx = perm[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            emb, cache = net.forward(params, X[idx], mode="train")
            mined = mine(pos[idx], cfg.d_thr)
            loss, d_emb, n_active = batch_all_loss(emb, mined, cfg.margin)
            grads = net.backward(params, cache, d_emb)
            adamw_step(params, grads, state, lr, wd, cfg, decayed)
            losses.append(loss)
            active_total += n_active
        result.epoch_losses.append(float(np.mean(losses)))
        result.epoch_active.append(active_total)
        result.epoch_lr.append(lr)
        result.epoch_wd.append(wd)
        if progress is not None:
            progress(epoch, result.epoch_losses[-1])
    return result
