"""Shared test utilities: oracles and small data builders."""
from __future__ import annotations

import numpy as np

from hapticloc import net
from hapticloc.sparse_map import SparseHapticMap
from hapticloc.train import batch_all_loss, mine


def tiny_net_cfg(**kw) -> net.NetConfig:
    base = dict(seq_len=8, in_dim=3, d_model=4, n_heads=2, d_ff=3,
                n_encoder_layers=1, embed_dim=3, seed=0)
    base.update(kw)
    return net.NetConfig(**base)


def clustered_positions(rng: np.random.Generator, n: int, d_thr: float = 0.25) -> np.ndarray:
    """Two tight clusters well inside / outside d_thr, so mining finds both
    positives and negatives for every anchor."""
    centers = np.array([[0.0, 0.0, 0.0], [3.0, 0.0, 0.0]])
    which = rng.integers(0, 2, n)
    return centers[which] + rng.uniform(-0.3, 0.3, (n, 3)) * (d_thr / 3.0)


def triplet_loss_oracle(E: np.ndarray, pos: list, neg: list, margin: float):
    """Naive triple loop over (anchor, positive, negative); returns
    (loss, active_count) with the same averaging as batch_all_loss."""
    total, count = 0.0, 0
    for a in range(E.shape[0]):
        for p in pos[a]:
            for q in neg[a]:
                h = (np.linalg.norm(E[a] - E[p]) - np.linalg.norm(E[a] - E[q]) + margin)
                if h > 0.0:
                    total += h
                    count += 1
    return (total / count if count else 0.0), count


def brute_nn(xy: np.ndarray, queries: np.ndarray):
    """Independent nearest-entry oracle: full distance matrix, first minimum.
    Entries are sid-sorted, so the first minimum is the lowest step id."""
    d2 = ((queries[:, None, :] - xy[None, :, :]) ** 2).sum(axis=2)
    idx = d2.argmin(axis=1)
    return idx, d2[np.arange(queries.shape[0]), idx]


def random_map(rng: np.random.Generator, n: int, embed_dim: int = 4,
               extent: float = 3.0, cell_size: float = 0.25) -> SparseHapticMap:
    return SparseHapticMap(
        np.arange(n, dtype=np.int64),
        rng.uniform(0.0, extent, (n, 2)),
        rng.uniform(-0.1, 0.1, n),
        rng.standard_normal((n, embed_dim)).astype(np.float32),
        cell_size=cell_size,
    )


def network_loss(params: net.NetworkParams, X: np.ndarray, positions: np.ndarray,
                 d_thr: float, margin: float) -> float:
    emb, _ = net.forward(params, X, mode="train", want_cache=False)
    loss, _, _ = batch_all_loss(emb, mine(positions, d_thr), margin)
    return loss


def fd_network_gradcheck(seed: int, h: float = 3e-5, batch: int = 4,
                         d_thr: float = 0.25, margin: float = 0.2):
    # h sits at the bottom of the central-difference error curve for this
    # float64 net: truncation dominates above ~1e-4, roundoff below ~1e-5
    """Central finite differences of the triplet loss through the whole
    network against the analytic backward pass, over every learnable scalar.

    Returns (max relative error, loss, smooth) where smooth is False when the
    draw lands too close to a hinge/ReLU kink for h to be trustworthy.
    """
    cfg = tiny_net_cfg(seed=seed)
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((batch, cfg.seq_len, cfg.in_dim))
    positions = clustered_positions(rng, batch, d_thr)

    params = net.init_params(cfg)
    emb, cache = net.forward(params, X, mode="train")
    mined = mine(positions, d_thr)
    loss, d_emb, n_active = batch_all_loss(emb, mined, margin)
    if n_active == 0:
        return 0.0, loss, False

    # reject draws within 10*h of any nondifferentiable point
    guard = 10.0 * h
    D = np.sqrt(np.maximum(
        ((emb[:, None, :] - emb[None, :, :]) ** 2).sum(axis=2), 0.0))
    hinges = D[:, :, None] - D[:, None, :] + margin
    involved = mined.pos_mask[:, :, None] & mined.neg_mask[:, None, :]
    E0 = cache.y @ params["head_dense.W"] + params["head_dense.b"]
    smooth = (
        np.min(np.abs(hinges[involved])) > guard
        and np.min(np.abs(E0)) > guard
        and np.min(D + np.eye(batch)) > guard
    )

    grads = net.backward(params, cache, d_emb)
    max_rel = 0.0
    for name in params.learnable_names():
        tensor = params.tensors[name]
        flat = tensor.reshape(-1)
        gflat = grads[name].reshape(-1)
        for i in range(flat.shape[0]):
            keep = flat[i]
            flat[i] = keep + h
            up = network_loss(params, X, positions, d_thr, margin)
            flat[i] = keep - h
            down = network_loss(params, X, positions, d_thr, margin)
            flat[i] = keep
            fd = (up - down) / (2.0 * h)
            rel = abs(gflat[i] - fd) / max(abs(gflat[i]), abs(fd), 1e-6)
            max_rel = max(max_rel, rel)
    return max_rel, loss, smooth
