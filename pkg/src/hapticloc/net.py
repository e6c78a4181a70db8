"""Signal transformer: per-step embeddings from force/torque windows.

Pipeline: per-sample linear projection to d_model, layer norm, learnable
positional encoding, a stack of post-norm transformer encoder layers
(multi-head self-attention + position-wise feed-forward), average pooling
over time, batch norm, and a dense ReLU head of size embed_dim.

Everything runs in float64. `forward` in train mode caches all activations
so `backward` can produce exact reverse-mode gradients of any scalar loss
with respect to every learnable tensor.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .signal_io import HapticSignal

LN_EPS = 1e-5
BN_EPS = 1e-5
BN_MOMENTUM = 0.1

_MAGIC = b"STNET\x00"
_VERSION = 1


class StaleCacheError(RuntimeError):
    """Backward called with a cache built for different parameters."""


@dataclass(frozen=True)
class NetConfig:
    seq_len: int = 160
    in_dim: int = 6
    d_model: int = 16
    n_heads: int = 2
    d_ff: int = 8
    n_encoder_layers: int = 1
    embed_dim: int = 256
    seed: int = 0

    def __post_init__(self):
        for name in ("seq_len", "in_dim", "d_model", "n_heads", "d_ff", "n_encoder_layers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.embed_dim < 1:
            raise ValueError("embed_dim must be >= 1")
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")


def tensor_specs(cfg: NetConfig) -> list[tuple[str, tuple[int, ...], str]]:
    """(name, shape, kind) for every tensor, in the fixed serialization order.

    kind is one of weight / bias / gain / pos / running_mean / running_var;
    running statistics are the only non-learnable tensors.
    """
    t, c, d, f, e = cfg.seq_len, cfg.in_dim, cfg.d_model, cfg.d_ff, cfg.embed_dim
    specs = [
        ("input_proj.W", (c, d), "weight"),
        ("input_proj.b", (d,), "bias"),
        ("pre_ln.gain", (d,), "gain"),
        ("pre_ln.bias", (d,), "norm_bias"),
        ("pos_encoding", (t, d), "pos"),
    ]
    for i in range(cfg.n_encoder_layers):
        p = f"enc{i}"
        specs += [
            (f"{p}.attn.Wq", (d, d), "weight"),
            (f"{p}.attn.bq", (d,), "bias"),
            (f"{p}.attn.Wk", (d, d), "weight"),
            (f"{p}.attn.bk", (d,), "bias"),
            (f"{p}.attn.Wv", (d, d), "weight"),
            (f"{p}.attn.bv", (d,), "bias"),
            (f"{p}.attn.Wo", (d, d), "weight"),
            (f"{p}.attn.bo", (d,), "bias"),
            (f"{p}.ln1.gain", (d,), "gain"),
            (f"{p}.ln1.bias", (d,), "norm_bias"),
            (f"{p}.ff.W1", (d, f), "weight"),
            (f"{p}.ff.b1", (f,), "bias"),
            (f"{p}.ff.W2", (f, d), "weight"),
            (f"{p}.ff.b2", (d,), "bias"),
            (f"{p}.ln2.gain", (d,), "gain"),
            (f"{p}.ln2.bias", (d,), "norm_bias"),
        ]
    specs += [
        ("head_bn.gain", (d,), "gain"),
        ("head_bn.bias", (d,), "norm_bias"),
        ("head_bn.running_mean", (d,), "running_mean"),
        ("head_bn.running_var", (d,), "running_var"),
        ("head_dense.W", (d, e), "weight"),
        ("head_dense.b", (e,), "bias"),
    ]
    return specs


RUNNING_STAT_NAMES = ("head_bn.running_mean", "head_bn.running_var")


def param_count(cfg: NetConfig) -> int:
    """Total learnable scalar count (running statistics excluded)."""
    return sum(
        int(np.prod(shape))
        for name, shape, _ in tensor_specs(cfg)
        if name not in RUNNING_STAT_NAMES
    )


def decayed_param_names(cfg: NetConfig) -> set[str]:
    """Tensors subject to weight decay: everything learnable except
    normalization gains/biases and the positional encoding."""
    return {
        name
        for name, _, kind in tensor_specs(cfg)
        if kind in ("weight", "bias")
    }


class NetworkParams:
    """All tensors of the network, keyed by name in serialization order."""

    def __init__(self, config: NetConfig, tensors: dict[str, np.ndarray]):
        self.config = config
        expected = tensor_specs(config)
        if list(tensors.keys()) != [n for n, _, _ in expected]:
            raise ValueError("tensor names/order do not match the config")
        for name, shape, _ in expected:
            if tensors[name].shape != shape:
                raise ValueError(f"tensor {name} has shape {tensors[name].shape}, expected {shape}")
        if np.any(tensors["head_bn.running_var"] <= 0.0):
            raise ValueError("running variance must be strictly positive")
        self.tensors = {k: np.asarray(v, dtype=np.float64) for k, v in tensors.items()}

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def learnable_names(self) -> list[str]:
        return [n for n in self.tensors if n not in RUNNING_STAT_NAMES]

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.config, {k: v.copy() for k, v in self.tensors.items()})


Gradients = dict  # name -> array, same shapes as the learnable tensors


def init_params(cfg: NetConfig) -> NetworkParams:
    """Deterministic initialization from cfg.seed.

    2D tensors (weights and the positional encoding) are uniform in
    +-sqrt(6/(fan_in+fan_out)); norm gains and running variance start at 1,
    everything else at 0.
    """
    rng = np.random.default_rng(cfg.seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape, kind in tensor_specs(cfg):
        if kind in ("weight", "pos"):
            lim = np.sqrt(6.0 / (shape[0] + shape[1]))
            tensors[name] = rng.uniform(-lim, lim, size=shape)
        elif kind in ("gain", "running_var"):
            tensors[name] = np.ones(shape)
        else:
            tensors[name] = np.zeros(shape)
    return NetworkParams(cfg, tensors)


# ---------------------------------------------------------------------------
# forward / backward

@dataclass
class _LayerCache:
    z_in: np.ndarray
    Qh: np.ndarray
    Kh: np.ndarray
    Vh: np.ndarray
    A: np.ndarray
    H: np.ndarray
    xhat1: np.ndarray
    inv1: np.ndarray
    X4: np.ndarray
    Z1_mask: np.ndarray
    U: np.ndarray
    xhat2: np.ndarray
    inv2: np.ndarray


@dataclass
class ForwardCache:
    params: NetworkParams
    mode: str
    X: np.ndarray
    xhat_pre: np.ndarray
    inv_pre: np.ndarray
    layers: list[_LayerCache] = field(default_factory=list)
    pooled: Optional[np.ndarray] = None
    bn_centered: Optional[np.ndarray] = None
    bn_inv: Optional[np.ndarray] = None
    bn_xhat: Optional[np.ndarray] = None
    y: Optional[np.ndarray] = None
    E0_mask: Optional[np.ndarray] = None


def _ln_forward(x: np.ndarray, gain: np.ndarray, bias: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv
    return gain * xhat + bias, xhat, inv


def _ln_backward(dout: np.ndarray, xhat: np.ndarray, inv: np.ndarray, gain: np.ndarray):
    dgain = (dout * xhat).sum(axis=tuple(range(dout.ndim - 1)))
    dbias = dout.sum(axis=tuple(range(dout.ndim - 1)))
    dxhat = dout * gain
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - m1 - xhat * m2)
    return dx, dgain, dbias


def signals_to_array(batch: Iterable[HapticSignal] | np.ndarray) -> np.ndarray:
    if isinstance(batch, np.ndarray):
        return np.asarray(batch, dtype=np.float64)
    return np.stack([s.samples for s in batch]).astype(np.float64, copy=False)


def forward(
    params: NetworkParams,
    batch: Iterable[HapticSignal] | np.ndarray,
    mode: str = "infer",
    want_cache: Optional[bool] = None,
):
    """Run the network on a batch of signals.

    Returns (embeddings, cache); cache is built by default only in train
    mode (backward requires a train-mode cache). Train mode normalizes with
    batch statistics and updates the running statistics in place; infer
    mode uses the running statistics and mutates nothing, so each sample's
    embedding is independent of the rest of the batch.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"unknown mode {mode!r}")
    cfg = params.config
    X = signals_to_array(batch)
    if X.ndim != 3 or X.shape[1] != cfg.seq_len or X.shape[2] != cfg.in_dim:
        raise ValueError(f"batch shape {X.shape} != (B, {cfg.seq_len}, {cfg.in_dim})")
    B = X.shape[0]
    if mode == "train" and B < 2:
        raise ValueError("train-mode forward needs batch size >= 2 for batch norm")
    if want_cache is None:
        want_cache = mode == "train"
    P = params.tensors

    X1 = X @ P["input_proj.W"] + P["input_proj.b"]
    X2, xhat_pre, inv_pre = _ln_forward(X1, P["pre_ln.gain"], P["pre_ln.bias"])
    Z = X2 + P["pos_encoding"]

    cache = ForwardCache(params=params, mode=mode, X=X, xhat_pre=xhat_pre, inv_pre=inv_pre)

    h, dh = cfg.n_heads, cfg.d_model // cfg.n_heads
    scale = 1.0 / np.sqrt(dh)
    for i in range(cfg.n_encoder_layers):
        p = f"enc{i}"
        Q = Z @ P[f"{p}.attn.Wq"] + P[f"{p}.attn.bq"]
        K = Z @ P[f"{p}.attn.Wk"] + P[f"{p}.attn.bk"]
        V = Z @ P[f"{p}.attn.Wv"] + P[f"{p}.attn.bv"]
        Qh = Q.reshape(B, cfg.seq_len, h, dh).transpose(0, 2, 1, 3)
        Kh = K.reshape(B, cfg.seq_len, h, dh).transpose(0, 2, 1, 3)
        Vh = V.reshape(B, cfg.seq_len, h, dh).transpose(0, 2, 1, 3)
        S = (Qh @ Kh.swapaxes(-1, -2)) * scale
        S -= S.max(axis=-1, keepdims=True)
        A = np.exp(S)
        A /= A.sum(axis=-1, keepdims=True)
        H = (A @ Vh).transpose(0, 2, 1, 3).reshape(B, cfg.seq_len, cfg.d_model)
        M = H @ P[f"{p}.attn.Wo"] + P[f"{p}.attn.bo"]
        R1 = Z + M
        X4, xhat1, inv1 = _ln_forward(R1, P[f"{p}.ln1.gain"], P[f"{p}.ln1.bias"])
        Z1 = X4 @ P[f"{p}.ff.W1"] + P[f"{p}.ff.b1"]
        U = np.maximum(Z1, 0.0)
        F = U @ P[f"{p}.ff.W2"] + P[f"{p}.ff.b2"]
        R2 = X4 + F
        X5, xhat2, inv2 = _ln_forward(R2, P[f"{p}.ln2.gain"], P[f"{p}.ln2.bias"])
        if want_cache:
            cache.layers.append(
                _LayerCache(Z, Qh, Kh, Vh, A, H, xhat1, inv1, X4, Z1 > 0.0, U, xhat2, inv2)
            )
        Z = X5

    pooled = Z.mean(axis=1)

    if mode == "train":
        mu_b = pooled.mean(axis=0)
        var_b = pooled.var(axis=0)
        inv_b = 1.0 / np.sqrt(var_b + BN_EPS)
        centered = pooled - mu_b
        xhat_b = centered * inv_b
        # running stats use the unbiased variance, as is conventional
        var_unbiased = var_b * (B / (B - 1.0))
        P["head_bn.running_mean"] *= 1.0 - BN_MOMENTUM
        P["head_bn.running_mean"] += BN_MOMENTUM * mu_b
        P["head_bn.running_var"] *= 1.0 - BN_MOMENTUM
        P["head_bn.running_var"] += BN_MOMENTUM * var_unbiased
    else:
        inv_b = 1.0 / np.sqrt(P["head_bn.running_var"] + BN_EPS)
        centered = pooled - P["head_bn.running_mean"]
        xhat_b = centered * inv_b
    y = P["head_bn.gain"] * xhat_b + P["head_bn.bias"]

    E0 = y @ P["head_dense.W"] + P["head_dense.b"]
    emb = np.maximum(E0, 0.0)

    if want_cache:
        cache.pooled = pooled
        cache.bn_centered = centered
        cache.bn_inv = inv_b
        cache.bn_xhat = xhat_b
        cache.y = y
        cache.E0_mask = E0 > 0.0
        return emb, cache
    return emb, None


def backward(params: NetworkParams, cache: ForwardCache, d_emb: np.ndarray) -> Gradients:
    """Exact gradients of a scalar loss given its gradient on the embeddings.

    The cache must come from a train-mode forward on the same params object;
    gradients cover every learnable tensor (running statistics excluded).
    """
    if cache is None or cache.params is not params:
        raise StaleCacheError("cache does not belong to these params")
    if cache.mode != "train":
        raise StaleCacheError("backward requires a train-mode cache")
    cfg = params.config
    P = params.tensors
    B, T, D = cache.X.shape[0], cfg.seq_len, cfg.d_model
    h, dh = cfg.n_heads, D // cfg.n_heads
    scale = 1.0 / np.sqrt(dh)
    d_emb = np.asarray(d_emb, dtype=np.float64)
    grads: Gradients = {}

    dE0 = d_emb * cache.E0_mask
    grads["head_dense.W"] = cache.y.T @ dE0
    grads["head_dense.b"] = dE0.sum(axis=0)
    dy = dE0 @ P["head_dense.W"].T

    # batch norm backward through the batch statistics
    grads["head_bn.gain"] = (dy * cache.bn_xhat).sum(axis=0)
    grads["head_bn.bias"] = dy.sum(axis=0)
    dxhat = dy * P["head_bn.gain"]
    dvar = (dxhat * cache.bn_centered).sum(axis=0) * (-0.5) * cache.bn_inv**3
    dmu = -cache.bn_inv * dxhat.sum(axis=0)
    dpooled = dxhat * cache.bn_inv + cache.bn_centered * (2.0 / B) * dvar + dmu / B

    dZ = np.broadcast_to(dpooled[:, None, :] / T, (B, T, D)).copy()

    for i in reversed(range(cfg.n_encoder_layers)):
        p = f"enc{i}"
        lc = cache.layers[i]
        dR2, dg2, db2 = _ln_backward(dZ, lc.xhat2, lc.inv2, P[f"{p}.ln2.gain"])
        grads[f"{p}.ln2.gain"] = dg2
        grads[f"{p}.ln2.bias"] = db2
        dX4 = dR2.copy()
        dF = dR2
        grads[f"{p}.ff.b2"] = dF.sum(axis=(0, 1))
        grads[f"{p}.ff.W2"] = lc.U.reshape(-1, cfg.d_ff).T @ dF.reshape(-1, D)
        dU = dF @ P[f"{p}.ff.W2"].T
        dZ1 = dU * lc.Z1_mask
        grads[f"{p}.ff.b1"] = dZ1.sum(axis=(0, 1))
        grads[f"{p}.ff.W1"] = lc.X4.reshape(-1, D).T @ dZ1.reshape(-1, cfg.d_ff)
        dX4 += dZ1 @ P[f"{p}.ff.W1"].T

        dR1, dg1, db1 = _ln_backward(dX4, lc.xhat1, lc.inv1, P[f"{p}.ln1.gain"])
        grads[f"{p}.ln1.gain"] = dg1
        grads[f"{p}.ln1.bias"] = db1
        dZ = dR1.copy()
        dM = dR1
        grads[f"{p}.attn.bo"] = dM.sum(axis=(0, 1))
        grads[f"{p}.attn.Wo"] = lc.H.reshape(-1, D).T @ dM.reshape(-1, D)
        dH = (dM @ P[f"{p}.attn.Wo"].T).reshape(B, T, h, dh).transpose(0, 2, 1, 3)
        dA = dH @ lc.Vh.swapaxes(-1, -2)
        dVh = lc.A.swapaxes(-1, -2) @ dH
        dS = lc.A * (dA - (dA * lc.A).sum(axis=-1, keepdims=True))
        dQh = (dS @ lc.Kh) * scale
        dKh = (dS.swapaxes(-1, -2) @ lc.Qh) * scale
        dQ = dQh.transpose(0, 2, 1, 3).reshape(B, T, D)
        dK = dKh.transpose(0, 2, 1, 3).reshape(B, T, D)
        dV = dVh.transpose(0, 2, 1, 3).reshape(B, T, D)
        z_flat = lc.z_in.reshape(-1, D)
        for nm, dmat in (("Wq", dQ), ("Wk", dK), ("Wv", dV)):
            grads[f"{p}.attn.{nm}"] = z_flat.T @ dmat.reshape(-1, D)
            grads[f"{p}.attn.b{nm[-1].lower()}"] = dmat.sum(axis=(0, 1))
            dZ += dmat @ P[f"{p}.attn.{nm}"].T

    grads["pos_encoding"] = dZ.sum(axis=0)
    dX2 = dZ
    dX1, dg_pre, db_pre = _ln_backward(dX2, cache.xhat_pre, cache.inv_pre, P["pre_ln.gain"])
    grads["pre_ln.gain"] = dg_pre
    grads["pre_ln.bias"] = db_pre
    grads["input_proj.W"] = cache.X.reshape(-1, cfg.in_dim).T @ dX1.reshape(-1, D)
    grads["input_proj.b"] = dX1.sum(axis=(0, 1))

    return {name: grads[name] for name in params.learnable_names()}


def embed(params: NetworkParams, batch, chunk: int = 256) -> np.ndarray:
    """Infer-mode embeddings for any number of signals, chunked to bound memory."""
    X = signals_to_array(batch)
    if X.ndim == 2:
        X = X[None]
    out = np.empty((X.shape[0], params.config.embed_dim))
    for i in range(0, X.shape[0], chunk):
        out[i : i + chunk], _ = forward(params, X[i : i + chunk], mode="infer")
    return out


# ---------------------------------------------------------------------------
# serialization (.stnet)

def save_params(params: NetworkParams, path: str) -> None:
    """Self-describing binary: magic, version, config, tensors as LE float64."""
    cfg = params.config
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(
            struct.pack(
                "<8Iq",
                _VERSION,
                cfg.seq_len,
                cfg.in_dim,
                cfg.d_model,
                cfg.n_heads,
                cfg.d_ff,
                cfg.n_encoder_layers,
                cfg.embed_dim,
                cfg.seed,
            )
        )
        for name, _, _ in tensor_specs(cfg):
            f.write(params.tensors[name].astype("<f8", copy=False).tobytes(order="C"))


def load_params(path: str, expect_config: Optional[NetConfig] = None) -> NetworkParams:
    """Bit-exact load; rejects bad magic, version, truncation, or config mismatch."""
    with open(path, "rb") as f:
        data = f.read()
    head = len(_MAGIC) + struct.calcsize("<8Iq")
    if len(data) < head or data[: len(_MAGIC)] != _MAGIC:
        raise ValueError(f"{path}: not a network parameter file")
    version, *fields = struct.unpack_from("<8Iq", data, len(_MAGIC))
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    cfg = NetConfig(*fields)
    if expect_config is not None and cfg != expect_config:
        raise ValueError(f"{path}: config mismatch: file has {cfg}, expected {expect_config}")
    tensors: dict[str, np.ndarray] = {}
    off = head
    for name, shape, _ in tensor_specs(cfg):
        nbytes = int(np.prod(shape)) * 8
        if off + nbytes > len(data):
            raise ValueError(f"{path}: truncated file (while reading {name})")
        tensors[name] = np.frombuffer(data[off : off + nbytes], dtype="<f8").reshape(shape).copy()
        off += nbytes
    if off != len(data):
        raise ValueError(f"{path}: {len(data) - off} trailing bytes")
    return NetworkParams(cfg, tensors)
