import numpy as np
import pytest
from helpers import clustered_positions, fd_network_gradcheck, tiny_net_cfg

from hapticloc import net
from hapticloc.train import batch_all_loss, mine

# default architecture: 6x16+16 input proj, 160x16 positions, 2x(16+16) norms
# at the stem, one encoder layer (4 16x16+16 projections, 16x8+8 and 8x16+16
# feed-forward, 2 norms), 16+16 batch-norm affine, 16x256+256 head = 8520
DEFAULT_PARAM_COUNT = 8520


def rand_batch(rng, cfg, n):
    return rng.standard_normal((n, cfg.seq_len, cfg.in_dim))


def test_param_count_default_frozen():
    assert net.param_count(net.NetConfig()) == DEFAULT_PARAM_COUNT


def test_param_count_head_delta():
    small = net.param_count(net.NetConfig(embed_dim=3))
    assert small == DEFAULT_PARAM_COUNT - (16 * 256 + 256) + (16 * 3 + 3)


def test_param_count_layer_additivity():
    one = net.param_count(net.NetConfig(n_encoder_layers=1))
    two = net.param_count(net.NetConfig(n_encoder_layers=2))
    per_layer = 4 * (16 * 16 + 16) + (16 * 8 + 8) + (8 * 16 + 16) + 2 * (16 + 16)
    assert two - one == per_layer


def test_config_validation():
    with pytest.raises(ValueError):
        net.NetConfig(d_model=10, n_heads=4)
    with pytest.raises(ValueError):
        net.NetConfig(embed_dim=0)


def test_init_deterministic_and_stats():
    cfg = tiny_net_cfg()
    a = net.init_params(cfg)
    b = net.init_params(cfg)
    for name in a.tensors:
        assert np.array_equal(a[name], b[name])
    c = net.init_params(tiny_net_cfg(seed=1))
    assert any(not np.array_equal(a[n], c[n]) for n in a.tensors)
    assert np.array_equal(a["head_bn.running_var"], np.ones(cfg.d_model))
    assert np.array_equal(a["head_bn.running_mean"], np.zeros(cfg.d_model))
    assert np.array_equal(a["pre_ln.gain"], np.ones(cfg.d_model))
    assert np.array_equal(a["input_proj.b"], np.zeros(cfg.d_model))


def test_params_validation():
    cfg = tiny_net_cfg()
    p = net.init_params(cfg)
    bad = {k: v.copy() for k, v in p.tensors.items()}
    bad["head_bn.running_var"][0] = 0.0
    with pytest.raises(ValueError, match="running variance"):
        net.NetworkParams(cfg, bad)
    wrong = {k: v.copy() for k, v in p.tensors.items()}
    wrong["input_proj.W"] = np.zeros((2, 2))
    with pytest.raises(ValueError, match="shape"):
        net.NetworkParams(cfg, wrong)


def test_forward_shapes_and_relu():
    cfg = tiny_net_cfg()
    params = net.init_params(cfg)
    rng = np.random.default_rng(0)
    X = rand_batch(rng, cfg, 5)
    emb, cache = net.forward(params, X, mode="infer")
    assert emb.shape == (5, cfg.embed_dim)
    assert np.all(emb >= 0.0)
    assert cache is None
    with pytest.raises(ValueError):
        net.forward(params, X[:, :4, :], mode="infer")
    with pytest.raises(ValueError):
        net.forward(params, X, mode="magic")
    with pytest.raises(ValueError):
        net.forward(params, X[:1], mode="train")


def test_infer_batch_independence():
    cfg = tiny_net_cfg()
    params = net.init_params(cfg)
    rng = np.random.default_rng(1)
    X = rand_batch(rng, cfg, 32)
    full, _ = net.forward(params, X, mode="infer")
    alone, _ = net.forward(params, X[7:8], mode="infer")
    assert np.max(np.abs(full[7] - alone[0])) < 1e-12


def test_infer_deterministic_and_pure():
    cfg = tiny_net_cfg()
    params = net.init_params(cfg)
    before = {k: v.copy() for k, v in params.tensors.items()}
    rng = np.random.default_rng(2)
    X = rand_batch(rng, cfg, 4)
    a, _ = net.forward(params, X, mode="infer")
    b, _ = net.forward(params, X, mode="infer")
    assert np.array_equal(a, b)
    for name in params.tensors:
        assert np.array_equal(params[name], before[name])


def test_train_mode_updates_running_stats():
    cfg = tiny_net_cfg()
    params = net.init_params(cfg)
    rng = np.random.default_rng(3)
    X = rand_batch(rng, cfg, 6)
    rm0 = params["head_bn.running_mean"].copy()
    rv0 = params["head_bn.running_var"].copy()
    _, cache = net.forward(params, X, mode="train")
    pooled = cache.pooled
    mu, var = pooled.mean(axis=0), pooled.var(axis=0)
    var_unb = var * (6.0 / 5.0)
    assert np.allclose(params["head_bn.running_mean"], 0.9 * rm0 + 0.1 * mu, atol=1e-15)
    assert np.allclose(params["head_bn.running_var"], 0.9 * rv0 + 0.1 * var_unb, atol=1e-15)


def test_attention_rows_are_distributions():
    cfg = tiny_net_cfg()
    params = net.init_params(cfg)
    rng = np.random.default_rng(4)
    X = rand_batch(rng, cfg, 3)
    _, cache = net.forward(params, X, mode="train")
    A = cache.layers[0].A
    assert np.all(A >= 0.0)
    assert np.max(np.abs(A.sum(axis=-1) - 1.0)) < 1e-6


def test_pooling_structure_with_zeroed_encoder():
    # with all encoder weights and biases zero, attention emits 0 (uniform
    # rows times zero values) and the feed-forward emits 0, so the encoder
    # reduces to two layer norms over the residual stream; the pooled vector
    # must equal the time mean of that
    cfg = tiny_net_cfg()
    params = net.init_params(cfg)
    for name in list(params.tensors):
        if ".attn." in name or ".ff." in name:
            params.tensors[name][:] = 0.0
    rng = np.random.default_rng(5)
    X = rand_batch(rng, cfg, 3)
    _, cache = net.forward(params, X, mode="train")

    P = params.tensors
    X1 = X @ P["input_proj.W"] + P["input_proj.b"]
    mu = X1.mean(-1, keepdims=True)
    inv = 1.0 / np.sqrt(X1.var(-1, keepdims=True) + net.LN_EPS)
    Z = P["pre_ln.gain"] * (X1 - mu) * inv + P["pre_ln.bias"] + P["pos_encoding"]
    for g, b in (("enc0.ln1.gain", "enc0.ln1.bias"), ("enc0.ln2.gain", "enc0.ln2.bias")):
        mu = Z.mean(-1, keepdims=True)
        inv = 1.0 / np.sqrt(Z.var(-1, keepdims=True) + net.LN_EPS)
        Z = P[g] * (Z - mu) * inv + P[b]
    assert np.allclose(cache.pooled, Z.mean(axis=1), atol=1e-12)


def test_backward_zero_upstream_gives_zero_grads():
    cfg = tiny_net_cfg()
    params = net.init_params(cfg)
    rng = np.random.default_rng(6)
    X = rand_batch(rng, cfg, 4)
    _, cache = net.forward(params, X, mode="train")
    grads = net.backward(params, cache, np.zeros((4, cfg.embed_dim)))
    assert set(grads) == set(params.learnable_names())
    for name, g in grads.items():
        assert g.shape == params[name].shape
        assert np.all(g == 0.0)


def test_backward_rejects_stale_or_infer_cache():
    cfg = tiny_net_cfg()
    params = net.init_params(cfg)
    rng = np.random.default_rng(7)
    X = rand_batch(rng, cfg, 4)
    _, cache = net.forward(params, X, mode="train")
    other = net.init_params(cfg)
    with pytest.raises(net.StaleCacheError):
        net.backward(other, cache, np.zeros((4, cfg.embed_dim)))
    _, icache = net.forward(params, X, mode="infer", want_cache=True)
    with pytest.raises(net.StaleCacheError):
        net.backward(params, icache, np.zeros((4, cfg.embed_dim)))


def test_gradcheck_small():
    max_rel, loss, smooth = fd_network_gradcheck(seed=0)
    assert smooth and loss > 0.0
    assert max_rel < 1e-4


def test_batch_permutation_equivariance():
    cfg = tiny_net_cfg()
    params = net.init_params(cfg)
    rng = np.random.default_rng(8)
    X = rand_batch(rng, cfg, 6)
    positions = clustered_positions(rng, 6)
    perm = rng.permutation(6)

    emb, cache = net.forward(params, X, mode="train")
    loss, d_emb, _ = batch_all_loss(emb, mine(positions, 0.25), 0.2)
    g = net.backward(params, cache, d_emb)

    params2 = net.init_params(cfg)
    emb2, cache2 = net.forward(params2, X[perm], mode="train")
    loss2, d_emb2, _ = batch_all_loss(emb2, mine(positions[perm], 0.25), 0.2)
    g2 = net.backward(params2, cache2, d_emb2)

    assert abs(loss - loss2) < 1e-12
    assert np.max(np.abs(emb[perm] - emb2)) < 1e-12
    for name in g:
        assert np.max(np.abs(g[name] - g2[name])) < 1e-10


def test_embed_matches_forward_chunked():
    cfg = tiny_net_cfg()
    params = net.init_params(cfg)
    rng = np.random.default_rng(9)
    X = rand_batch(rng, cfg, 10)
    full, _ = net.forward(params, X, mode="infer")
    assert np.max(np.abs(net.embed(params, X, chunk=3) - full)) < 1e-12
    single = net.embed(params, X[0])
    assert single.shape == (1, cfg.embed_dim)
    assert np.max(np.abs(single[0] - full[0])) < 1e-12


def test_save_load_roundtrip(tmp_path):
    cfg = tiny_net_cfg(seed=11)
    params = net.init_params(cfg)
    params.tensors["head_bn.running_mean"][:] = 0.25  # non-default stats too
    path = str(tmp_path / "p.stnet")
    net.save_params(params, path)
    back = net.load_params(path)
    assert back.config == cfg
    for name in params.tensors:
        assert np.array_equal(back[name], params[name])
    rng = np.random.default_rng(10)
    X = rand_batch(rng, cfg, 4)
    a, _ = net.forward(params, X, mode="infer")
    b, _ = net.forward(back, X, mode="infer")
    assert np.array_equal(a, b)


def test_load_rejects_config_mismatch(tmp_path):
    cfg = tiny_net_cfg()
    path = str(tmp_path / "p.stnet")
    net.save_params(net.init_params(cfg), path)
    with pytest.raises(ValueError, match="config mismatch"):
        net.load_params(path, expect_config=tiny_net_cfg(embed_dim=5))


def test_load_rejects_corrupt_files(tmp_path):
    cfg = tiny_net_cfg()
    path = str(tmp_path / "p.stnet")
    net.save_params(net.init_params(cfg), path)
    data = open(path, "rb").read()
    trunc = str(tmp_path / "t.stnet")
    with open(trunc, "wb") as f:
        f.write(data[:-8])
    with pytest.raises(ValueError, match="truncated"):
        net.load_params(trunc)
    extra = str(tmp_path / "x.stnet")
    with open(extra, "wb") as f:
        f.write(data + b"\x00" * 8)
    with pytest.raises(ValueError, match="trailing"):
        net.load_params(extra)
    bad = str(tmp_path / "b.stnet")
    with open(bad, "wb") as f:
        f.write(b"NOPE" + data[4:])
    with pytest.raises(ValueError, match="not a network parameter file"):
        net.load_params(bad)
