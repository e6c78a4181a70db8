import os

import numpy as np
import pytest
from helpers import brute_nn, random_map, tiny_net_cfg

from hapticloc import net
from hapticloc.signal_io import SIGNAL_CHANNELS, SIGNAL_LEN
from hapticloc.sparse_map import SparseHapticMap, build_map, load_map, save_map
from hapticloc.synth import WorldConfig, generate_world, lawnmower_route, simulate_trial
from hapticloc.synth import OdometryNoiseConfig


def tiny_trial(seed=0):
    cfg = WorldConfig(arena_w=2.0, arena_h=2.0, seed=seed, step_length=0.3)
    world = generate_world(cfg)
    return simulate_trial(world, lawnmower_route(cfg, margin=0.3, lane_gap=0.7),
                          OdometryNoiseConfig(), seed, "map-test")


def full_net_params(embed_dim=4, seed=0):
    return net.init_params(net.NetConfig(embed_dim=embed_dim, seed=seed))


def test_constructor_validation():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        SparseHapticMap(np.zeros(0, dtype=np.int64), np.zeros((0, 2)),
                        np.zeros(0), np.zeros((0, 4), dtype=np.float32))
    with pytest.raises(ValueError, match="unique"):
        SparseHapticMap(np.array([1, 1]), rng.uniform(0, 1, (2, 2)),
                        np.zeros(2), np.zeros((2, 4), dtype=np.float32))
    with pytest.raises(ValueError):
        SparseHapticMap(np.array([1, 2]), rng.uniform(0, 1, (3, 2)),
                        np.zeros(2), np.zeros((2, 4), dtype=np.float32))


def test_entries_sorted_by_step_id():
    rng = np.random.default_rng(1)
    sid = np.array([30, 10, 20], dtype=np.int64)
    xy = np.array([[3.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    m = SparseHapticMap(sid, xy, np.zeros(3), rng.standard_normal((3, 2)).astype(np.float32))
    assert list(m.sid) == [10, 20, 30]
    assert np.array_equal(m.xy[:, 0], [1.0, 2.0, 3.0])
    e = m.entry(0)
    assert e.source_step_id == 10 and e.xy[0] == 1.0


def test_build_map_from_trial():
    trial = tiny_trial()
    params = full_net_params()
    m = build_map(trial, params)
    assert len(m) == len(trial.events)
    assert m.embed_dim == 4
    fw = np.stack([ev.foothold_world_truth for ev in trial.events])
    assert np.array_equal(m.xy, fw[:, :2])
    assert np.array_equal(m.elevations, fw[:, 2])
    sig = np.stack([ev.signal.samples for ev in trial.events])
    expected = net.embed(params, sig).astype(np.float32)
    assert np.array_equal(m.embeddings, expected)


def test_build_map_requires_truth():
    trial = tiny_trial()
    ev = trial.events[3]
    from dataclasses import replace
    trial.events[3] = replace(ev, truth_pose=None, foothold_world_truth=None)
    with pytest.raises(ValueError, match="step 3"):
        build_map(trial, full_net_params())


def test_nearest_matches_oracle():
    rng = np.random.default_rng(2)
    m = random_map(rng, 1000)
    q = rng.uniform(-0.5, 3.5, (100, 2))
    idx, d2 = m.nearest_batch(q)
    ref_idx, ref_d2 = brute_nn(m.xy, q)
    assert np.array_equal(idx, ref_idx)
    assert np.array_equal(d2, ref_d2)
    entry, dist = m.nearest(q[0])
    assert entry.source_step_id == int(m.sid[ref_idx[0]])
    assert abs(dist - np.sqrt(ref_d2[0])) < 1e-15


def test_nearest_exact_hit():
    rng = np.random.default_rng(3)
    m = random_map(rng, 50)
    entry, dist = m.nearest(m.xy[17])
    assert dist == 0.0
    assert entry.source_step_id == int(m.sid[17])


def test_duplicate_xy_tie_breaks_to_lower_step_id():
    rng = np.random.default_rng(4)
    xy = np.array([[1.0, 1.0], [1.0, 1.0]])
    m = SparseHapticMap(np.array([12, 5]), xy, np.zeros(2),
                        rng.standard_normal((2, 3)).astype(np.float32))
    entry, _ = m.nearest(np.array([1.1, 1.0]))
    assert entry.source_step_id == 5


def test_save_load_roundtrip(tmp_path):
    rng = np.random.default_rng(5)
    m = random_map(rng, 123, embed_dim=7)
    path = str(tmp_path / "a.hmap")
    save_map(m, path)
    back = load_map(path)
    assert len(back) == len(m) and back.embed_dim == 7
    assert np.array_equal(back.sid, m.sid)
    assert np.array_equal(back.xy, m.xy)
    assert np.array_equal(back.elevations, m.elevations)
    assert np.array_equal(back.embeddings, m.embeddings)


def test_load_rejects_corrupt(tmp_path):
    rng = np.random.default_rng(6)
    m = random_map(rng, 10)
    path = str(tmp_path / "a.hmap")
    save_map(m, path)
    data = open(path, "rb").read()
    bad = str(tmp_path / "bad.hmap")
    with open(bad, "wb") as f:
        f.write(data[:-4])
    with pytest.raises(ValueError, match="bytes"):
        load_map(bad)
    with open(bad, "wb") as f:
        f.write(b"XXXX" + data[4:])
    with pytest.raises(ValueError, match="not a haptic map"):
        load_map(bad)


def test_small_embed_dim_roundtrip(tmp_path):
    rng = np.random.default_rng(7)
    m = random_map(rng, 9, embed_dim=2)
    path = str(tmp_path / "two.hmap")
    save_map(m, path)
    assert load_map(path).embed_dim == 2


def test_file_size_scales_with_embed_dim(tmp_path):
    rng = np.random.default_rng(8)
    n = 64
    paths = {}
    for dim in (2, 256):
        m = random_map(rng, n, embed_dim=dim)
        p = str(tmp_path / f"d{dim}.hmap")
        save_map(m, p)
        paths[dim] = os.path.getsize(p)
    header = 5 + 16
    fixed = 32  # sid + x + y + elevation per entry
    payload = {d: paths[d] - header - n * fixed for d in paths}
    assert payload[256] / payload[2] == 128.0
