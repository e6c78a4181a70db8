import numpy as np
import pytest
from helpers import brute_nn

from hapticloc import _kernels_py, kernels
from hapticloc.kernels import NeighborIndex


def make_index(rng, n, extent=4.0, cell=0.25):
    xy = rng.uniform(0.0, extent, (n, 2))
    sid = np.arange(n, dtype=np.int64)
    return NeighborIndex(xy, sid, cell), xy


def test_backend_reports_itself():
    assert kernels.BACKEND in ("compiled", "pure")


def test_query_matches_oracle():
    rng = np.random.default_rng(0)
    for trial in range(30):
        n = int(rng.integers(1, 300))
        idx_obj, xy = make_index(rng, n, cell=float(rng.uniform(0.05, 1.0)))
        q = rng.uniform(-1.0, 5.0, (50, 2))
        idx, d2 = idx_obj.query(q)
        ref_idx, ref_d2 = brute_nn(xy, q)
        assert np.array_equal(idx, ref_idx)
        assert np.array_equal(d2, ref_d2)


def test_backends_bit_identical():
    rng = np.random.default_rng(1)
    idx_obj, xy = make_index(rng, 200)
    q = rng.uniform(-2.0, 6.0, (300, 2))
    via_index = idx_obj.query(q)
    via_brute = _kernels_py.brute_nearest(xy, q)
    assert np.array_equal(via_index[0], via_brute[0])
    assert np.array_equal(via_index[1], via_brute[1])


def test_tie_break_lowest_step_id():
    # two entries equidistant from the query: the lower sid wins
    xy = np.array([[1.0, 0.0], [-1.0, 0.0]])
    sid = np.array([3, 7], dtype=np.int64)
    idx, d2 = NeighborIndex(xy, sid).query(np.array([0.0, 0.0]))
    assert int(idx) == 0  # position of sid 3
    assert float(d2) == 1.0
    # duplicated coordinates
    xy = np.array([[0.5, 0.5], [0.5, 0.5], [2.0, 2.0]])
    idx, d2 = NeighborIndex(xy, np.array([1, 2, 3], dtype=np.int64)).query(
        np.array([0.6, 0.5]))
    assert int(idx) == 0
    assert abs(float(d2) - 0.01) < 1e-15


def test_single_query_squeeze():
    rng = np.random.default_rng(2)
    idx_obj, xy = make_index(rng, 20)
    idx, d2 = idx_obj.query(np.array([1.0, 1.0]))
    assert np.ndim(idx) == 0 and np.ndim(d2) == 0


def test_far_outside_queries():
    rng = np.random.default_rng(3)
    idx_obj, xy = make_index(rng, 64)
    q = np.array([[1e3, 1e3], [-1e3, 50.0], [2.0, -999.0]])
    idx, d2 = idx_obj.query(q)
    ref_idx, ref_d2 = brute_nn(xy, q)
    assert np.array_equal(idx, ref_idx)
    assert np.array_equal(d2, ref_d2)


def test_single_entry_index():
    idx_obj = NeighborIndex(np.array([[2.0, 3.0]]), np.array([5], dtype=np.int64))
    idx, d2 = idx_obj.query(np.array([[2.0, 4.0], [0.0, 0.0]]))
    assert np.array_equal(idx, [0, 0])
    assert np.allclose(d2, [1.0, 13.0], atol=0)


def test_collinear_entries():
    # degenerate bounding boxes (zero width or height) must still work
    rng = np.random.default_rng(4)
    xy = np.stack([np.linspace(0, 3, 40), np.full(40, 1.5)], axis=1)
    idx_obj = NeighborIndex(xy, np.arange(40, dtype=np.int64))
    q = rng.uniform(-1, 4, (100, 2))
    idx, d2 = idx_obj.query(q)
    ref_idx, ref_d2 = brute_nn(xy, q)
    assert np.array_equal(idx, ref_idx)
    assert np.array_equal(d2, ref_d2)


def test_identical_entry_coordinates():
    xy = np.zeros((10, 2))
    idx_obj = NeighborIndex(xy, np.arange(10, dtype=np.int64))
    idx, d2 = idx_obj.query(np.array([[0.1, 0.1]]))
    assert int(idx[0]) == 0
    assert abs(float(d2[0]) - 0.02) < 1e-16


def test_validation():
    with pytest.raises(ValueError):
        NeighborIndex(np.zeros((0, 2)), np.zeros(0, dtype=np.int64))
    with pytest.raises(ValueError):
        NeighborIndex(np.zeros((3, 2)), np.array([2, 1, 3], dtype=np.int64))
    with pytest.raises(ValueError):
        NeighborIndex(np.zeros((2, 2)), np.array([0, 1], dtype=np.int64), cell_size=0.0)
    idx_obj = NeighborIndex(np.zeros((2, 2)) + 1.0, np.array([0, 1], dtype=np.int64))
    with pytest.raises(ValueError):
        idx_obj.query(np.zeros((2, 3)))


def test_pure_backend_forced_in_subprocess():
    import json
    import subprocess
    import sys

    code = (
        "import json, numpy as np\n"
        "from hapticloc import kernels\n"
        "idx = kernels.NeighborIndex(np.array([[0.0, 0.0], [1.0, 1.0]]),\n"
        "                            np.array([0, 1], dtype=np.int64))\n"
        "i, d2 = idx.query(np.array([0.9, 0.9]))\n"
        "print(json.dumps([kernels.BACKEND, int(i), float(d2)]))\n"
    )
    out = subprocess.run([sys.executable, "-c", code],
                         capture_output=True, text=True,
                         env={"HAPTICLOC_PURE": "1", "PATH": "/usr/bin:/bin"})
    assert out.returncode == 0, out.stderr
    backend, i, d2 = json.loads(out.stdout)
    assert backend == "pure"
    assert i == 1 and abs(d2 - 0.02) < 1e-15
