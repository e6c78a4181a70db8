# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled nearest-neighbor search over a uniform 2D grid index.

Scans cells in expanding Chebyshev rings around the query cell; a ring at
cell distance r can hold nothing closer than (r-1)*cell_size, so the scan
stops as soon as that bound strictly exceeds the best distance found.
Distance ties are broken toward the lowest step id, which matches a brute
force first-minimum scan over entries sorted by step id.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, floor

cnp.import_array()

BACKEND = "compiled"


cdef inline void _scan_cell(
    Py_ssize_t c,
    const double[:, ::1] xy,
    const long long[::1] sid,
    const long long[::1] starts,
    const long long[::1] order,
    double qx,
    double qy,
    double* best_d2,
    long long* best_sid,
    Py_ssize_t* best_i,
) noexcept nogil:
    cdef Py_ssize_t k, e
    cdef double dx, dy, d2
    for k in range(<Py_ssize_t>starts[c], <Py_ssize_t>starts[c + 1]):
        e = <Py_ssize_t>order[k]
        dx = qx - xy[e, 0]
        dy = qy - xy[e, 1]
        d2 = dx * dx + dy * dy
        if d2 < best_d2[0] or (d2 == best_d2[0] and sid[e] < best_sid[0]):
            best_d2[0] = d2
            best_sid[0] = sid[e]
            best_i[0] = e


def ring_nearest(
    const double[:, ::1] xy,
    const long long[::1] sid,
    double x0,
    double y0,
    double cell,
    Py_ssize_t nx,
    Py_ssize_t ny,
    const long long[::1] starts,
    const long long[::1] order,
    const double[:, ::1] queries,
):
    """For each query point return (index, squared distance) of the nearest entry."""
    cdef Py_ssize_t nq = queries.shape[0]
    out_idx = np.empty(nq, dtype=np.int64)
    out_d2 = np.empty(nq, dtype=np.float64)
    cdef long long[::1] oi = out_idx
    cdef double[::1] od = out_d2

    cdef Py_ssize_t qi, ix, iy, r, r0, r_max, cx, cy, cx0, cx1, cy0, cy1
    cdef Py_ssize_t rx, ry, best_i
    cdef double qx, qy, best_d2, bound
    cdef long long best_sid

    with nogil:
        for qi in range(nq):
            qx = queries[qi, 0]
            qy = queries[qi, 1]
            ix = <Py_ssize_t>floor((qx - x0) / cell)
            iy = <Py_ssize_t>floor((qy - y0) / cell)
            # first ring that can touch the grid, and the ring covering all of it
            rx = 0
            if ix < 0:
                rx = -ix
            elif ix > nx - 1:
                rx = ix - (nx - 1)
            ry = 0
            if iy < 0:
                ry = -iy
            elif iy > ny - 1:
                ry = iy - (ny - 1)
            r0 = rx if rx > ry else ry
            rx = ix if ix > nx - 1 - ix else nx - 1 - ix
            ry = iy if iy > ny - 1 - iy else ny - 1 - iy
            r_max = rx if rx > ry else ry

            best_d2 = INFINITY
            best_sid = 0
            best_i = -1
            r = r0
            while True:
                cx0 = ix - r if ix - r > 0 else 0
                cx1 = ix + r if ix + r < nx - 1 else nx - 1
                cy0 = iy - r if iy - r > 0 else 0
                cy1 = iy + r if iy + r < ny - 1 else ny - 1
                if r == 0:
                    if cx0 <= ix <= cx1 and cy0 <= iy <= cy1:
                        _scan_cell(ix * ny + iy, xy, sid, starts, order,
                                   qx, qy, &best_d2, &best_sid, &best_i)
                else:
                    if iy - r >= 0:
                        for cx in range(cx0, cx1 + 1):
                            _scan_cell(cx * ny + (iy - r), xy, sid, starts, order,
                                       qx, qy, &best_d2, &best_sid, &best_i)
                    if iy + r <= ny - 1:
                        for cx in range(cx0, cx1 + 1):
                            _scan_cell(cx * ny + (iy + r), xy, sid, starts, order,
                                       qx, qy, &best_d2, &best_sid, &best_i)
                    cy0 = iy - r + 1 if iy - r + 1 > 0 else 0
                    cy1 = iy + r - 1 if iy + r - 1 < ny - 1 else ny - 1
                    if ix - r >= 0:
                        for cy in range(cy0, cy1 + 1):
                            _scan_cell((ix - r) * ny + cy, xy, sid, starts, order,
                                       qx, qy, &best_d2, &best_sid, &best_i)
                    if ix + r <= nx - 1:
                        for cy in range(cy0, cy1 + 1):
                            _scan_cell((ix + r) * ny + cy, xy, sid, starts, order,
                                       qx, qy, &best_d2, &best_sid, &best_i)
                if best_i >= 0:
                    bound = r * cell
                    if bound * bound > best_d2:
                        break
                if r >= r_max:
                    break
                r += 1
            oi[qi] = best_i
            od[qi] = best_d2

    return out_idx, out_d2
