# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled sliding-window kernels for the gap-aware distance.

Inputs follow the convention of ``funmotif._fallback``: values and
derivatives have missing entries replaced by 0 and a separate uint8 mask
marks usable points.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport NAN, isnan

cnp.import_array()


cdef inline void _profile(const double[:, ::1] xv, const double[:, ::1] xd,
                          const unsigned char[::1] xm, Py_ssize_t x0,
                          Py_ssize_t nwin,
                          const double[:, ::1] vv, const double[:, ::1] vd,
                          const unsigned char[::1] vm,
                          const double[::1] w, double alpha,
                          Py_ssize_t min_count, double[::1] out) noexcept nogil:
    cdef Py_ssize_t c = vv.shape[0]
    cdef Py_ssize_t d = vv.shape[1]
    cdef Py_ssize_t s, t, j, cnt, row
    cdef double acc, lev, der, diff, a0 = 1.0 - alpha
    for s in range(nwin):
        acc = 0.0
        cnt = 0
        for t in range(c):
            row = x0 + s + t
            if xm[row] and vm[t]:
                cnt += 1
                lev = 0.0
                der = 0.0
                for j in range(d):
                    diff = xv[row, j] - vv[t, j]
                    lev = lev + w[j] * diff * diff
                    if alpha > 0.0:
                        diff = xd[row, j] - vd[t, j]
                        der = der + w[j] * diff * diff
                acc = acc + a0 * lev + alpha * der
        if cnt >= min_count and cnt > 0:
            out[s] = acc / (d * cnt)
        else:
            out[s] = NAN


def distance_profile(const double[:, ::1] xv, const double[:, ::1] xd,
                     const unsigned char[::1] xm,
                     const double[:, ::1] vv, const double[:, ::1] vd,
                     const unsigned char[::1] vm,
                     const double[::1] w, double alpha, Py_ssize_t min_count):
    cdef Py_ssize_t n = xv.shape[0]
    cdef Py_ssize_t c = vv.shape[0]
    cdef Py_ssize_t nwin = n - c + 1
    if nwin < 1:
        return np.empty(0)
    out = np.empty(nwin)
    cdef double[::1] o = out
    with nogil:
        _profile(xv, xd, xm, 0, nwin, vv, vd, vm, w, alpha, min_count, o)
    return out


def best_shifts(const double[:, ::1] xv, const double[:, ::1] xd,
                const unsigned char[::1] xm, const long[::1] offsets,
                const double[:, ::1] vv, const double[:, ::1] vd,
                const unsigned char[::1] vm,
                const double[::1] w, double alpha, Py_ssize_t min_count):
    """Best in-range shift of one center against every packed curve.

    Curve ``i`` occupies rows ``offsets[i]:offsets[i + 1]``. Returns
    ``(shifts, dists)``; a curve with no admissible window gets shift -1 and
    distance NaN. Ties resolve to the smallest shift.
    """
    cdef Py_ssize_t ncur = offsets.shape[0] - 1
    cdef Py_ssize_t c = vv.shape[0]
    cdef Py_ssize_t maxwin = 0, i, s, nwin, best
    cdef double bestd, val
    for i in range(ncur):
        nwin = offsets[i + 1] - offsets[i] - c + 1
        if nwin > maxwin:
            maxwin = nwin
    shifts = np.full(ncur, -1, dtype=np.int64)
    dists = np.full(ncur, np.nan)
    cdef long long[::1] sh = shifts
    cdef double[::1] ds = dists
    cdef double[::1] buf = np.empty(max(maxwin, 1))
    with nogil:
        for i in range(ncur):
            nwin = offsets[i + 1] - offsets[i] - c + 1
            if nwin < 1:
                continue
            _profile(xv, xd, xm, offsets[i], nwin, vv, vd, vm, w, alpha,
                     min_count, buf)
            best = -1
            bestd = 0.0
            for s in range(nwin):
                val = buf[s]
                if not isnan(val) and (best < 0 or val < bestd):
                    best = s
                    bestd = val
            if best >= 0:
                sh[i] = best
                ds[i] = bestd
    return shifts, dists
