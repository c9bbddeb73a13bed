"""Pure-numpy versions of the compiled kernels in ``_kernels.pyx``.

Same signatures and conventions: missing entries already zeroed, uint8
masks, NaN marks an inadmissible window.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def distance_profile(xv, xd, xm, vv, vd, vm, w, alpha, min_count):
    n, d = xv.shape
    c = vv.shape[0]
    if n - c + 1 < 1:
        return np.empty(0)
    # (windows, c) joint mask
    mask = sliding_window_view(xm, c).astype(bool) & vm.astype(bool)
    xw = sliding_window_view(xv, c, axis=0)  # (windows, d, c)
    sq = np.einsum("j,wjt->wt", w, (xw - vv.T) ** 2)
    if alpha > 0:
        dw = sliding_window_view(xd, c, axis=0)
        sq = (1.0 - alpha) * sq + alpha * np.einsum("j,wjt->wt", w, (dw - vd.T) ** 2)
    acc = np.where(mask, sq, 0.0).sum(axis=1)
    cnt = mask.sum(axis=1)
    ok = (cnt >= max(min_count, 1))
    out = np.full(len(cnt), np.nan)
    out[ok] = acc[ok] / (d * cnt[ok])
    return out


def best_shifts(xv, xd, xm, offsets, vv, vd, vm, w, alpha, min_count):
    ncur = len(offsets) - 1
    shifts = np.full(ncur, -1, dtype=np.int64)
    dists = np.full(ncur, np.nan)
    for i in range(ncur):
        a, b = offsets[i], offsets[i + 1]
        prof = distance_profile(xv[a:b], xd[a:b], xm[a:b], vv, vd, vm, w,
                                alpha, min_count)
        if prof.size == 0 or np.isnan(prof).all():
            continue
        s = int(np.nanargmin(prof))
        shifts[i] = s
        dists[i] = prof[s]
    return shifts, dists
