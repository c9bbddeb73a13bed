"""Generalized silhouette for locally aligned curve portions."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .curveset import CurveSet, padded_window
from .dissimilarity import DistanceParams, InadmissibleWindow, sliding_distance


@dataclass(frozen=True)
class PortionScore:
    curve_id: str
    cluster: int
    shift: int
    s: float


@dataclass
class SilhouetteReport:
    portions: list[PortionScore]
    cluster_avg: np.ndarray
    overall: float | None

    def to_csv(self) -> str:
        """Rows ordered by cluster then decreasing score, plus a summary block."""
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["curve_id", "cluster", "shift", "s_j"])
        rows = sorted(self.portions,
                      key=lambda r: (r.cluster, -np.nan_to_num(r.s, nan=-np.inf)))
        for r in rows:
            w.writerow([r.curve_id, r.cluster, r.shift, _fmt(r.s)])
        w.writerow([])
        w.writerow(["cluster", "S_k"])
        for k, v in enumerate(self.cluster_avg):
            w.writerow([k, _fmt(v)])
        w.writerow(["overall", _fmt(self.overall)])
        return buf.getvalue()


def _fmt(x):
    if x is None or (isinstance(x, float) and np.isnan(x)):
        return "NaN"
    return repr(float(x))


def silhouette_scores(dmat, labels):
    """Per-item silhouette from a precomputed distance matrix.

    ``a_j`` averages over the *other* members of ``j``'s cluster (0 for a
    singleton); NaN entries in ``dmat`` are skipped.  With fewer than two
    non-empty clusters every score is NaN.
    """
    dmat = np.asarray(dmat, dtype=float)
    labels = np.asarray(labels)
    n = len(labels)
    clusters = np.unique(labels)
    if len(clusters) < 2:
        return np.full(n, np.nan)
    s = np.empty(n)
    for j in range(n):
        own = labels == labels[j]
        own[j] = False
        row = dmat[j]
        a = np.nanmean(row[own]) if own.any() and np.isfinite(row[own]).any() else 0.0
        b = np.inf
        for k in clusters:
            if k == labels[j]:
                continue
            vals = row[labels == k]
            if np.isfinite(vals).any():
                b = min(b, np.nanmean(vals))
        if not np.isfinite(b):
            s[j] = np.nan
        elif a == b:
            s[j] = 0.0
        else:
            s[j] = (b - a) / max(a, b)
    return s


def portion_distance_matrix(portions, dist: DistanceParams) -> np.ndarray:
    """Pairwise distances; unequal lengths slide the shorter inside the longer."""
    n = len(portions)
    out = np.zeros((n, n))
    for a in range(n):
        for b in range(a + 1, n):
            try:
                val, _ = sliding_distance(portions[a], portions[b], dist)
            except InadmissibleWindow:
                val = np.nan
            out[a, b] = out[b, a] = val
    return out


def extract_portions(cs: CurveSet, cleaned_P, S, lengths):
    """``(curve_id, cluster, shift, window)`` for every cleaned membership."""
    cleaned_P = np.asarray(cleaned_P, dtype=bool)
    out = []
    for k in range(cleaned_P.shape[0]):
        for i in np.flatnonzero(cleaned_P[k]):
            s = int(S[k][i])
            out.append((cs[i].id, k, s, padded_window(cs[i], s, int(lengths[k]))))
    return out


def silhouette(cs: CurveSet, cleaned_P, S, centers, dist: DistanceParams) -> SilhouetteReport:
    """Silhouette of every cleaned portion, per-cluster means and overall mean.

    ``centers`` may be Center objects or plain lengths.
    """
    lengths = [c if np.isscalar(c) else c.length for c in centers]
    cleaned_P = np.asarray(cleaned_P, dtype=bool)
    K = cleaned_P.shape[0]
    items = extract_portions(cs, cleaned_P, S, lengths)
    labels = np.array([k for _, k, _, _ in items], dtype=int)
    dmat = portion_distance_matrix([w for *_, w in items], dist)
    s = silhouette_scores(dmat, labels) if items else np.empty(0)
    portions = [PortionScore(cid, k, sh, float(v))
                for (cid, k, sh, _), v in zip(items, s)]
    cluster_avg = np.full(K, np.nan)
    for k in range(K):
        sel = s[labels == k] if items else np.empty(0)
        if sel.size and np.isfinite(sel).any():
            cluster_avg[k] = float(np.nanmean(sel))
    overall = None
    if len(np.unique(labels)) >= 2 and np.isfinite(cluster_avg).any():
        overall = float(np.nanmean(cluster_avg))
    return SilhouetteReport(portions, cluster_avg, overall)
