"""Probabilistic K-mean with local alignment.

Alternates three steps until the membership matrix stops moving:

1. centers   -- membership-weighted average of the aligned curve windows;
2. alignment -- every curve is shifted to its best in-range window per center;
3. memberships -- fuzzy probabilities inversely related to the distances.

Near convergence the centers may be elongated on either side and the
memberships are dichotomised ("cleaned") by a distance quantile.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .curveset import CurveSet
from .dissimilarity import DistanceParams, PackedCurves, Track, track
from . import _backend

log = logging.getLogger(__name__)

BC_CAP = 1e3
PENALTY_FACTOR = 10.0


class InfeasibleError(ValueError):
    """A curve cannot host any admissible window of the requested length."""


class DegenerateClusterError(ValueError):
    """A cluster has lost all of its membership mass."""


@dataclass(frozen=True)
class ProbKmaParams:
    K: int = 2
    c_min: tuple[int, ...] | int = 40
    c_max: int | None = None
    m: float = 2.0
    dist: DistanceParams = field(default_factory=DistanceParams)
    tol: float = 1e-8
    max_iter: int = 1000
    bc_aggregation: str | float = "max"
    elongation_step_frac: float = 0.25
    elongation_max_tries: int = 10
    delta_jmk_frac: float = 0.05
    cleaning_trigger: float = 100.0
    seed: int = 0
    # symmetric Dirichlet concentration for the random initial memberships
    init_concentration: float = 1.0

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        c_min = self.c_min
        if np.isscalar(c_min):
            c_min = (int(c_min),) * self.K
        c_min = tuple(int(c) for c in c_min)
        if len(c_min) != self.K:
            raise ValueError(f"c_min has {len(c_min)} entries for K={self.K}")
        if min(c_min) < 2:
            raise ValueError("center lengths must be >= 2 points")
        object.__setattr__(self, "c_min", c_min)
        if self.c_max is None:
            object.__setattr__(self, "c_max", max(c_min))
        if any(c > self.c_max for c in c_min):
            raise ValueError("c_min exceeds c_max")
        if not self.m > 1:
            raise ValueError("m must be > 1")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        agg = self.bc_aggregation
        if not (agg in ("max", "mean") or (isinstance(agg, float) and 0 < agg < 1)):
            raise ValueError("bc_aggregation must be 'max', 'mean' or a quantile in (0, 1)")
        if not 0 < self.elongation_step_frac <= 1:
            raise ValueError("elongation_step_frac must lie in (0, 1]")
        if self.delta_jmk_frac < 0:
            raise ValueError("delta_jmk_frac must be >= 0")
        if not self.init_concentration > 0:
            raise ValueError("init_concentration must be > 0")


@dataclass
class Center:
    values: np.ndarray
    deriv: np.ndarray
    defined_mask: np.ndarray

    @property
    def length(self) -> int:
        return len(self.defined_mask)

    @property
    def valid(self) -> np.ndarray:
        return self.defined_mask


@dataclass
class ProbKmaState:
    P: np.ndarray
    S: np.ndarray
    centers: list
    D: np.ndarray
    objective_trace: list = field(default_factory=list)
    bc_trace: list = field(default_factory=list)
    iter: int = 0
    converged: bool = False
    cleaned_P: np.ndarray | None = None
    clean_centers: list | None = None
    # trace indices i where trace[i] may exceed trace[i - 1] by design
    breaks: list = field(default_factory=list)
    n_reseeds: int = 0
    n_elongations: int = 0

    @property
    def K(self) -> int:
        return self.P.shape[0]

    @property
    def lengths(self) -> list[int]:
        return [c.length for c in self.centers]


# ---------------------------------------------------------------- helpers

def _gather(tracks, shifts, c):
    """Stack windows ``[s, s + c)`` of every curve; out-of-range is missing."""
    n_cur = len(tracks)
    d = tracks[0].values.shape[1]
    V = np.zeros((n_cur, c, d))
    Dv = np.zeros((n_cur, c, d))
    M = np.zeros((n_cur, c), dtype=bool)
    for i, (t, s) in enumerate(zip(tracks, shifts)):
        s = int(s)
        lo, hi = max(s, 0), min(s + c, len(t))
        if hi > lo:
            V[i, lo - s:hi - s] = t.values[lo:hi]
            Dv[i, lo - s:hi - s] = t.deriv[lo:hi]
            M[i, lo - s:hi - s] = t.mask[lo:hi].astype(bool)
    return V, Dv, M


def _weighted_center(V, Dv, M, weights) -> Center:
    counts = M.sum(axis=1)
    wts = np.where(counts > 0, weights / np.maximum(counts, 1), 0.0)
    W = wts[:, None] * M
    den = W.sum(axis=0)
    defined = den > 0
    safe = np.where(defined, den, 1.0)[:, None]
    values = np.einsum("nc,ncd->cd", W, V) / safe
    deriv = np.einsum("nc,ncd->cd", W, Dv) / safe
    values[~defined] = np.nan
    deriv[~defined] = np.nan
    return Center(values, deriv, defined)


def center_track(center: Center) -> Track:
    m = center.defined_mask
    vals = np.ascontiguousarray(np.where(m[:, None], center.values, 0.0))
    der = np.ascontiguousarray(np.where(m[:, None], center.deriv, 0.0))
    return Track(vals, der, np.ascontiguousarray(m, dtype=np.uint8))


def _window_dists(V, Dv, M, center: Center, dist: DistanceParams):
    """Squared distances of stacked windows to one center; NaN if inadmissible."""
    ct = center_track(center)
    d = V.shape[2]
    w = dist.weight_vector(d)
    joint = M & ct.mask.astype(bool)[None, :]
    sq = ((V - ct.values[None]) ** 2) @ w
    if dist.alpha > 0:
        sqd = ((Dv - ct.deriv[None]) ** 2) @ w
        sq = (1 - dist.alpha) * sq + dist.alpha * sqd
    acc = np.where(joint, sq, 0.0).sum(axis=1)
    cnt = joint.sum(axis=1)
    out = np.full(len(cnt), np.nan)
    ok = cnt >= dist.min_count(center.length)
    out[ok] = acc[ok] / (d * cnt[ok])
    return out


def _prepare(cs: CurveSet, p: ProbKmaParams) -> PackedCurves:
    return PackedCurves.build(cs.curves, p.dist.alpha)


# ------------------------------------------------------------- operations

def update_memberships(dists_sq, m: float) -> np.ndarray:
    """Fuzzy memberships from a ``(K, N)`` matrix of squared distances.

    Curves at zero distance from some centers split their probability evenly
    among those centers.
    """
    D = np.asarray(dists_sq, dtype=float)
    if (D < 0).any() or np.isnan(D).any():
        raise ValueError("distances must be non-negative numbers")
    if not m > 1:
        raise ValueError("m must be > 1")
    zero = D == 0
    has_zero = zero.any(axis=0)
    P = np.empty_like(D)
    if has_zero.any():
        z = zero[:, has_zero].astype(float)
        P[:, has_zero] = z / z.sum(axis=0)
    pos = ~has_zero
    if pos.any():
        logw = -np.log(D[:, pos]) / (m - 1)
        logw -= logw.max(axis=0)
        w = np.exp(logw)
        P[:, pos] = w / w.sum(axis=0)
    return P


def objective_from(P, D, m) -> float:
    return float(np.sum(np.asarray(P) ** m * np.asarray(D)))


def objective_k_from(P, D, m, k) -> float:
    return float(np.sum(np.asarray(P)[k] ** m * np.asarray(D)[k]))


def distances_at(cs: CurveSet, centers, S, p: ProbKmaParams, penalty=None):
    """Squared distances of every curve window at shifts ``S`` to its center."""
    packed = _prepare(cs, p)
    return _distances_at(packed.tracks, centers, S, p, penalty)


def _distances_at(tracks, centers, S, p, penalty=None):
    K = len(centers)
    D = np.empty((K, len(tracks)))
    for k, c in enumerate(centers):
        V, Dv, M = _gather(tracks, S[k], c.length)
        D[k] = _window_dists(V, Dv, M, c, p.dist)
    if np.isnan(D).any():
        if penalty is None:
            ok = D[~np.isnan(D)]
            penalty = PENALTY_FACTOR * (ok.max() if ok.size else 1.0)
        D = np.where(np.isnan(D), penalty, D)
    return D


def objective(cs: CurveSet, st: ProbKmaState, p: ProbKmaParams) -> float:
    """Generalized least-squares functional, recomputed from scratch."""
    D = distances_at(cs, st.centers, st.S, p)
    return objective_from(st.P, D, p.m)


def objective_k(cs: CurveSet, st: ProbKmaState, p: ProbKmaParams, k: int) -> float:
    D = distances_at(cs, st.centers, st.S, p)
    return objective_k_from(st.P, D, p.m, k)


def update_centers(cs_or_tracks, P, S, lengths, p: ProbKmaParams) -> list:
    tracks = (_prepare(cs_or_tracks, p).tracks
              if isinstance(cs_or_tracks, CurveSet) else cs_or_tracks)
    P = np.asarray(P, dtype=float)
    centers = []
    for k, c in enumerate(lengths):
        V, Dv, M = _gather(tracks, S[k], c)
        centers.append(_weighted_center(V, Dv, M, P[k] ** p.m))
    return centers


def align(packed: PackedCurves, centers, S_prev, p: ProbKmaParams):
    """Best shift for every (cluster, curve) pair.

    Returns ``(S, D, n_inadmissible)``. Pairs with no admissible window keep
    their previous shift and get the penalty distance.
    """
    K = len(centers)
    N = len(packed.offsets) - 1
    S = np.empty((K, N), dtype=np.int64)
    D = np.empty((K, N))
    w = p.dist.weight_vector(packed.values.shape[1])
    for k, c in enumerate(centers):
        ct = center_track(c)
        sh, ds = _backend.best_shifts(packed.values, packed.deriv, packed.mask,
                                      packed.offsets, ct.values, ct.deriv,
                                      ct.mask, w, float(p.dist.alpha),
                                      p.dist.min_count(c.length))
        bad = sh < 0
        S[k] = np.where(bad, S_prev[k], sh)
        D[k] = ds
    bad = np.isnan(D)
    if bad.any():
        ok = D[~bad]
        if not ok.size:
            raise InfeasibleError("no admissible alignment for any cluster")
        D[bad] = PENALTY_FACTOR * ok.max()
    return S, D, int(bad.sum())


def bhattacharyya_k(p_new, p_old) -> float:
    a = np.asarray(p_new, dtype=float)
    b = np.asarray(p_old, dtype=float)
    if (a < 0).any() or (b < 0).any():
        raise ValueError("membership vectors must be non-negative")
    sa, sb = a.sum(), b.sum()
    if sa <= 0 or sb <= 0:
        raise DegenerateClusterError("all-zero membership vector")
    coef = np.sum(np.sqrt((a / sa) * (b / sb)))
    if coef <= 0:
        return BC_CAP
    return float(min(max(-math.log(coef), 0.0), BC_CAP))


def stopping_distance(P_new, P_old, agg="max") -> float:
    bc = np.array([bhattacharyya_k(a, b) for a, b in zip(P_new, P_old)])
    if agg == "max":
        return float(bc.max())
    if agg == "mean":
        return float(bc.mean())
    return float(np.quantile(bc, float(agg)))


def clean(dists_sq) -> np.ndarray:
    """Dichotomise memberships at the order-1/K quantile of all distances."""
    D = np.asarray(dists_sq, dtype=float)
    K = D.shape[0]
    thr = np.quantile(D.ravel(), 1.0 / K, method="inverted_cdf")
    return D <= thr


def _admissible_starts(t: Track, c: int, min_count: int) -> np.ndarray:
    if len(t) < c:
        return np.empty(0, dtype=np.int64)
    csum = np.concatenate(([0], np.cumsum(t.mask, dtype=np.int64)))
    counts = csum[c:] - csum[:-c]
    return np.flatnonzero(counts >= min_count)


def initialize(cs: CurveSet, p: ProbKmaParams, packed: PackedCurves | None = None):
    packed = packed or _prepare(cs, p)
    rng = np.random.default_rng(p.seed)
    K, N = p.K, len(cs)
    S = np.empty((K, N), dtype=np.int64)
    for k in range(K):
        c = p.c_min[k]
        mc = p.dist.min_count(c)
        for i, t in enumerate(packed.tracks):
            starts = _admissible_starts(t, c, mc)
            if not starts.size:
                raise InfeasibleError(
                    f"curve {cs[i].id!r} has no admissible window of length {c}")
            S[k, i] = starts[rng.integers(starts.size)]
    if K == 1:
        P = np.ones((1, N))
    else:
        P = rng.dirichlet(np.full(K, p.init_concentration), size=N).T
    centers = update_centers(packed.tracks, P, S, p.c_min, p)
    D = _distances_at(packed.tracks, centers, S, p)
    st = ProbKmaState(P=P, S=S, centers=centers, D=D)
    st.objective_trace.append(objective_from(P, D, p.m))
    return st


def _elongation_candidates(c, p: ProbKmaParams, step: int):
    room = p.c_max - c
    if room <= 0:
        return []
    one = min(step, room)
    both = min(step, room // 2)
    cands = [(one, 0), (0, one)]
    if both >= 1:
        cands.append((both, both))
    return cands


def elongate(tracks, st: ProbKmaState, p: ProbKmaParams, k: int, penalty=None):
    """Try to widen center ``k``; mutates ``st`` in place.

    Returns the number of accepted elongations.
    """
    if isinstance(tracks, CurveSet):
        tracks = _prepare(tracks, p).tracks
    if penalty is None:
        penalty = PENALTY_FACTOR * float(st.D.max())
    weights = st.P[k] ** p.m
    accepted = 0
    for _ in range(p.elongation_max_tries):
        c = st.centers[k].length
        j_old = float(np.sum(weights * st.D[k]))
        best = None
        nominal = max(1, int(round(p.elongation_step_frac * c)))
        step = nominal
        # a rejected step is retried at half size, with the tolerance prorated
        # so the admissible misfit per added point stays the same
        while best is None and step >= 1:
            limit = (1.0 + p.delta_jmk_frac * step / nominal) * j_old
            for left, right in _elongation_candidates(c, p, step):
                shifts = st.S[k] - left
                length = c + left + right
                V, Dv, M = _gather(tracks, shifts, length)
                center = _weighted_center(V, Dv, M, weights)
                d = _window_dists(V, Dv, M, center, p.dist)
                d = np.where(np.isnan(d), penalty, d)
                j_new = float(np.sum(weights * d))
                if j_new <= limit and (best is None or j_new < best[0]):
                    best = (j_new, shifts, center, d)
            step //= 2
        if best is None:
            break
        _, shifts, center, d = best
        st.S[k] = shifts
        st.centers[k] = center
        st.D[k] = d
        accepted += 1
    return accepted


def _reseed(st: ProbKmaState, k: int):
    worst = int(np.argmax(st.D.min(axis=0)))
    st.P[:, worst] = 0.0
    st.P[k, worst] = 1.0
    st.n_reseeds += 1
    log.debug("cluster %d died; reseeded from curve %d", k, worst)


def finalize(tracks, st: ProbKmaState, p: ProbKmaParams):
    st.cleaned_P = clean(st.D)
    st.clean_centers = [
        _weighted_center(*_gather(tracks, st.S[k], c.length),
                         st.cleaned_P[k].astype(float))
        if st.cleaned_P[k].any() else None
        for k, c in enumerate(st.centers)
    ]


def run(cs: CurveSet, p: ProbKmaParams) -> ProbKmaState:
    """Fit probKMA from a seeded random start."""
    packed = _prepare(cs, p)
    st = initialize(cs, p, packed)
    elongation_armed = p.c_max > min(p.c_min)
    settle = False
    for it in range(1, p.max_iter + 1):
        centers = update_centers(packed.tracks, st.P, st.S, st.lengths, p)
        S, D, _ = align(packed, centers, st.S, p)
        P = update_memberships(D, p.m)
        P_old = st.P
        st.centers, st.S, st.D, st.P, st.iter = centers, S, D, P, it
        dead = np.flatnonzero(P.sum(axis=1) <= 0)
        for k in dead:
            _reseed(st, int(k))
        st.objective_trace.append(objective_from(st.P, st.D, p.m))
        if dead.size:
            # the entry just logged already reflects the reseeded memberships
            st.breaks.append(len(st.objective_trace) - 1)
            st.bc_trace.append(float("inf"))
            continue
        bc = stopping_distance(P, P_old, p.bc_aggregation)
        st.bc_trace.append(bc)
        if bc < p.tol and not settle:
            st.converged = True
            break
        settle = False
        if bc < p.cleaning_trigger * p.tol:
            if elongation_armed:
                penalty = PENALTY_FACTOR * float(st.D.max())
                grew = sum(elongate(packed.tracks, st, p, k, penalty)
                           for k in range(p.K))
                st.n_elongations += grew
                if grew:
                    st.breaks.append(len(st.objective_trace))
                    settle = True
                # re-arm only if something grew and there is still room
                elongation_armed = bool(grew) and min(st.lengths) < p.c_max
            st.cleaned_P = clean(st.D)
    finalize(packed.tracks, st, p)
    return st


def run_best(cs: CurveSet, p: ProbKmaParams, n_init: int = 1) -> ProbKmaState:
    """Lowest final objective over ``n_init`` seeded starts.

    Start j uses a seed drawn from ``SeedSequence([p.seed, j])``; a single
    start uses ``p.seed`` itself.  Only meaningful when runs end at equal
    lengths (no elongation), otherwise objectives are not comparable.
    """
    if n_init < 1:
        raise ValueError("n_init must be >= 1")
    if n_init == 1:
        return run(cs, p)
    best = None
    for j in range(n_init):
        seed = int(np.random.SeedSequence([p.seed, j]).generate_state(1)[0])
        st = run(cs, replace(p, seed=seed))
        if best is None or st.objective_trace[-1] < best.objective_trace[-1]:
            best = st
    return best


# ---------------------------------------------------------- serialization

def _arr(a):
    a = np.asarray(a, dtype=float)
    return [[None if not np.isfinite(x) else float(x) for x in row] for row in a]


def center_to_json(c: Center) -> dict:
    return {"length": c.length, "values": _arr(c.values), "deriv": _arr(c.deriv),
            "defined_mask": [bool(x) for x in c.defined_mask]}


def center_from_json(doc: dict) -> Center:
    def f(rows):
        return np.array([[np.nan if x is None else x for x in r] for r in rows],
                        dtype=float)
    return Center(f(doc["values"]), f(doc["deriv"]),
                  np.array(doc["defined_mask"], dtype=bool))


def params_to_json(p: ProbKmaParams) -> dict:
    return {
        "K": p.K, "c_min": list(p.c_min), "c_max": p.c_max, "m": p.m,
        "alpha": p.dist.alpha,
        "weights": list(p.dist.weights) if p.dist.weights else None,
        "overlap_floor": p.dist.overlap_floor, "tol": p.tol,
        "max_iter": p.max_iter, "bc_aggregation": p.bc_aggregation,
        "elongation_step_frac": p.elongation_step_frac,
        "elongation_max_tries": p.elongation_max_tries,
        "delta_jmk_frac": p.delta_jmk_frac,
        "cleaning_trigger": p.cleaning_trigger, "seed": p.seed,
        "init_concentration": p.init_concentration,
    }


def params_from_json(doc: dict) -> ProbKmaParams:
    doc = dict(doc)
    dist = DistanceParams(alpha=doc.pop("alpha", 0.5),
                          weights=doc.pop("weights", None),
                          overlap_floor=doc.pop("overlap_floor", 0.8))
    doc["c_min"] = tuple(doc["c_min"])
    return ProbKmaParams(dist=dist, **doc)


def state_to_json(st: ProbKmaState, cs: CurveSet | None = None,
                  p: ProbKmaParams | None = None) -> dict:
    doc = {
        "curve_ids": cs.ids if cs is not None else None,
        "P": st.P.tolist(),
        "S": st.S.tolist(),
        "D": st.D.tolist(),
        "centers": [center_to_json(c) for c in st.centers],
        "objective_trace": list(st.objective_trace),
        "iter": st.iter,
        "converged": st.converged,
        "cleaned_P": st.cleaned_P.astype(int).tolist() if st.cleaned_P is not None else None,
        "breaks": list(st.breaks),
        "n_reseeds": st.n_reseeds,
        "n_elongations": st.n_elongations,
    }
    if p is not None:
        doc["params"] = params_to_json(p)
    return doc


def state_from_json(doc: dict) -> ProbKmaState:
    st = ProbKmaState(
        P=np.array(doc["P"], dtype=float),
        S=np.array(doc["S"], dtype=np.int64),
        centers=[center_from_json(c) for c in doc["centers"]],
        D=np.array(doc["D"], dtype=float),
        objective_trace=list(doc.get("objective_trace", [])),
        iter=doc.get("iter", 0),
        converged=doc.get("converged", False),
        breaks=list(doc.get("breaks", [])),
        n_reseeds=doc.get("n_reseeds", 0),
        n_elongations=doc.get("n_elongations", 0),
    )
    if doc.get("cleaned_P") is not None:
        st.cleaned_P = np.array(doc["cleaned_P"], dtype=bool)
    return st


def with_seed(p: ProbKmaParams, seed: int) -> ProbKmaParams:
    return replace(p, seed=int(seed))
