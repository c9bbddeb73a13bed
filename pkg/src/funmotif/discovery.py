"""Motif discovery: many probKMA fits, then prune, merge and search.

Every cleaned cluster of every run is a candidate motif.  Candidates with
poor silhouette or little support are dropped, near-duplicates are merged by
complete-linkage clustering of their centers, and each surviving motif is
searched along all curves within a radius learned from its own members.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import combinations, product

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import squareform

from . import probkma as pk
from .curveset import CurveSet, estimate_derivatives, padded_window
from .dissimilarity import (DistanceParams, InadmissibleWindow, d_alpha_sq,
                            distance_profile, sliding_distance, track)
from .silhouette import silhouette
from .simgen import TruthLayout

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GridSpec:
    K_values: tuple[int, ...]
    c_values: tuple[int, ...]
    n_init: int
    base: pk.ProbKmaParams
    seed: int = 0

    def __post_init__(self):
        if self.n_init < 1:
            raise ValueError("n_init must be >= 1")
        if not self.K_values or not self.c_values:
            raise ValueError("K_values and c_values must be non-empty")
        object.__setattr__(self, "K_values", tuple(int(k) for k in self.K_values))
        object.__setattr__(self, "c_values", tuple(int(c) for c in self.c_values))

    def jobs(self):
        for K, c, init in product(self.K_values, self.c_values, range(self.n_init)):
            yield K, c, init, run_seed(self.seed, K, c, init)

    def params_for(self, K, c, seed) -> pk.ProbKmaParams:
        c_max = max(self.base.c_max or c, c)
        return replace(self.base, K=K, c_min=(c,) * K, c_max=c_max, seed=seed)


@dataclass(frozen=True)
class DiscoveryConfig:
    min_silhouette: float = 0.5
    min_support: int = 5
    rall_quantile: float = 0.25
    radius_sd: float = 2.0
    length_split_ratio: float = 1.5
    min_separation_frac: float = 0.5
    tp_overlap: float = 0.5
    # members farther than match_radius_mult * R_all do not count as support
    match_radius_mult: float = 2.0
    dedup_overlap: float = 0.5


@dataclass
class CandidateMotif:
    id: int
    center: pk.Center
    K: int
    c: int
    seed: int
    init: int
    members: list  # (curve_id, shift, dist)
    silhouette: float

    @property
    def support(self) -> int:
        return len(self.members)

    @property
    def length(self) -> int:
        return self.center.length

    @property
    def mean_dist(self) -> float:
        return float(np.mean([m[2] for m in self.members])) if self.members else math.inf


@dataclass
class DiscoveredMotif:
    id: int
    center: pk.Center
    radius: float
    group: list
    occurrences: list = field(default_factory=list)  # (curve_id, start, dist)
    provenance: tuple | None = None

    @property
    def length(self) -> int:
        return self.center.length


@dataclass
class GridResult:
    candidates: list
    n_runs: int
    failures: list


def run_seed(master: int, K: int, c: int, init: int) -> int:
    ss = np.random.SeedSequence([int(master), int(K), int(c), int(init)])
    return int(ss.generate_state(1)[0])


# ------------------------------------------------------------------ grid

def _member_dists(cs, center, shifts, dist):
    ct = pk.center_track(center)
    out = []
    for i, s in shifts:
        try:
            d2 = d_alpha_sq(padded_window(cs[i], int(s), center.length), ct, dist)
        except InadmissibleWindow:
            continue
        out.append((cs[i].id, int(s), math.sqrt(max(d2, 0.0))))
    return out


def candidates_from_state(cs, st, p, K, c, init, first_id=0):
    rep = silhouette(cs, st.cleaned_P, st.S, st.lengths, p.dist)
    out = []
    for k in range(st.K):
        center = st.centers[k]
        if not st.cleaned_P[k].any():
            continue
        members = _member_dists(
            cs, center, [(i, st.S[k, i]) for i in np.flatnonzero(st.cleaned_P[k])],
            p.dist)
        if not members:
            continue
        sk = rep.cluster_avg[k]
        out.append(CandidateMotif(first_id + len(out), center, K, c, p.seed, init,
                                  members, float(sk) if np.isfinite(sk) else -1.0))
    return out


def _one_run(args):
    cs, p, K, c, init = args
    try:
        st = pk.run(cs, p)
        return candidates_from_state(cs, st, p, K, c, init), None
    except Exception as exc:  # noqa: BLE001 - recorded, other runs continue
        return [], (K, c, init, p.seed, repr(exc))


def run_grid(cs: CurveSet, spec: GridSpec, threads: int = 1) -> GridResult:
    jobs = [(cs, spec.params_for(K, c, seed), K, c, init)
            for K, c, init, seed in spec.jobs()]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(_one_run, jobs))
    else:
        results = [_one_run(j) for j in jobs]
    cands, failures = [], []
    for found, err in results:
        if err:
            log.warning("probKMA run failed: %s", err)
            failures.append(err)
        for cand in found:
            cand.id = len(cands)
            cands.append(cand)
    return GridResult(cands, len(jobs), failures)


# ----------------------------------------------------------- post-process

def prune(cands, min_silhouette: float = 0.5, min_support: int = 5):
    return [c for c in cands
            if c.silhouette >= min_silhouette and c.support >= min_support]


def candidate_distance_matrix(cands, dist: DistanceParams) -> np.ndarray:
    n = len(cands)
    out = np.zeros((n, n))
    tracks = [track(pk.center_track(c.center), dist.alpha) for c in cands]
    for a, b in combinations(range(n), 2):
        try:
            val, _ = sliding_distance(tracks[a], tracks[b], dist)
        except InadmissibleWindow:
            val = np.inf
        out[a, b] = out[b, a] = val
    return out


def complete_linkage_groups(dmat, height: float) -> np.ndarray:
    """Group labels from a complete-linkage dendrogram cut at ``height``."""
    dmat = np.asarray(dmat, dtype=float)
    n = len(dmat)
    if n == 1:
        return np.zeros(1, dtype=int)
    finite = np.where(np.isfinite(dmat), dmat, np.nanmax(dmat[np.isfinite(dmat)]) * 10 + 1)
    Z = linkage(squareform(finite, checks=False), method="complete")
    labels = fcluster(Z, t=height, criterion="distance")
    # relabel by first appearance so output is order-stable
    _, first = np.unique(labels, return_index=True)
    order = {lab: r for r, lab in enumerate(labels[np.sort(first)])}
    return np.array([order[lab] for lab in labels])


def _length_strata(cands, ratio):
    cands = sorted(cands, key=lambda c: c.length)
    strata, cur = [], [cands[0]]
    for cand in cands[1:]:
        if cand.length > ratio * cur[0].length:
            strata.append(cur)
            cur = [cand]
        else:
            cur.append(cand)
    strata.append(cur)
    return strata


def _representative(cands):
    return min(cands, key=lambda c: (-c.support, c.mean_dist, c.id))


def global_radius(cands, q: float) -> float:
    pooled = np.concatenate([[m[2] for m in c.members] for c in cands])
    return float(np.quantile(pooled, q))


def merge(cands, cs: CurveSet | None = None, dist: DistanceParams | None = None,
          config: DiscoveryConfig = DiscoveryConfig(), core: float | None = None):
    """Collapse near-duplicate candidates into discovered motifs.

    The radius is mean + radius_sd * SD of the group's member distances,
    restricted to members within ``core`` when it is given.
    """
    if not cands:
        return []
    dist = dist or DistanceParams()
    r_all = global_radius(cands, config.rall_quantile)
    dmat = candidate_distance_matrix(cands, dist)
    labels = complete_linkage_groups(dmat, 2 * r_all)
    motifs = []
    for g in range(labels.max() + 1):
        group = [c for c, lab in zip(cands, labels) if lab == g]
        dists = np.array([m[2] for c in group for m in c.members
                          if core is None or m[2] <= core])
        sd = dists.std(ddof=1) if len(dists) > 1 else 0.0
        radius = float(dists.mean() + config.radius_sd * sd)
        lengths = [c.length for c in group]
        if max(lengths) > config.length_split_ratio * min(lengths):
            reps = [_representative(s) for s in _length_strata(group, config.length_split_ratio)]
        else:
            reps = [_representative(group)]
        for rep in reps:
            motifs.append(DiscoveredMotif(
                id=len(motifs), center=rep.center, radius=radius,
                group=[c.id for c in group],
                provenance=(rep.K, rep.c, rep.seed, rep.id)))
    log.info("merged %d candidates into %d motifs (R_all=%.4g)",
             len(cands), len(motifs), r_all)
    return motifs


def _local_minima(prof):
    ok = np.isfinite(prof)
    left = np.concatenate(([np.inf], prof[:-1]))
    right = np.concatenate((prof[1:], [np.inf]))
    left = np.where(np.isfinite(left), left, np.inf)
    right = np.where(np.isfinite(right), right, np.inf)
    return np.flatnonzero(ok & (prof <= left) & (prof <= right))


def search_curve(curve, center, radius, dist: DistanceParams,
                 min_separation_frac: float = 0.5):
    """Non-overlapping windows of ``curve`` within ``radius`` of ``center``."""
    try:
        prof = distance_profile(curve, pk.center_track(center), dist)
    except InadmissibleWindow:
        return []
    prof = np.sqrt(np.clip(prof, 0.0, None))
    L = center.length
    max_overlap = (1.0 - min_separation_frac) * L
    cand = [s for s in _local_minima(prof) if prof[s] <= radius]
    cand.sort(key=lambda s: (prof[s], s))
    taken = []
    for s in cand:
        if all(L - abs(s - t) <= max_overlap for t in taken):
            taken.append(int(s))
    return sorted((s, float(prof[s])) for s in taken)


def search(cs: CurveSet, motifs, dist: DistanceParams | None = None,
           config: DiscoveryConfig = DiscoveryConfig(), radius_scale: float = 1.0):
    dist = dist or DistanceParams()
    for m in motifs:
        m.occurrences = [
            (c.id, s, d)
            for c in cs.curves
            for s, d in search_curve(c, m.center, m.radius * radius_scale, dist,
                                     config.min_separation_frac)
        ]
    return motifs


def _core_count(dists, core):
    return sum(d <= core for d in dists)


def _shared(a, b, frac):
    """Occurrences of ``a`` overlapping one of ``b`` by ``frac`` of the shorter motif."""
    need = frac * min(a.length, b.length)
    by_curve: dict = {}
    for cid, s, _ in b.occurrences:
        by_curve.setdefault(cid, []).append(s)
    n = 0
    for cid, s, _ in a.occurrences:
        if any(_overlap(s, s + a.length, t, t + b.length) >= need
               for t in by_curve.get(cid, ())):
            n += 1
    return n


def dedup(motifs, core: float, frac: float = 0.5):
    """Drop motifs whose occurrences mostly coincide with a better motif's.

    Better means more occurrences within ``core``, then lower mean distance.
    """
    def key(m):
        d = [o[2] for o in m.occurrences]
        return (-_core_count(d, core), float(np.mean(d)) if d else math.inf, m.id)

    out = []
    for m in sorted(motifs, key=key):
        if any(_shared(m, b, frac) >= frac * min(len(m.occurrences), len(b.occurrences))
               for b in out):
            continue
        out.append(m)
    out.sort(key=lambda m: m.id)
    return out


def postprocess(cs: CurveSet, cands, dist: DistanceParams | None = None,
                config: DiscoveryConfig = DiscoveryConfig()):
    """Candidates to final motifs.  Returns ``(motifs, kept_candidates)``.

    Only members within ``match_radius_mult * R_all`` count as support and
    feed the radius; after the search, motifs with too few occurrences or
    duplicating a better motif are dropped.
    """
    dist = dist or DistanceParams()
    kept = prune(cands, config.min_silhouette, config.min_support)
    if not kept:
        return [], []
    core = config.match_radius_mult * global_radius(kept, config.rall_quantile)
    kept = [c for c in kept
            if _core_count([m[2] for m in c.members], core) >= config.min_support]
    motifs = merge(kept, cs, dist, config, core=core)
    search(cs, motifs, dist, config)
    motifs = [m for m in motifs if len(m.occurrences) >= config.min_support]
    motifs = dedup(motifs, core, config.dedup_overlap)
    for i, m in enumerate(motifs):
        m.id = i
    log.info("%d motifs after search and dedup", len(motifs))
    return motifs, kept


def discover(cs: CurveSet, spec: GridSpec, config: DiscoveryConfig = DiscoveryConfig(),
             threads: int = 1):
    grid = run_grid(cs, spec, threads)
    motifs, kept = postprocess(cs, grid.candidates, spec.base.dist, config)
    return motifs, grid, kept


# --------------------------------------------------------- serialization

def motifs_to_json(motifs) -> dict:
    return {"motifs": [
        {"id": m.id, "length": m.length, "radius": m.radius,
         "group": list(m.group),
         "provenance": list(m.provenance) if m.provenance else None,
         "center": pk.center_to_json(m.center),
         "n_occurrences": len(m.occurrences)}
        for m in motifs
    ]}


def motifs_from_json(doc: dict) -> list:
    return [DiscoveredMotif(int(d["id"]), pk.center_from_json(d["center"]),
                            float(d["radius"]), list(d.get("group", [])),
                            provenance=tuple(d["provenance"]) if d.get("provenance") else None)
            for d in doc["motifs"]]


def write_occurrences(motifs, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["motif_id", "curve_id", "start", "dist"])
        for m in motifs:
            for cid, s, d in m.occurrences:
                w.writerow([m.id, cid, s, repr(float(d))])


def write_candidates(cands, kept_ids, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["candidate_id", "K", "c", "init", "seed", "length",
                    "support", "S_k", "mean_dist", "kept"])
        for c in cands:
            w.writerow([c.id, c.K, c.c, c.init, c.seed, c.length, c.support,
                        repr(c.silhouette), repr(c.mean_dist), int(c.id in kept_ids)])


def read_occurrences(path) -> dict:
    """``{motif_id: [(curve_id, start, dist), ...]}``"""
    out: dict = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(int(row["motif_id"]), []).append(
                (row["curve_id"], int(row["start"]), float(row["dist"])))
    return out


# ------------------------------------------------------------ evaluation

def rand_index(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    n = len(a)
    if n < 2:
        return 1.0
    same_a = a[:, None] == a[None, :]
    same_b = b[:, None] == b[None, :]
    iu = np.triu_indices(n, 1)
    return float(np.mean(same_a[iu] == same_b[iu]))


def classification_error(truth_labels, found_labels) -> float:
    return 1.0 - rand_index(truth_labels, found_labels)


def harden(P) -> np.ndarray:
    return np.argmax(np.asarray(P), axis=0)


@dataclass
class MotifScore:
    motif_id: int
    truth_motif: int | None
    tp: int
    fp: int
    fn: int
    length: int | None
    center_distance: float | None
    matched_distances: list


@dataclass
class EvaluationReport:
    motifs: list
    classification_error: float | None = None

    def to_json(self) -> dict:
        return {
            "n_motifs": len(self.motifs),
            "motifs": [vars(m) for m in self.motifs],
            "classification_error": self.classification_error,
        }


def _truth_track(values):
    return estimate_derivatives(CurveSet.from_arrays([values]))[0]


def _overlap(a0, a1, b0, b1):
    return max(0, min(a1, b1) - max(a0, b0))


def evaluate(found, truth: TruthLayout, dist: DistanceParams | None = None,
             tp_overlap: float = 0.5, truth_labels=None, found_labels=None):
    """Score discovered motifs against a planted layout.

    ``found`` holds DiscoveredMotif objects, or ``(motif_id, occurrences,
    length)`` tuples when no centers are available; in the latter case each
    motif is matched to the truth motif it overlaps most.
    """
    dist = dist or DistanceParams()
    truth_ids = sorted({o.motif_id for o in truth.occurrences})
    truth_tracks = {mid: _truth_track(truth.motifs[mid])
                    for mid in truth_ids if mid < len(truth.motifs)}
    scores = []
    for m in found:
        if isinstance(m, DiscoveredMotif):
            mid_found, occs, length, center = m.id, m.occurrences, m.length, m.center
        else:
            mid_found, occs, length = m
            center = None
        match, cdist = None, None
        if center is not None and truth_tracks:
            best = []
            for tid, tt in truth_tracks.items():
                try:
                    dd, _ = sliding_distance(tt, pk.center_track(center), dist)
                except InadmissibleWindow:
                    dd = math.inf
                best.append((dd, tid))
            cdist, match = min(best)
        elif truth_ids:
            counts = {tid: 0 for tid in truth_ids}
            for cid, s, _ in occs:
                for o in truth.occurrences:
                    if o.curve_id == cid and _overlap(s, s + (length or o.length), o.start, o.stop) \
                            >= tp_overlap * o.length:
                        counts[o.motif_id] += 1
            match = max(truth_ids, key=lambda t: (counts[t], -t))
        planted = truth.for_motif(match) if match is not None else []
        claimed = set()
        tp = fp = 0
        matched = []
        for cid, s, d in sorted(occs, key=lambda o: o[2]):
            L = length if length is not None else (planted[0].length if planted else 0)
            hit = None
            for j, o in enumerate(planted):
                if j in claimed or o.curve_id != cid:
                    continue
                if _overlap(s, s + L, o.start, o.stop) >= tp_overlap * o.length:
                    hit = j
                    break
            if hit is None:
                fp += 1
            else:
                claimed.add(hit)
                tp += 1
                matched.append(float(d))
        scores.append(MotifScore(mid_found, match, tp, fp, len(planted) - tp, length,
                                 None if cdist is None else float(cdist), matched))
    err = None
    if truth_labels is not None and found_labels is not None:
        err = classification_error(truth_labels, found_labels)
    return EvaluationReport(scores, err)
