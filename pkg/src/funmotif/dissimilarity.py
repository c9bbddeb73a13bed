"""Gap-aware Sobolev-like dissimilarity between curve windows and centers.

For a window ``x`` and center ``v`` of equal length the squared distance is

    (1 - alpha) / d * sum_j w_j * mean_t (x_j - v_j)^2
  +      alpha  / d * sum_j w_j * mean_t (x'_j - v'_j)^2

where ``mean_t`` runs over grid points usable in both inputs.  A point is
usable when its value is present and, for ``alpha > 0``, its derivative too.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _backend


class InadmissibleWindow(ValueError):
    """Too few jointly valid points to score a window."""


@dataclass(frozen=True)
class DistanceParams:
    alpha: float = 0.5
    weights: tuple[float, ...] | None = None
    overlap_floor: float = 0.8

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not 0.0 < self.overlap_floor <= 1.0:
            raise ValueError("overlap_floor must lie in (0, 1]")
        if self.weights is not None:
            w = tuple(float(x) for x in np.atleast_1d(self.weights))
            if any(x <= 0 for x in w):
                raise ValueError("component weights must be positive")
            object.__setattr__(self, "weights", w)

    def weight_vector(self, d: int) -> np.ndarray:
        if self.weights is None:
            return np.ones(d)
        if len(self.weights) != d:
            raise ValueError(f"{len(self.weights)} weights for {d}-dimensional curves")
        return np.asarray(self.weights, dtype=float)

    def min_count(self, length: int) -> int:
        need = max(1, math.ceil(self.overlap_floor * length - 1e-9))
        if self.alpha > 0:
            need = max(need, 2)
        return need


@dataclass(frozen=True)
class Track:
    """Kernel-ready arrays: zero-filled values/derivatives plus uint8 mask."""

    values: np.ndarray
    deriv: np.ndarray
    mask: np.ndarray

    def window(self, start: int, length: int) -> "Track":
        sl = slice(start, start + length)
        return Track(self.values[sl], self.deriv[sl], self.mask[sl])

    def __len__(self):
        return len(self.mask)


def usable_mask(values, deriv, valid, alpha: float) -> np.ndarray:
    mask = np.asarray(valid, dtype=bool).copy()
    if alpha > 0:
        mask &= np.isfinite(deriv).all(axis=1)
    return mask


def track(obj, alpha: float) -> Track:
    """Build a :class:`Track` from anything with values/deriv/valid."""
    if isinstance(obj, Track):
        return obj
    values = np.asarray(obj.values, dtype=float)
    deriv = np.asarray(obj.deriv, dtype=float)
    mask = usable_mask(values, deriv, obj.valid, alpha)
    vals = np.ascontiguousarray(np.where(mask[:, None], values, 0.0))
    if alpha > 0:
        der = np.ascontiguousarray(np.where(mask[:, None], deriv, 0.0))
    else:
        der = np.zeros_like(vals)
    return Track(vals, der, np.ascontiguousarray(mask, dtype=np.uint8))


@dataclass
class PackedCurves:
    """All curves of a set stacked row-wise for the batch kernel."""

    values: np.ndarray
    deriv: np.ndarray
    mask: np.ndarray
    offsets: np.ndarray
    tracks: list = field(default_factory=list)

    @classmethod
    def build(cls, curves, alpha: float) -> "PackedCurves":
        tracks = [track(c, alpha) for c in curves]
        lens = [len(t) for t in tracks]
        offsets = np.concatenate(([0], np.cumsum(lens))).astype(np.int64)
        return cls(np.ascontiguousarray(np.vstack([t.values for t in tracks])),
                   np.ascontiguousarray(np.vstack([t.deriv for t in tracks])),
                   np.ascontiguousarray(np.concatenate([t.mask for t in tracks])),
                   offsets, tracks)


def _raw_profile(x: Track, v: Track, p: DistanceParams) -> np.ndarray:
    w = p.weight_vector(x.values.shape[1])
    return _backend.distance_profile(x.values, x.deriv, x.mask, v.values,
                                     v.deriv, v.mask, w, float(p.alpha),
                                     p.min_count(len(v)))


def d_alpha_sq(x, v, p: DistanceParams) -> float:
    """Squared distance between two equal-length windows.

    Raises :class:`InadmissibleWindow` when the joint valid support is below
    the overlap floor.
    """
    x, v = track(x, p.alpha), track(v, p.alpha)
    if len(x) != len(v):
        raise ValueError(f"length mismatch: {len(x)} vs {len(v)}")
    val = _raw_profile(x, v, p)[0]
    if np.isnan(val):
        raise InadmissibleWindow("insufficient overlap between window and center")
    return float(val)


def distance_profile(curve, v, p: DistanceParams) -> np.ndarray:
    """Squared distance of ``v`` against every in-range window of ``curve``.

    Entry ``s`` scores the window starting at grid index ``s``; NaN marks an
    inadmissible window.
    """
    x, v = track(curve, p.alpha), track(v, p.alpha)
    if len(v) > len(x):
        raise InadmissibleWindow("center longer than curve")
    prof = _raw_profile(x, v, p)
    if np.isnan(prof).all():
        raise InadmissibleWindow("no admissible window")
    return prof


def best_shift(profile) -> tuple[int, float]:
    """Admissible minimum of a profile; ties go to the smallest shift."""
    profile = np.asarray(profile, dtype=float)
    if profile.size == 0 or np.isnan(profile).all():
        raise InadmissibleWindow("empty or fully inadmissible profile")
    s = int(np.nanargmin(profile))
    return s, float(profile[s])


def sliding_distance(a, b, p: DistanceParams) -> tuple[float, int]:
    """Distance (not squared) between two windows of possibly unequal length.

    The shorter one slides inside the longer; returns ``(dist, offset)`` for
    the best placement, offset measured in the longer window.
    """
    ta, tb = track(a, p.alpha), track(b, p.alpha)
    if len(ta) < len(tb):
        ta, tb = tb, ta
    prof = _raw_profile(ta, tb, p)
    s, d2 = best_shift(prof)
    return math.sqrt(max(d2, 0.0)), s
