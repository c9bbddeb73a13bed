"""Sampled curves on a shared uniform grid, with whole-point gap masks."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np


class CurveFormatError(ValueError):
    """Raised when a curve file cannot be turned into a CurveSet."""


@dataclass(frozen=True)
class Grid:
    step: float = 1.0
    origin: float = 0.0

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError(f"grid step must be positive, got {self.step}")


@dataclass(frozen=True)
class Curve:
    """One d-dimensional curve.

    ``values`` and ``deriv`` are ``(n_points, d)`` float arrays with NaN at
    missing points; ``valid`` is the boolean point mask.
    """

    id: str
    values: np.ndarray
    deriv: np.ndarray
    valid: np.ndarray

    @classmethod
    def from_values(cls, id, values) -> "Curve":
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ValueError(f"curve {id!r}: values must be (n_points, d)")
        valid = ~np.isnan(values).any(axis=1)
        values = values.copy()
        values[~valid] = np.nan
        deriv = np.full_like(values, np.nan)
        return cls(str(id), values, deriv, valid)

    @property
    def n_points(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def has_deriv(self) -> bool:
        return bool(np.isfinite(self.deriv[self.valid]).any())


@dataclass(frozen=True)
class Portion:
    """A window ``[start, start + length)`` of a parent curve (numpy views)."""

    curve_id: str
    start: int
    length: int
    values: np.ndarray
    deriv: np.ndarray
    valid: np.ndarray


@dataclass(frozen=True)
class CurveSet:
    grid: Grid
    curves: tuple[Curve, ...]
    d: int = field(init=False)

    def __post_init__(self):
        curves = tuple(self.curves)
        if not curves:
            raise ValueError("a CurveSet needs at least one curve")
        dims = {c.d for c in curves}
        if len(dims) != 1:
            raise ValueError(f"curves have mismatched dimensions {sorted(dims)}")
        object.__setattr__(self, "curves", curves)
        object.__setattr__(self, "d", dims.pop())

    def __len__(self):
        return len(self.curves)

    def __iter__(self):
        return iter(self.curves)

    def __getitem__(self, i) -> Curve:
        return self.curves[i]

    @property
    def ids(self) -> list[str]:
        return [c.id for c in self.curves]

    @property
    def lengths(self) -> np.ndarray:
        return np.array([c.n_points for c in self.curves])

    def index(self, curve_id: str) -> int:
        for i, c in enumerate(self.curves):
            if c.id == curve_id:
                return i
        raise KeyError(curve_id)

    @classmethod
    def from_arrays(cls, arrays: Sequence, ids=None, step: float = 1.0,
                    origin: float = 0.0) -> "CurveSet":
        if ids is None:
            ids = [f"c{i}" for i in range(len(arrays))]
        curves = [Curve.from_values(i, a) for i, a in zip(ids, arrays)]
        return cls(Grid(step, origin), tuple(curves))


def _parse_float(tok: str) -> float:
    tok = tok.strip()
    if tok in ("NaN", "nan", "NA", ""):
        return np.nan
    return float(tok)


def _check_uniform(curve_id, t, step=None):
    t = np.asarray(t, dtype=float)
    if len(t) < 2:
        return step
    diffs = np.diff(t)
    s = diffs[0]
    if s <= 0 or not np.allclose(diffs, s, rtol=1e-9, atol=1e-12):
        raise CurveFormatError(f"non-uniform grid in curve {curve_id!r}")
    if step is not None and not np.isclose(s, step, rtol=1e-9):
        raise CurveFormatError(
            f"non-uniform grid: curve {curve_id!r} has step {s}, expected {step}")
    return s


def load_curves(path, format: str | None = None) -> CurveSet:
    """Read a CurveSet from ``csv_long`` or ``json``.

    Derivatives are left missing; call :func:`estimate_derivatives`.
    """
    path = Path(path)
    if format is None:
        format = "json" if path.suffix.lower() == ".json" else "csv_long"
    text = path.read_text()
    if not text.strip():
        raise CurveFormatError(f"{path}: empty file")
    if format == "json":
        return _load_json(text)
    if format == "csv_long":
        return _load_csv(text.splitlines())
    raise ValueError(f"unknown curve format {format!r}")


def _load_csv(lines) -> CurveSet:
    reader = csv.reader(lines)
    header = next(reader, None)
    if not header or len(header) < 3 or header[0] != "curve_id" or header[1] != "t":
        raise CurveFormatError("csv_long header must be curve_id,t,v1,...,vd")
    d = len(header) - 2
    rows: dict[str, tuple[list, list]] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != d + 2:
            raise CurveFormatError(
                f"line {lineno}: expected {d} value columns, got {len(row) - 2}")
        try:
            t = float(row[1])
            v = [_parse_float(x) for x in row[2:]]
        except ValueError as exc:
            raise CurveFormatError(f"line {lineno}: {exc}") from None
        ts, vs = rows.setdefault(row[0], ([], []))
        ts.append(t)
        vs.append(v)
    if not rows:
        raise CurveFormatError("no data rows")
    step = None
    origin = None
    curves = []
    for cid, (ts, vs) in rows.items():
        order = np.argsort(ts, kind="stable")
        ts = np.asarray(ts)[order]
        step = _check_uniform(cid, ts, step)
        origin = ts[0] if origin is None else min(origin, ts[0])
        curves.append(Curve.from_values(cid, np.asarray(vs)[order]))
    return CurveSet(Grid(step or 1.0, float(origin)), tuple(curves))


def _load_json(text) -> CurveSet:
    try:
        doc = json.loads(text)
        step = float(doc.get("step", 1.0))
        items = doc["curves"]
    except (ValueError, KeyError, TypeError, AttributeError) as exc:
        raise CurveFormatError(f"malformed curve json: {exc}") from exc
    if not items:
        raise CurveFormatError("no curves")
    curves = []
    for n, item in enumerate(items):
        try:
            vals = np.array([[np.nan if v is None else v for v in np.atleast_1d(row)]
                             for row in item["values"]], dtype=float)
            curves.append(Curve.from_values(str(item["id"]), vals))
        except (ValueError, KeyError, TypeError) as exc:
            raise CurveFormatError(f"curve {n}: {exc!r}") from None
    try:
        return CurveSet(Grid(step, float(doc.get("origin", 0.0))), tuple(curves))
    except ValueError as exc:
        raise CurveFormatError(str(exc)) from exc


def save_curves(cs: CurveSet, path, format: str | None = None) -> None:
    path = Path(path)
    if format is None:
        format = "json" if path.suffix.lower() == ".json" else "csv_long"
    if format == "json":
        doc = {
            "step": cs.grid.step,
            "origin": cs.grid.origin,
            "curves": [
                {"id": c.id,
                 "values": [[None if np.isnan(v) else float(v) for v in row]
                            for row in c.values]}
                for c in cs.curves
            ],
        }
        path.write_text(json.dumps(doc))
        return
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["curve_id", "t"] + [f"v{j + 1}" for j in range(cs.d)])
        for c in cs.curves:
            for t in range(c.n_points):
                tt = cs.grid.origin + t * cs.grid.step
                w.writerow([c.id, repr(float(tt))] +
                           ["NaN" if np.isnan(v) else repr(float(v))
                            for v in c.values[t]])


def _runs(mask: np.ndarray):
    """Yield ``(start, stop)`` for each maximal run of True in ``mask``."""
    padded = np.concatenate(([False], mask, [False])).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    return zip(edges[::2], edges[1::2])


def fill_small_gaps(cs: CurveSet, max_gap: int) -> CurveSet:
    """Linearly interpolate interior gaps of at most ``max_gap`` points."""
    if max_gap < 0:
        raise ValueError("max_gap must be >= 0")
    if max_gap == 0:
        return cs
    out = []
    for c in cs.curves:
        values = c.values.copy()
        valid = c.valid.copy()
        for a, b in _runs(~c.valid):
            if b - a > max_gap or a == 0 or b == c.n_points:
                continue
            left, right = values[a - 1], values[b]
            frac = (np.arange(a, b) - (a - 1)) / (b - (a - 1))
            values[a:b] = left + frac[:, None] * (right - left)
            valid[a:b] = True
        deriv = c.deriv.copy()
        deriv[valid & ~c.valid] = np.nan
        out.append(replace(c, values=values, valid=valid, deriv=deriv))
    return replace(cs, curves=tuple(out))


def estimate_derivatives(cs: CurveSet) -> CurveSet:
    """Finite-difference derivatives within each valid segment.

    Central differences in the interior of a segment, one-sided at its ends.
    Isolated valid points have no neighbour and keep a missing derivative.
    """
    h = cs.grid.step
    out = []
    for c in cs.curves:
        deriv = np.full_like(c.values, np.nan)
        for a, b in _runs(c.valid):
            seg = c.values[a:b]
            if b - a < 2:
                continue
            dseg = np.empty_like(seg)
            dseg[1:-1] = (seg[2:] - seg[:-2]) / (2 * h)
            dseg[0] = (seg[1] - seg[0]) / h
            dseg[-1] = (seg[-1] - seg[-2]) / h
            deriv[a:b] = dseg
        out.append(replace(c, deriv=deriv))
    return replace(cs, curves=tuple(out))


def extract_portion(c: Curve | Portion, start: int, length: int) -> Portion:
    n = len(c.valid)
    if start < 0 or length < 1 or start + length > n:
        raise IndexError(
            f"window [{start}, {start + length}) outside curve of {n} points")
    sl = slice(start, start + length)
    if isinstance(c, Portion):
        return Portion(c.curve_id, c.start + start, length,
                       c.values[sl], c.deriv[sl], c.valid[sl])
    return Portion(c.id, start, length, c.values[sl], c.deriv[sl], c.valid[sl])


def padded_window(c: Curve, start: int, length: int) -> Portion:
    """Window that may hang over either end; outside points are missing.

    Unlike :func:`extract_portion` the arrays are copies.
    """
    n, d = c.values.shape
    vals = np.full((length, d), np.nan)
    der = np.full((length, d), np.nan)
    ok = np.zeros(length, dtype=bool)
    lo, hi = max(start, 0), min(start + length, n)
    if hi > lo:
        vals[lo - start:hi - start] = c.values[lo:hi]
        der[lo - start:hi - start] = c.deriv[lo:hi]
        ok[lo - start:hi - start] = c.valid[lo:hi]
    return Portion(c.id, start, length, vals, der, ok)


def preprocess(cs: CurveSet, max_gap: int = 0) -> CurveSet:
    return estimate_derivatives(fill_small_gaps(cs, max_gap))
