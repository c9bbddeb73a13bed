"""Synthetic curves with planted motifs, built from uniform B-splines.

A curve is ``x(t) = sum_l c_l B_l(t)`` with order-``n`` B-splines on knots
spaced ``T`` apart.  A block of ``n + j`` consecutive coefficients fixes the
curve on an interval of length ``(j + 1) * T``, so copying a block into
several coefficient vectors plants the same shape in several curves.
Background coefficients are Beta(0.45, 0.45) draws rescaled to ``[a, b]``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import betaincinv

from .curveset import Curve, CurveSet, Grid

BETA_SHAPE = (0.45, 0.45)

# seed-stream tags, so each random ingredient is drawn independently
_MOTIFS, _LAYOUT, _BACKGROUND, _NOISE, _CROP, _SHUFFLE = range(6)


def uniform_knots(n_coef: int, order: int, spacing: float) -> np.ndarray:
    """Knots ``(j - order + 1) * spacing``; the spline lives on ``[0, (L-n+1)T]``."""
    return (np.arange(n_coef + order) - (order - 1)) * float(spacing)


def bspline_basis(n_coef: int, order: int, spacing: float, t) -> np.ndarray:
    """Cox-de Boor basis matrix of shape ``(len(t), n_coef)``."""
    if order < 1:
        raise ValueError("order must be >= 1")
    t = np.atleast_1d(np.asarray(t, dtype=float))
    knots = uniform_knots(n_coef, order, spacing)
    lo, hi = knots[order - 1], knots[n_coef]
    eps = 1e-9 * spacing
    if (t < lo - eps).any() or (t > hi + eps).any():
        raise ValueError(f"t outside spline support [{lo}, {hi}]")
    t = np.clip(t, lo, hi)
    nk = len(knots)
    # order-1 indicators; the right end of the support belongs to the last span
    B = ((knots[None, :-1] <= t[:, None]) & (t[:, None] < knots[None, 1:])).astype(float)
    last = np.isclose(t, hi)
    if last.any():
        B[last] = 0.0
        B[last, n_coef - 1] = 1.0
    for k in range(2, order + 1):
        nb = nk - k
        left_den = knots[k - 1:k - 1 + nb] - knots[:nb]
        right_den = knots[k:k + nb] - knots[1:1 + nb]
        left = (t[:, None] - knots[None, :nb]) / left_den * B[:, :nb]
        right = (knots[None, k:k + nb] - t[:, None]) / right_den * B[:, 1:nb + 1]
        B = left + right
    return B[:, :n_coef]


def bspline_eval(coeffs, order: int, spacing: float, t_grid) -> np.ndarray:
    """Spline values on ``t_grid``.

    Only the ``order`` active terms are summed, always in the same order, so
    an equal coefficient block gives bit-identical values wherever it sits.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    t = np.atleast_1d(np.asarray(t_grid, dtype=float))
    L = len(coeffs)
    B = bspline_basis(L, order, spacing, t)
    first = np.clip(np.floor(t / spacing).astype(int), 0, L - order)
    rows = np.arange(len(t))
    out = np.zeros(len(t))
    for i in range(order):
        out += B[rows, first + i] * coeffs[first + i]
    return out


def rescaled_beta(rng: np.random.Generator, size, a: float, b: float) -> np.ndarray:
    """Beta(0.45, 0.45) on ``[a, b]`` by inverse-CDF transform of uniforms."""
    u = rng.random(size)
    return a + (b - a) * betaincinv(BETA_SHAPE[0], BETA_SHAPE[1], u)


def _rng(seed, *tags) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *tags]))


@dataclass(frozen=True)
class Occurrence:
    motif_id: int
    curve_id: str
    start: int
    length: int

    @property
    def stop(self) -> int:
        return self.start + self.length


@dataclass
class TruthLayout:
    occurrences: list[Occurrence]
    motifs: list[np.ndarray]
    labels: dict[str, int] | None = None
    center_length: int | None = None

    def for_motif(self, mid: int) -> list[Occurrence]:
        return [o for o in self.occurrences if o.motif_id == mid]

    def to_json(self) -> dict:
        return {
            "occurrences": [
                {"motif_id": o.motif_id, "curve_id": o.curve_id,
                 "start": o.start, "length": o.length}
                for o in self.occurrences
            ],
            "motifs": [m.tolist() for m in self.motifs],
            "labels": self.labels,
            "center_length": self.center_length,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "TruthLayout":
        return cls(
            [Occurrence(o["motif_id"], str(o["curve_id"]), o["start"], o["length"])
             for o in doc["occurrences"]],
            [np.asarray(m, dtype=float) for m in doc.get("motifs", [])],
            doc.get("labels"),
            doc.get("center_length"),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "TruthLayout":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


@dataclass(frozen=True)
class ScenarioSpec:
    """Recipe for a synthetic curve set.

    ``layout[i]`` lists ``(motif_id, coef_position)`` pairs for curve ``i``;
    ``lengths[i]`` is the curve length in grid steps (a multiple of
    ``knot_spacing``).  ``crops[i]``, when given, keeps only grid points
    ``[start, stop)`` of the sampled curve.
    """

    order: int
    knot_spacing: int
    coef_range: tuple[float, float]
    motifs: tuple
    layout: tuple
    lengths: tuple
    sigma: float = 0.0
    level_shift_range: tuple[float, float] | None = None
    seed: int = 0
    crops: tuple | None = None
    labels: tuple | None = None
    center_length: int | None = None
    name: str = "custom"
    beta_shape: tuple[float, float] = BETA_SHAPE
    background_seed: int | None = None

    @property
    def n_curves(self) -> int:
        return len(self.layout)

    def n_coef(self, i: int) -> int:
        return self.lengths[i] // self.knot_spacing + self.order - 1

    def validate(self) -> None:
        n = self.order
        if n < 2:
            raise ValueError("order must be >= 2")
        if len(self.lengths) != len(self.layout):
            raise ValueError("lengths and layout disagree on the number of curves")
        for m in self.motifs:
            if len(m) < n:
                raise ValueError("motif blocks need at least `order` coefficients")
        for i, plants in enumerate(self.layout):
            if self.lengths[i] % self.knot_spacing:
                raise ValueError("curve length must be a multiple of the knot spacing")
            L = self.n_coef(i)
            spans = sorted((pos, pos + len(self.motifs[mid])) for mid, pos in plants)
            for lo, hi in spans:
                if lo < 0 or hi > L:
                    raise ValueError(f"curve {i}: motif block outside coefficients")
            for (_, a_hi), (b_lo, _) in zip(spans, spans[1:]):
                if b_lo - a_hi < n:
                    raise ValueError(
                        f"curve {i}: planted blocks need >= {n} background coefficients between them")


def generate(spec: ScenarioSpec) -> tuple[CurveSet, TruthLayout]:
    spec.validate()
    a, b = spec.coef_range
    n, T = spec.order, spec.knot_spacing
    bg_seed = spec.seed if spec.background_seed is None else spec.background_seed
    curves, occs = [], []
    width = len(str(spec.n_curves - 1))
    for i, plants in enumerate(spec.layout):
        cid = f"curve{i:0{width}d}"
        L = spec.n_coef(i)
        coefs = rescaled_beta(_rng(bg_seed, _BACKGROUND, i), L, a, b)
        noise_rng = _rng(spec.seed, _NOISE, i)
        for mid, pos in plants:
            block = np.asarray(spec.motifs[mid], dtype=float)
            eps = noise_rng.standard_normal(len(block)) * spec.sigma
            shift = 0.0
            if spec.level_shift_range is not None:
                shift = noise_rng.uniform(*spec.level_shift_range)
            else:
                noise_rng.uniform()  # keep noise draws aligned across scenarios
            coefs[pos:pos + len(block)] = block + shift + eps
        t = np.arange(spec.lengths[i] + 1, dtype=float)
        values = bspline_eval(coefs, n, T, t)
        c0, c1 = 0, len(values)
        if spec.crops is not None and spec.crops[i] is not None:
            c0, c1 = spec.crops[i]
        values = values[c0:c1]
        curves.append(Curve.from_values(cid, values))
        for mid, pos in plants:
            start = pos * T - c0
            length = (len(spec.motifs[mid]) - n + 1) * T + 1
            lo, hi = max(start, 0), min(start + length, c1 - c0)
            if hi > lo:
                occs.append(Occurrence(mid, cid, int(lo), int(hi - lo)))
    truth_motifs = []
    for m in spec.motifs:
        span = (len(m) - n + 1) * T
        truth_motifs.append(bspline_eval(m, n, T, np.arange(span + 1, dtype=float)))
    labels = None
    if spec.labels is not None:
        labels = {c.id: int(l) for c, l in zip(curves, spec.labels)}
    cs = CurveSet(Grid(1.0, 0.0), tuple(curves))
    return cs, TruthLayout(occs, truth_motifs, labels, spec.center_length)


# ------------------------------------------------------------------ presets

MOTIF_COEFS = 8  # order 3, spacing 10 -> length 60, 61 grid points


def _motif_blocks(seed, count, n_coef, a, b):
    rng = _rng(seed, _MOTIFS)
    return tuple(rescaled_beta(rng, n_coef, a, b) for _ in range(count))


def _scenario_layout(seed, order, max_pos, block):
    """Twenty curves: 6+6 single, 2+2 double, 2 mixed, 2 empty."""
    rng = _rng(seed, _LAYOUT)
    gap = block + order
    pairs = [(p1, p2) for p1 in range(max_pos + 1)
             for p2 in range(p1 + gap, max_pos + 1)]
    rows = []
    for mid in (0, 1):
        rows += [[(mid, int(rng.integers(max_pos + 1)))] for _ in range(6)]
    for mid in (0, 1):
        for _ in range(2):
            p1, p2 = pairs[rng.integers(len(pairs))]
            rows.append([(mid, p1), (mid, p2)])
    for _ in range(2):
        p1, p2 = pairs[rng.integers(len(pairs))]
        first = int(rng.integers(2))
        rows.append([(first, p1), (1 - first, p2)])
    rows += [[], []]
    order_idx = _rng(seed, _SHUFFLE).permutation(len(rows))
    return tuple(tuple(rows[j]) for j in order_idx)


def scenario1(l: int = 200, sigma: float = 0.1, seed: int = 0,
              level_shift_range=None, name="scenario1") -> ScenarioSpec:
    order, T = 3, 10
    a, b = -15.0, 15.0
    # occurrences stay in the leftmost 200 units whatever l is
    max_pos = 200 // T - (MOTIF_COEFS - order + 1)
    layout = _scenario_layout(seed, order, max_pos, MOTIF_COEFS)
    return ScenarioSpec(
        order=order, knot_spacing=T, coef_range=(a, b),
        motifs=_motif_blocks(seed, 2, MOTIF_COEFS, a, b),
        layout=layout, lengths=(int(l),) * len(layout), sigma=float(sigma),
        level_shift_range=level_shift_range, seed=seed, name=name,
    )


def scenario2(l: int = 200, sigma: float = 0.1, seed: int = 0) -> ScenarioSpec:
    return scenario1(l, sigma, seed, level_shift_range=(-10.0, 10.0),
                     name="scenario2")


def _comp(kind: str, sigma: float, seed: int) -> ScenarioSpec:
    order, T = 3, 10
    a, b = -15.0, 15.0
    n_per = 9
    labels = (0,) * n_per + (1,) * n_per
    motif_len = (MOTIF_COEFS - order + 1) * T + 1
    crops = None
    if kind == "a":
        motifs = _motif_blocks(seed, 2, MOTIF_COEFS, a, b)
        layout = tuple(((k, 0),) for k in labels)
        lengths = (60,) * len(labels)
        center = motif_len
    elif kind == "b":
        # each curve is a randomly cropped piece of a 100-long cluster pattern
        n_coef = 100 // T + order - 1
        motifs = _motif_blocks(seed, 2, n_coef, a, b)
        layout = tuple(((k, 0),) for k in labels)
        lengths = (100,) * len(labels)
        rng = _rng(seed, _CROP)
        crops = tuple((int(rng.integers(0, 21)), int(rng.integers(81, 102)))
                      for _ in labels)
        center = min(hi - lo for lo, hi in crops)
    elif kind in ("c", "d"):
        motifs = _motif_blocks(seed, 2, MOTIF_COEFS, a, b)
        l = 200
        max_pos = l // T - (MOTIF_COEFS - order + 1)
        if kind == "c":
            layout = tuple(((k, 7),) for k in labels)
        else:
            rng = _rng(seed, _LAYOUT)
            layout = tuple(((k, int(rng.integers(max_pos + 1))),) for k in labels)
        lengths = (l,) * len(labels)
        center = motif_len
    else:
        raise ValueError(f"unknown comparison scenario {kind!r}")
    return ScenarioSpec(
        order=order, knot_spacing=T, coef_range=(a, b), motifs=motifs,
        layout=layout, lengths=lengths, sigma=float(sigma), seed=seed,
        crops=crops, labels=labels, center_length=center, name=f"comp_{kind}",
    )


def comp_a(sigma: float = 0.1, seed: int = 0) -> ScenarioSpec:
    return _comp("a", sigma, seed)


def comp_b(sigma: float = 0.1, seed: int = 0) -> ScenarioSpec:
    return _comp("b", sigma, seed)


def comp_c(sigma: float = 0.1, seed: int = 0) -> ScenarioSpec:
    return _comp("c", sigma, seed)


def comp_d(sigma: float = 0.1, seed: int = 0) -> ScenarioSpec:
    return _comp("d", sigma, seed)


PRESETS = {
    "scenario1": scenario1, "scenario2": scenario2,
    "comp_a": comp_a, "comp_b": comp_b, "comp_c": comp_c, "comp_d": comp_d,
}


def preset(name: str, l: int = 200, sigma: float = 0.1, seed: int = 0) -> ScenarioSpec:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    if name.startswith("scenario"):
        return PRESETS[name](l=l, sigma=sigma, seed=seed)
    return PRESETS[name](sigma=sigma, seed=seed)
