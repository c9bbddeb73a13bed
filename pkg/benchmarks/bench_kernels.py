"""Time the compiled and numpy distance kernels on the same inputs.

    python benchmarks/bench_kernels.py [--repeat 5] [--curves 20] [--length 200]

Prints one row per (kernel, center length, alpha) with the best wall time of
each backend and the speedup. Outputs of the two backends are checked for
agreement before timing.
"""

import argparse
import sys
import timeit

import numpy as np

from funmotif import _backend
from funmotif.curveset import CurveSet, preprocess
from funmotif.dissimilarity import PackedCurves, track


def make_inputs(n_curves, length, c, alpha, gap, seed):
    rng = np.random.default_rng(seed)
    curves = np.cumsum(rng.normal(size=(n_curves, length)), axis=1)
    curves[rng.random(curves.shape) < gap] = np.nan
    cs = preprocess(CurveSet.from_arrays(list(curves)))
    packed = PackedCurves.build(cs, alpha)
    center = track(preprocess(CurveSet.from_arrays([rng.normal(size=c)]))[0], alpha)
    return packed, center


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--curves", type=int, default=20)
    ap.add_argument("--length", type=int, default=200)
    ap.add_argument("--gap", type=float, default=0.05, help="fraction of missing points")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    if "cython" not in _backend.available():
        print("compiled kernels not built; only the numpy backend is available")
        return 1
    cy, py = _backend.load("cython"), _backend.load("python")
    w = np.ones(1)
    print(f"{'kernel':<18}{'c':>5}{'alpha':>7}{'cython ms':>12}{'numpy ms':>12}{'speedup':>9}")
    for c in (40, 60):
        for alpha in (0.0, 0.5):
            packed, ct = make_inputs(args.curves, args.length, c, alpha, args.gap, args.seed)
            a, b = packed.offsets[0], packed.offsets[1]
            jobs = {
                "distance_profile": (packed.values[a:b], packed.deriv[a:b], packed.mask[a:b],
                                     ct.values, ct.deriv, ct.mask, w, alpha, 2),
                "best_shifts": (packed.values, packed.deriv, packed.mask, packed.offsets,
                                ct.values, ct.deriv, ct.mask, w, alpha, 2),
            }
            for name, fargs in jobs.items():
                fc, fp = getattr(cy, name), getattr(py, name)
                rc, rp = fc(*fargs), fp(*fargs)
                if name == "best_shifts":
                    rc, rp = rc[1], rp[1]
                np.testing.assert_allclose(rc, rp, rtol=1e-12, atol=1e-14, equal_nan=True)
                n = 20 if name == "distance_profile" else 3
                tc = min(timeit.repeat(lambda: fc(*fargs), number=n, repeat=args.repeat)) / n
                tp = min(timeit.repeat(lambda: fp(*fargs), number=n, repeat=args.repeat)) / n
                print(f"{name:<18}{c:>5}{alpha:>7.1f}{tc * 1e3:>12.3f}{tp * 1e3:>12.3f}"
                      f"{tp / tc:>8.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
