"""funmotif command line.

Subcommands: generate, probkma, discover, search, evaluate, silhouette.
Exit status is 0 on success, 2 for bad input or arguments, 1 otherwise.
Every subcommand writes ``manifest.json`` next to its outputs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from . import discovery as dc
from . import probkma as pk
from ._backend import BACKEND
from .curveset import CurveFormatError, load_curves, preprocess, save_curves
from .dissimilarity import DistanceParams
from .silhouette import silhouette
from .simgen import PRESETS, ScenarioSpec, TruthLayout, generate, preset

log = logging.getLogger("funmotif")


class UsageError(Exception):
    pass


def _int_list(text):
    try:
        vals = tuple(int(x) for x in str(text).split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _jsonable(v):
    if isinstance(v, (tuple, list)):
        return [_jsonable(x) for x in v]
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, np.generic):
        return v.item()
    return v


def _write_manifest(out: Path, args, inputs, outputs, timings, extra=None):
    params = {k: _jsonable(v) for k, v in vars(args).items()
              if k not in ("func", "config", "verbose")}
    doc = {
        "tool": "funmotif",
        "version": __version__,
        "backend": BACKEND,
        "command": args.command,
        "seed": getattr(args, "seed", None),
        "params": params,
        "inputs": {str(p): _digest(p) for p in inputs},
        "outputs": {name: _digest(out / name) for name in outputs},
        "timings": timings,
    }
    if extra:
        doc.update(extra)
    (out / "manifest.json").write_text(json.dumps(doc, indent=1) + "\n")


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _curves(args):
    if not Path(args.input).exists():
        raise UsageError(f"no such curves file: {args.input}")
    return preprocess(load_curves(args.input), args.max_gap)


def _dist(args) -> DistanceParams:
    return DistanceParams(alpha=args.alpha, overlap_floor=args.overlap_floor)


def _config(args) -> dc.DiscoveryConfig:
    return dc.DiscoveryConfig(
        min_silhouette=args.min_silhouette, min_support=args.min_support,
        rall_quantile=args.rall_quantile, radius_sd=args.radius_sd,
        length_split_ratio=args.length_split_ratio,
        min_separation_frac=args.min_separation_frac,
        match_radius_mult=args.match_radius_mult,
        dedup_overlap=args.dedup_overlap)


def _base_params(args, K=2, c=(40,)):
    try:
        return pk.ProbKmaParams(
            K=K, c_min=c if len(c) > 1 else c[0], c_max=args.c_max, m=args.m,
            dist=_dist(args), tol=args.tol, max_iter=args.max_iter,
            elongation_step_frac=args.elongation_step_frac,
            elongation_max_tries=args.elongation_max_tries,
            delta_jmk_frac=args.delta_jmk_frac,
            cleaning_trigger=args.cleaning_trigger, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


# ------------------------------------------------------------ subcommands

def cmd_generate(args):
    out = _outdir(args)
    t0 = time.perf_counter()
    inputs = []
    if args.spec:
        inputs.append(args.spec)
        doc = json.loads(Path(args.spec).read_text())
        try:
            spec = ScenarioSpec(**{k: tuple(map(tuple, v)) if k == "layout" else v
                                   for k, v in doc.items()})
        except TypeError as exc:
            raise UsageError(f"bad scenario spec: {exc}") from exc
    else:
        try:
            spec = preset(args.preset, l=args.l, sigma=args.sigma, seed=args.seed)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    try:
        cs, truth = generate(spec)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    save_curves(cs, out / "curves.csv")
    truth.save(out / "truth.json")
    _write_manifest(out, args, inputs, ["curves.csv", "truth.json"],
                    {"generate_s": time.perf_counter() - t0},
                    {"n_curves": len(cs), "n_occurrences": len(truth.occurrences)})
    print(f"wrote {len(cs)} curves to {out}")


def cmd_probkma(args):
    if args.n_init < 1:
        raise UsageError("--n-init must be >= 1")
    out = _outdir(args)
    cs = _curves(args)
    p = _base_params(args, args.K, args.c)
    t0 = time.perf_counter()
    try:
        st = pk.run_best(cs, p, args.n_init)
    except pk.InfeasibleError as exc:
        raise UsageError(str(exc)) from exc
    elapsed = time.perf_counter() - t0
    (out / "state.json").write_text(json.dumps(pk.state_to_json(st, cs, p)))
    _write_manifest(out, args, [args.input], ["state.json"], {"probkma_s": elapsed},
                    {"iterations": st.iter, "converged": st.converged,
                     "objective": st.objective_trace[-1]})
    print(f"probKMA: {st.iter} iterations, converged={st.converged}, "
          f"J={st.objective_trace[-1]:.6g}, lengths={st.lengths}")


def cmd_discover(args):
    out = _outdir(args)
    cs = _curves(args)
    if args.n_init < 1:
        raise UsageError("--n-init must be >= 1")
    base = _base_params(args)
    config = _config(args)
    try:
        spec = dc.GridSpec(args.K, args.c, args.n_init, base, args.seed)
        for K, c, _, seed in spec.jobs():
            spec.params_for(K, c, seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if max(args.c) > cs.lengths.max():
        raise UsageError(f"center length {max(args.c)} exceeds every curve")
    timings = {}
    t0 = time.perf_counter()
    grid = dc.run_grid(cs, spec, args.threads)
    timings["grid_s"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    motifs, kept = dc.postprocess(cs, grid.candidates, base.dist, config)
    timings["postprocess_s"] = time.perf_counter() - t0

    (out / "motifs.json").write_text(json.dumps(dc.motifs_to_json(motifs)))
    dc.write_occurrences(motifs, out / "occurrences.csv")
    dc.write_candidates(grid.candidates, {c.id for c in kept}, out / "silhouette.csv")
    _write_manifest(
        out, args, [args.input], ["motifs.json", "occurrences.csv", "silhouette.csv"],
        timings,
        {"config": asdict(config), "n_runs": grid.n_runs,
         "n_candidates": len(grid.candidates), "n_kept": len(kept),
         "n_motifs": len(motifs), "failures": [list(f) for f in grid.failures]})
    print(f"{grid.n_runs} runs, {len(grid.candidates)} candidates, "
          f"{len(kept)} kept, {len(motifs)} motifs")


def cmd_search(args):
    out = _outdir(args)
    cs = _curves(args)
    try:
        motifs = dc.motifs_from_json(json.loads(Path(args.motifs).read_text()))
    except (OSError, KeyError, ValueError) as exc:
        raise UsageError(f"cannot read motifs: {exc}") from exc
    t0 = time.perf_counter()
    dc.search(cs, motifs, _dist(args), _config(args), args.radius_scale)
    dc.write_occurrences(motifs, out / "occurrences.csv")
    _write_manifest(out, args, [args.input, args.motifs], ["occurrences.csv"],
                    {"search_s": time.perf_counter() - t0})
    print(f"{sum(len(m.occurrences) for m in motifs)} occurrences")


def cmd_evaluate(args):
    out = _outdir(args)
    try:
        truth = TruthLayout.load(args.truth)
    except (OSError, KeyError, ValueError) as exc:
        raise UsageError(f"cannot read truth: {exc}") from exc
    inputs = [args.truth]
    found = []
    if args.found:
        inputs.append(args.found)
        occ = dc.read_occurrences(args.found)
        if args.motifs:
            inputs.append(args.motifs)
            motifs = dc.motifs_from_json(json.loads(Path(args.motifs).read_text()))
            for m in motifs:
                m.occurrences = occ.get(m.id, [])
            found = motifs
        else:
            found = [(mid, occs, None) for mid, occs in sorted(occ.items())]
    truth_labels = found_labels = None
    if args.state:
        inputs.append(args.state)
        doc = json.loads(Path(args.state).read_text())
        st = pk.state_from_json(doc)
        if not truth.labels:
            raise UsageError("truth file carries no class labels")
        ids = doc.get("curve_ids") or sorted(truth.labels)
        truth_labels = [truth.labels[i] for i in ids]
        found_labels = dc.harden(st.P)
    if not found and truth_labels is None:
        raise UsageError("nothing to evaluate: pass --found and/or --state")
    rep = dc.evaluate(found, truth, DistanceParams(alpha=args.alpha),
                      args.tp_overlap, truth_labels, found_labels)
    (out / "evaluation.json").write_text(json.dumps(rep.to_json(), indent=1) + "\n")
    _write_manifest(out, args, inputs, ["evaluation.json"], {})
    for m in rep.motifs:
        print(f"motif {m.motif_id} -> truth {m.truth_motif}: TP={m.tp} FP={m.fp} FN={m.fn}")
    if rep.classification_error is not None:
        print(f"classification error {rep.classification_error:.4f}")


def cmd_silhouette(args):
    out = _outdir(args)
    cs = _curves(args)
    doc = json.loads(Path(args.state).read_text())
    st = pk.state_from_json(doc)
    if st.cleaned_P is None:
        st.cleaned_P = pk.clean(st.D)
    alpha = doc.get("params", {}).get("alpha", args.alpha)
    rep = silhouette(cs, st.cleaned_P, st.S, st.centers, DistanceParams(alpha=alpha))
    (out / "silhouette.csv").write_text(rep.to_csv())
    _write_manifest(out, args, [args.input, args.state], ["silhouette.csv"], {},
                    {"overall": rep.overall})
    print(f"overall silhouette {rep.overall}")


# ---------------------------------------------------------------- parsing

def _add_common(sp, curves=True):
    sp.add_argument("-o", "--out", default=".", help="output directory")
    sp.add_argument("--seed", type=int, default=0, help="master seed")
    sp.add_argument("--config", help="JSON file of option values; flags win")
    sp.add_argument("-v", "--verbose", action="store_true")
    if curves:
        sp.add_argument("-i", "--input", required=True, help="curves file (csv_long or json)")
        sp.add_argument("--max-gap", type=int, default=0,
                        help="interpolate interior gaps up to this many points")


def _add_dist(sp):
    sp.add_argument("--alpha", type=float, default=0.5,
                    help="weight of the derivative term in d_alpha")
    sp.add_argument("--overlap-floor", type=float, default=0.8,
                    help="min fraction of usable points in an aligned window")


def _add_probkma(sp):
    sp.add_argument("--c-max", type=int, default=None,
                    help="elongation cap (default: the initial length)")
    sp.add_argument("--m", type=float, default=2.0, help="fuzziness exponent")
    sp.add_argument("--tol", type=float, default=1e-8,
                    help="stop when the Bhattacharyya distance falls below this")
    sp.add_argument("--max-iter", type=int, default=1000)
    sp.add_argument("--elongation-step-frac", type=float, default=0.25)
    sp.add_argument("--elongation-max-tries", type=int, default=10)
    sp.add_argument("--delta-jmk-frac", type=float, default=0.05,
                    help="relative cluster-objective increase tolerated by elongation")
    sp.add_argument("--cleaning-trigger", type=float, default=100.0,
                    help="elongate and clean once BC distance < trigger * tol")


def _add_discovery(sp):
    d = dc.DiscoveryConfig()
    sp.add_argument("--min-silhouette", type=float, default=d.min_silhouette)
    sp.add_argument("--min-support", type=int, default=d.min_support)
    sp.add_argument("--rall-quantile", type=float, default=d.rall_quantile,
                    help="quantile of pooled member distances giving R_all")
    sp.add_argument("--radius-sd", type=float, default=d.radius_sd,
                    help="radius = mean + this many SDs of group member distances")
    sp.add_argument("--length-split-ratio", type=float, default=d.length_split_ratio)
    sp.add_argument("--min-separation-frac", type=float, default=d.min_separation_frac)
    sp.add_argument("--match-radius-mult", type=float, default=d.match_radius_mult,
                    help="members within this multiple of R_all count toward support")
    sp.add_argument("--dedup-overlap", type=float, default=d.dedup_overlap,
                    help="occurrence overlap above which two motifs are redundant")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="funmotif", description=__doc__.splitlines()[0],
                                     formatter_class=fmt)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("generate", help="simulate curves with planted motifs",
                        formatter_class=fmt)
    _add_common(sp, curves=False)
    sp.add_argument("--preset", choices=sorted(PRESETS), default="scenario1")
    sp.add_argument("--spec", help="JSON scenario spec (overrides --preset)")
    sp.add_argument("--l", type=int, default=200, help="curve length (scenario presets)")
    sp.add_argument("--sigma", type=float, default=0.1, help="noise SD")
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("probkma", help="one probKMA fit", formatter_class=fmt)
    _add_common(sp)
    _add_dist(sp)
    sp.add_argument("--K", type=int, default=2)
    sp.add_argument("--c", type=_int_list, default=(40,),
                    help="initial center length, or one per cluster")
    sp.add_argument("--n-init", type=int, default=1,
                    help="random starts; the lowest final objective is kept")
    _add_probkma(sp)
    sp.set_defaults(func=cmd_probkma)

    sp = sub.add_parser("discover", help="full motif discovery", formatter_class=fmt)
    _add_common(sp)
    _add_dist(sp)
    sp.add_argument("--K", type=_int_list, default=(2, 3))
    sp.add_argument("--c", type=_int_list, default=(40, 50, 60))
    sp.add_argument("--n-init", type=int, default=20, help="runs per (K, c)")
    sp.add_argument("--threads", type=int, default=1)
    _add_probkma(sp)
    _add_discovery(sp)
    sp.set_defaults(func=cmd_discover)

    sp = sub.add_parser("search", help="locate given motifs", formatter_class=fmt)
    _add_common(sp)
    _add_dist(sp)
    _add_discovery(sp)
    sp.add_argument("--motifs", required=True, help="motifs.json")
    sp.add_argument("--radius-scale", type=float, default=1.0)
    sp.set_defaults(func=cmd_search)

    sp = sub.add_parser("evaluate", help="score against a truth layout",
                        formatter_class=fmt)
    _add_common(sp, curves=False)
    sp.add_argument("--truth", required=True)
    sp.add_argument("--found", help="occurrences.csv")
    sp.add_argument("--motifs", help="motifs.json, to match by center shape")
    sp.add_argument("--state", help="probKMA state.json, for classification error")
    sp.add_argument("--alpha", type=float, default=0.5)
    sp.add_argument("--tp-overlap", type=float, default=0.5,
                    help="fraction of a planted occurrence a hit must cover")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("silhouette", help="silhouette table of a fit",
                        formatter_class=fmt)
    _add_common(sp)
    sp.add_argument("--state", required=True)
    sp.add_argument("--alpha", type=float, default=0.5,
                    help="used when the state carries no parameters")
    sp.set_defaults(func=cmd_silhouette)
    return parser


def _parse(parser, argv):
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as exc:
            parser.error(f"cannot read config {args.config}: {exc}")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = set(cfg) - known
        if unknown:
            parser.error(f"unknown config keys: {sorted(unknown)}")
        for a in sub._actions:
            if a.dest in cfg and a.type is not None and isinstance(cfg[a.dest], list):
                cfg[a.dest] = tuple(cfg[a.dest])
        sub.set_defaults(**cfg)
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    parser = build_parser()
    args = _parse(parser, argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (UsageError, CurveFormatError, FileNotFoundError) as exc:
        print(f"funmotif: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"funmotif: internal error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
