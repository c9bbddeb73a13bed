import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from funmotif import probkma as pk
from funmotif import simgen
from funmotif.curveset import CurveSet, preprocess
from funmotif.dissimilarity import DistanceParams, PackedCurves


def _cs(arrays_, step=1.0):
    return preprocess(CurveSet.from_arrays([np.asarray(a, dtype=float) for a in arrays_],
                                           step=step))


# ------------------------------------------------------------ objective

def test_objective_single_term():
    assert pk.objective_from(np.ones((1, 1)), np.array([[2.5]]), 2) == 2.5
    assert pk.objective_from(np.full((2, 3), 0.5), np.zeros((2, 3)), 2) == 0


def test_objective_two_by_two_hand_sum():
    D = np.array([[1.0, 4.0], [3.0, 1.0]])
    P = pk.update_memberships(D, 2.0)
    # column 0: P = (3/4, 1/4); column 1: P = (1/5, 4/5)
    np.testing.assert_allclose(P, [[0.75, 0.2], [0.25, 0.8]])
    hand = 0.75 ** 2 * 1 + 0.25 ** 2 * 3 + 0.2 ** 2 * 4 + 0.8 ** 2 * 1
    assert pk.objective_from(P, D, 2.0) == pytest.approx(hand)


def test_objective_k_decomposes():
    rng = np.random.default_rng(0)
    P = rng.dirichlet(np.ones(3), size=5).T
    D = rng.uniform(size=(3, 5))
    total = sum(pk.objective_k_from(P, D, 2.5, k) for k in range(3))
    assert total == pytest.approx(pk.objective_from(P, D, 2.5))
    P[1] = 0
    assert pk.objective_k_from(P, D, 2.5, 1) == 0


def test_objective_k_three_curve_hand_sum():
    P = np.array([[0.5, 1.0, 0.1]])
    D = np.array([[2.0, 0.3, 10.0]])
    assert pk.objective_k_from(P, D, 2, 0) == pytest.approx(0.25 * 2 + 0.3 + 0.01 * 10)


def test_objective_from_state_matches_distances():
    rng = np.random.default_rng(2)
    cs = _cs([rng.normal(size=30) for _ in range(4)])
    p = pk.ProbKmaParams(K=2, c_min=8, seed=1)
    st = pk.initialize(cs, p)
    assert pk.objective(cs, st, p) == pytest.approx(st.objective_trace[0])
    assert sum(pk.objective_k(cs, st, p, k) for k in range(2)) == pytest.approx(
        pk.objective(cs, st, p))


# ----------------------------------------------------------- memberships

def test_membership_examples():
    np.testing.assert_allclose(pk.update_memberships([[1.0], [3.0]], 2), [[0.75], [0.25]])
    np.testing.assert_allclose(pk.update_memberships([[2.0], [2.0], [2.0]], 3), 1 / 3)
    np.testing.assert_array_equal(pk.update_memberships([[0.0], [5.0]], 2), [[1], [0]])
    np.testing.assert_array_equal(pk.update_memberships([[0.0], [0.0], [5.0]], 2),
                                  [[0.5], [0.5], [0]])


def test_membership_rejects_bad_input():
    with pytest.raises(ValueError):
        pk.update_memberships([[-1.0], [1.0]], 2)
    with pytest.raises(ValueError):
        pk.update_memberships([[1.0], [1.0]], 1.0)


dist_mats = arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 6)),
                   elements=st.one_of(st.just(0.0), st.floats(1e-12, 1e6)))


@given(dist_mats, st.sampled_from([1.2, 1.5, 2.0, 3.0, 7.0]))
def test_membership_columns_stochastic(D, m):
    P = pk.update_memberships(D, m)
    assert (P >= 0).all()
    np.testing.assert_allclose(P.sum(axis=0), 1, atol=1e-12)


@given(dist_mats.filter(lambda D: (D > 0).all()), st.sampled_from([1.5, 2.0, 3.0]))
def test_membership_inverse_order(D, m):
    """Closer centers never get less probability."""
    P = pk.update_memberships(D, m)
    for i in range(D.shape[1]):
        o = np.argsort(D[:, i], kind="stable")
        assert (np.diff(P[o, i]) <= 1e-12).all()


# ---------------------------------------------------------- Bhattacharyya

def test_bhattacharyya_examples():
    assert pk.bhattacharyya_k([0.2, 0.3], [0.2, 0.3]) == pytest.approx(0, abs=1e-15)
    assert pk.bhattacharyya_k([1, 0], [0.5, 0.5]) == pytest.approx(0.34657359, rel=1e-7)
    assert pk.bhattacharyya_k([1, 0], [0, 1]) == pk.BC_CAP
    # normalisation makes the scale irrelevant
    assert pk.bhattacharyya_k([2, 0], [3, 3]) == pytest.approx(-np.log(np.sqrt(0.5)))
    with pytest.raises(pk.DegenerateClusterError):
        pk.bhattacharyya_k([0, 0], [1, 0])


def test_stopping_aggregation():
    new = np.array([[1.0, 0.0], [0.5, 0.5]])
    old = np.array([[0.5, 0.5], [0.5, 0.5]])
    bc = [pk.bhattacharyya_k(a, b) for a, b in zip(new, old)]
    assert pk.stopping_distance(new, old, "max") == pytest.approx(max(bc))
    assert pk.stopping_distance(new, old, "mean") == pytest.approx(np.mean(bc))
    assert pk.stopping_distance(old, old, "mean") == pytest.approx(0, abs=1e-15)


# --------------------------------------------------------------- cleaning

def test_clean_examples():
    np.testing.assert_array_equal(pk.clean([[1.0, 2.0], [3.0, 4.0]]),
                                  [[True, True], [False, False]])
    assert pk.clean(np.full((3, 4), 2.0)).all()
    D = np.array([[0.1, 0.2, 9.0, 0.3], [0.2, 0.1, 8.0, 5.0]])
    out = pk.clean(D)
    assert not out[:, 2].any()
    assert out[:, :2].all()


# -------------------------------------------------------- centers / align

def test_center_weighted_mean():
    rng = np.random.default_rng(4)
    x1, x2 = rng.normal(size=12), rng.normal(size=12)
    cs = _cs([x1, x2])
    p = pk.ProbKmaParams(K=1, c_min=12)
    c = pk.update_centers(cs, [[0.8, 0.2]], [[0, 0]], [12], p)[0]
    np.testing.assert_allclose(c.values[:, 0], (0.64 * x1 + 0.04 * x2) / 0.68)
    np.testing.assert_allclose(c.deriv[:, 0],
                               (0.64 * cs[0].deriv[:, 0] + 0.04 * cs[1].deriv[:, 0]) / 0.68)


def test_center_single_and_equal_weights():
    rng = np.random.default_rng(5)
    x1, x2 = rng.normal(size=10), rng.normal(size=10)
    cs = _cs([x1, x2])
    p = pk.ProbKmaParams(K=1, c_min=4)
    c = pk.update_centers(cs, [[1.0, 0.0]], [[3, 0]], [4], p)[0]
    np.testing.assert_allclose(c.values[:, 0], x1[3:7])
    for m in (1.5, 4.0):
        c = pk.update_centers(cs, [[1.0, 1.0]], [[0, 0]], [10],
                              pk.ProbKmaParams(K=1, c_min=4, m=m))[0]
        np.testing.assert_allclose(c.values[:, 0], (x1 + x2) / 2)


def test_center_where_only_one_curve_valid():
    x1 = np.arange(6.0)
    x2 = np.array([10, 10, np.nan, np.nan, 10, 10.0])
    cs = _cs([x1, x2])
    p = pk.ProbKmaParams(K=1, c_min=6, dist=DistanceParams(alpha=0))
    c = pk.update_centers(cs, [[0.5, 0.5]], [[0, 0]], [6], p)[0]
    np.testing.assert_allclose(c.values[2:4, 0], [2, 3])
    assert c.defined_mask.all()
    # no curve covers the point -> undefined, not invented
    c = pk.update_centers(_cs([x2]), [[1.0]], [[0]], [6], p)[0]
    assert c.defined_mask.tolist() == [True, True, False, False, True, True]
    assert np.isnan(c.values[2:4]).all()


def test_align_recovers_verbatim_offset():
    rng = np.random.default_rng(6)
    curves = [rng.normal(size=100) for _ in range(3)]
    cs = _cs(curves)
    p = pk.ProbKmaParams(K=1, c_min=20)
    center = pk.update_centers(cs, [[1.0, 0, 0]], [[37, 0, 0]], [20], p)[0]
    packed = PackedCurves.build(cs.curves, p.dist.alpha)
    S, D, bad = pk.align(packed, [center], np.zeros((1, 3), dtype=np.int64), p)
    # centers divide weights by window counts, so exact copies match to rounding
    assert S[0, 0] == 37 and D[0, 0] == pytest.approx(0, abs=1e-24) and bad == 0
    # exhaustive scan oracle for the other curves
    for i in (1, 2):
        scores = [pk.distances_at(cs, [center], np.full((1, 3), s), p)[0, i]
                  for s in range(81)]
        assert S[0, i] == int(np.argmin(scores))
        assert D[0, i] == pytest.approx(min(scores))


def test_align_constant_tie_breaks_left():
    cs = _cs([np.full(15, 3.0)])
    p = pk.ProbKmaParams(K=1, c_min=5)
    center = pk.update_centers(cs, [[1.0]], [[4]], [5], p)[0]
    packed = PackedCurves.build(cs.curves, p.dist.alpha)
    S, D, _ = pk.align(packed, [center], np.array([[4]]), p)
    assert S[0, 0] == 0 and D[0, 0] == pytest.approx(0, abs=1e-24)


# ----------------------------------------------------------- initialise

def test_initialize_deterministic_and_in_range():
    cs, _ = simgen.generate(simgen.scenario1(seed=1))
    cs = preprocess(cs)
    p = pk.ProbKmaParams(K=2, c_min=(60, 60), seed=9)
    a, b = pk.initialize(cs, p), pk.initialize(cs, p)
    np.testing.assert_array_equal(a.P, b.P)
    np.testing.assert_array_equal(a.S, b.S)
    assert a.S.min() >= 0 and a.S.max() <= 201 - 60
    np.testing.assert_allclose(a.P.sum(axis=0), 1)
    one = pk.initialize(cs, pk.ProbKmaParams(K=1, c_min=60))
    assert (one.P == 1).all()


def test_initialize_infeasible():
    cs = _cs([np.arange(10.0), np.arange(30.0)])
    with pytest.raises(pk.InfeasibleError, match="c0"):
        pk.initialize(cs, pk.ProbKmaParams(K=1, c_min=20))


def test_params_validation():
    for bad in (dict(K=0), dict(c_min=(10, 20), K=1), dict(c_min=1), dict(m=1.0),
                dict(tol=0), dict(c_min=50, c_max=40), dict(bc_aggregation="median"),
                dict(elongation_step_frac=0), dict(delta_jmk_frac=-1),
                dict(init_concentration=0)):
        with pytest.raises(ValueError):
            pk.ProbKmaParams(**bad)
    assert pk.ProbKmaParams(K=3, c_min=7).c_min == (7, 7, 7)
    assert pk.ProbKmaParams(c_min=40).c_max == 40


# ------------------------------------------------------------ elongation

def _planted(n_curves=6, seed=0, level_shift_range=None):
    """Exact (noise-free) copies of one 61-point motif starting at t=50."""
    motif = simgen._motif_blocks(seed, 1, simgen.MOTIF_COEFS, -15, 15)
    spec = simgen.ScenarioSpec(order=3, knot_spacing=10, coef_range=(-15, 15),
                               motifs=motif, layout=(((0, 5),),) * n_curves,
                               lengths=(200,) * n_curves, sigma=0.0, seed=seed,
                               level_shift_range=level_shift_range)
    cs, truth = simgen.generate(spec)
    return preprocess(cs), truth


def _state_at(cs, p, start, length):
    N = len(cs)
    P = np.ones((1, N))
    S = np.full((1, N), start, dtype=np.int64)
    centers = pk.update_centers(cs, P, S, [length], p)
    D = pk.distances_at(cs, centers, S, p)
    return pk.ProbKmaState(P=P, S=S, centers=centers, D=D)


def test_elongation_grows_inside_signal():
    # offset copies: every curve misfits the center by a constant inside the
    # motif, so the objective is flat there instead of pure rounding noise
    cs, truth = _planted(level_shift_range=(-2.0, 2.0))
    assert {o.start for o in truth.occurrences} == {50}
    p = pk.ProbKmaParams(K=1, c_min=40, c_max=61, delta_jmk_frac=0.01,
                         dist=DistanceParams(alpha=0))
    st = _state_at(cs, p, 60, 40)
    j_old = pk.objective_k_from(st.P, st.D, p.m, 0)
    n = pk.elongate(cs, st, p, 0)
    assert n >= 1
    assert st.centers[0].length == 61 and (st.S[0] == 50).all()
    assert pk.objective_k_from(st.P, st.D, p.m, 0) <= j_old * (1 + 1e-12)


def test_elongation_rejected_into_noise():
    cs, _ = _planted()
    p = pk.ProbKmaParams(K=1, c_min=61, c_max=80, delta_jmk_frac=0.0)
    st = _state_at(cs, p, 50, 61)
    assert pk.elongate(cs, st, p, 0) == 0
    assert st.centers[0].length == 61 and (st.S[0] == 50).all()


def test_elongation_at_cap_is_noop():
    cs, _ = _planted()
    p = pk.ProbKmaParams(K=1, c_min=40, c_max=40)
    st = _state_at(cs, p, 60, 40)
    assert pk.elongate(cs, st, p, 0) == 0


# ------------------------------------------------------------------ run

def test_identical_curves_single_cluster():
    pattern = np.sin(np.linspace(0, 6, 40))
    cs = _cs([pattern] * 5)
    st = pk.run(cs, pk.ProbKmaParams(K=1, c_min=40, seed=3))
    np.testing.assert_allclose(st.centers[0].values[:, 0], pattern)
    assert st.objective_trace[-1] == pytest.approx(0, abs=1e-20)
    assert st.converged


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.sampled_from([1.5, 2.0, 3.0]),
       st.sampled_from([0.0, 0.5, 1.0]))
def test_run_descends_and_stays_stochastic(seed, m, alpha):
    rng = np.random.default_rng(seed)
    cs = _cs([rng.normal(size=int(rng.integers(25, 40))) for _ in range(5)])
    p = pk.ProbKmaParams(K=2, c_min=(8, 10), c_max=14, m=m, seed=seed,
                         dist=DistanceParams(alpha=alpha), max_iter=200)
    st = pk.run(cs, p)
    tr = np.asarray(st.objective_trace)
    for i in range(1, len(tr)):
        if i not in st.breaks:
            assert tr[i] <= tr[i - 1] + 1e-9
    np.testing.assert_allclose(st.P.sum(axis=0), 1, atol=1e-12)
    assert (st.P.sum(axis=1) > 0).all()
    assert all(8 <= L <= 14 for L in st.lengths)


def test_run_deterministic():
    cs, _ = simgen.generate(simgen.scenario1(seed=0))
    cs = preprocess(cs)
    p = pk.ProbKmaParams(K=2, c_min=40, c_max=50, seed=4)
    a, b = pk.run(cs, p), pk.run(cs, p)
    np.testing.assert_array_equal(a.P, b.P)
    np.testing.assert_array_equal(a.S, b.S)
    assert a.objective_trace == b.objective_trace


def test_single_run_recovers_both_motifs_for_some_seed():
    cs, truth = simgen.generate(simgen.scenario1(seed=0))
    cs = preprocess(cs)

    def captured(st, mid):
        occ = truth.for_motif(mid)
        carriers = {o.curve_id for o in occ}
        for k in range(st.K):
            members = np.flatnonzero(st.cleaned_P[k])
            if {cs[i].id for i in members} != carriers:
                continue
            L = st.centers[k].length
            if all(any(o.curve_id == cs[i].id and
                       min(o.stop, st.S[k, i] + L) - max(o.start, st.S[k, i]) >= o.length / 2
                       for o in occ) for i in members):
                return True
        return False

    hits = []
    for seed in range(6):
        st = pk.run(cs, pk.ProbKmaParams(K=2, c_min=60, c_max=60, seed=seed))
        hits.append(captured(st, 0) and captured(st, 1))
    assert any(hits)


def test_run_best_keeps_lowest_objective():
    rng = np.random.default_rng(8)
    cs = _cs([rng.normal(size=30) for _ in range(6)])
    p = pk.ProbKmaParams(K=2, c_min=10, seed=5)
    best = pk.run_best(cs, p, 4)
    singles = [pk.run(cs, pk.with_seed(
        p, int(np.random.SeedSequence([5, j]).generate_state(1)[0]))) for j in range(4)]
    assert best.objective_trace[-1] == min(s.objective_trace[-1] for s in singles)
    np.testing.assert_array_equal(pk.run_best(cs, p, 1).P, pk.run(cs, p).P)
    with pytest.raises(ValueError):
        pk.run_best(cs, p, 0)


def test_state_json_roundtrip():
    rng = np.random.default_rng(9)
    cs = _cs([rng.normal(size=30) for _ in range(4)])
    p = pk.ProbKmaParams(K=2, c_min=10, c_max=12, seed=2)
    st = pk.run(cs, p)
    doc = json.loads(json.dumps(pk.state_to_json(st, cs, p)))
    back = pk.state_from_json(doc)
    np.testing.assert_array_equal(back.P, st.P)
    np.testing.assert_array_equal(back.S, st.S)
    np.testing.assert_array_equal(back.cleaned_P, st.cleaned_P)
    for a, b in zip(back.centers, st.centers):
        np.testing.assert_array_equal(a.values, b.values)
    assert pk.params_from_json(doc["params"]) == p
