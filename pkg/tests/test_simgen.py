import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.interpolate import BSpline
from scipy.stats import beta as beta_dist
from scipy.stats import kstest

from funmotif import simgen
from funmotif.curveset import preprocess


def test_all_ones_is_one():
    t = np.linspace(0, 90, 181)
    np.testing.assert_allclose(simgen.bspline_eval(np.ones(12), 3, 10, t), 1, atol=1e-12)


def test_linear_tent():
    t = np.arange(0, 21)
    y = simgen.bspline_eval([0.0, 1.0, 0.0], 2, 10, t)
    # order 2 on knots -10, 0, 10, 20, 30: middle basis peaks at t = 10
    assert y[10] == pytest.approx(1.0)
    np.testing.assert_allclose(y[:11], np.arange(11) / 10)
    np.testing.assert_allclose(y[10:], 1 - np.arange(11) / 10)


@pytest.mark.parametrize("order", [2, 3, 4, 5])
def test_matches_scipy_bspline(order):
    rng = np.random.default_rng(order)
    L, T = 14, 10.0
    c = rng.normal(size=L)
    knots = simgen.uniform_knots(L, order, T)
    t = np.linspace(knots[order - 1], knots[L], 503)
    ref = BSpline(knots, c, order - 1, extrapolate=False)(t)
    np.testing.assert_allclose(simgen.bspline_eval(c, order, T, t), ref, atol=1e-12)


def test_first_derivative_continuous_at_knots():
    rng = np.random.default_rng(0)
    c = rng.uniform(-15, 15, size=12)
    h = 1e-6
    for knot in np.arange(10, 100, 10.0):
        left = (simgen.bspline_eval(c, 3, 10, [knot])[0]
                - simgen.bspline_eval(c, 3, 10, [knot - h])[0]) / h
        right = (simgen.bspline_eval(c, 3, 10, [knot + h])[0]
                 - simgen.bspline_eval(c, 3, 10, [knot])[0]) / h
        assert left == pytest.approx(right, abs=1e-4)


def test_outside_support_rejected():
    with pytest.raises(ValueError):
        simgen.bspline_eval(np.ones(5), 3, 10, [-1.0])
    with pytest.raises(ValueError):
        simgen.bspline_basis(5, 0, 10, [0.0])


@settings(max_examples=30)
@given(st.integers(2, 5), st.integers(0, 12), st.floats(0.5, 20))
def test_partition_of_unity_and_support(order, extra, T):
    L = order + extra
    t = np.linspace(0, (L - order + 1) * T, 301)
    B = simgen.bspline_basis(L, order, T, t)
    np.testing.assert_allclose(B.sum(axis=1), 1, atol=1e-12)
    knots = simgen.uniform_knots(L, order, T)
    for j in range(L):
        nz = t[B[:, j] > 0]
        if nz.size:
            assert nz.min() >= knots[j] - 1e-9 and nz.max() <= knots[j + order] + 1e-9


def test_rescaled_beta_distribution():
    rng = np.random.default_rng(0)
    x = simgen.rescaled_beta(rng, 20000, -15, 15)
    assert x.min() >= -15 and x.max() <= 15
    res = kstest((x + 15) / 30, beta_dist(0.45, 0.45).cdf)
    assert res.pvalue > 1e-3


# ---------------------------------------------------------------- presets

def test_scenario1_preset():
    spec = simgen.scenario1(200, 0.1, seed=0)
    assert (spec.order, spec.knot_spacing, spec.n_curves) == (3, 10, 20)
    assert spec.coef_range == (-15.0, 15.0) and spec.sigma == 0.1
    assert all(len(m) == 8 for m in spec.motifs)
    cs, truth = simgen.generate(spec)
    assert len(cs) == 20 and all(c.n_points == 201 for c in cs)
    assert len(truth.occurrences) == 24
    assert len({o.curve_id for o in truth.occurrences}) == 18
    assert all(o.length == 61 for o in truth.occurrences)
    assert all(o.stop <= 201 for o in truth.occurrences)
    per_curve = {}
    for o in truth.occurrences:
        per_curve.setdefault(o.curve_id, []).append(o.motif_id)
    kinds = sorted(tuple(sorted(v)) for v in per_curve.values())
    assert kinds.count((0,)) == 6 and kinds.count((1,)) == 6
    assert kinds.count((0, 0)) == 2 and kinds.count((1, 1)) == 2
    assert kinds.count((0, 1)) == 2


def test_long_curves_keep_plants_left():
    cs, truth = simgen.generate(simgen.scenario1(500, 2.0, seed=1))
    assert all(c.n_points == 501 for c in cs)
    assert max(o.stop for o in truth.occurrences) <= 201


def test_scenario2_level_shifts():
    spec = simgen.scenario2(200, 1.0, seed=0)
    assert spec.level_shift_range == (-10.0, 10.0)
    assert spec.layout == simgen.scenario1(200, 1.0, seed=0).layout


def test_zero_noise_shifted_copies_differ_by_constant():
    spec = simgen.scenario2(200, 0.0, seed=4)
    cs, truth = simgen.generate(spec)
    cs = preprocess(cs)
    occ = truth.for_motif(0)
    a, b = occ[0], occ[1]
    xa = cs[cs.index(a.curve_id)]
    xb = cs[cs.index(b.curve_id)]
    diff = xb.values[b.start:b.stop, 0] - xa.values[a.start:a.stop, 0]
    np.testing.assert_allclose(diff, diff[0], atol=1e-9)
    assert abs(diff[0]) > 1e-6
    # interior derivatives agree (the ends use one-sided differences into background)
    np.testing.assert_allclose(xb.deriv[b.start + 1:b.stop - 1],
                               xa.deriv[a.start + 1:a.stop - 1], atol=1e-9)


def test_zero_noise_copy_equals_block_spline():
    cs, truth = simgen.generate(simgen.scenario1(sigma=0.0, seed=5))
    spec = simgen.scenario1(sigma=0.0, seed=5)
    for o in truth.occurrences:
        block = spec.motifs[o.motif_id]
        alone = simgen.bspline_eval(block, 3, 10, np.arange(61.0))
        got = cs[cs.index(o.curve_id)].values[o.start:o.stop, 0]
        np.testing.assert_array_equal(got, alone)
        np.testing.assert_array_equal(truth.motifs[o.motif_id], alone)


def test_seed_determinism():
    a_cs, a_tr = simgen.generate(simgen.scenario1(300, 0.5, seed=8))
    b_cs, b_tr = simgen.generate(simgen.scenario1(300, 0.5, seed=8))
    for x, y in zip(a_cs, b_cs):
        np.testing.assert_array_equal(x.values, y.values)
    assert a_tr.to_json() == b_tr.to_json()
    c_cs, _ = simgen.generate(simgen.scenario1(300, 0.5, seed=9))
    assert not np.array_equal(a_cs[0].values, c_cs[0].values)


@pytest.mark.parametrize("name", ["comp_a", "comp_b", "comp_c", "comp_d"])
def test_comparison_presets(name):
    spec = simgen.preset(name, sigma=2.0, seed=1)
    cs, truth = simgen.generate(spec)
    assert len(cs) == 18
    labels = list(truth.labels.values())
    assert labels.count(0) == 9 and labels.count(1) == 9
    assert len(truth.occurrences) == 18
    if name == "comp_a":
        assert all(o.start == 0 and o.length == c.n_points
                   for o, c in zip(truth.occurrences, cs))
    if name == "comp_b":
        assert truth.center_length == int(cs.lengths.min())
        assert len({c.n_points for c in cs}) > 1
    if name == "comp_c":
        assert len({o.start for o in truth.occurrences}) == 1
    if name == "comp_d":
        assert len({o.start for o in truth.occurrences}) > 1


def test_unknown_preset():
    with pytest.raises(ValueError, match="unknown preset"):
        simgen.preset("scenario9")


def test_separation_rule_enforced():
    spec = simgen.scenario1(seed=0)
    bad = simgen.ScenarioSpec(order=3, knot_spacing=10, coef_range=(-15, 15),
                              motifs=spec.motifs, layout=(((0, 0), (1, 9)),),
                              lengths=(200,))
    with pytest.raises(ValueError, match="background coefficients"):
        simgen.generate(bad)
    ok = simgen.ScenarioSpec(order=3, knot_spacing=10, coef_range=(-15, 15),
                             motifs=spec.motifs, layout=(((0, 0), (1, 11)),),
                             lengths=(200,))
    simgen.generate(ok)


def test_truth_json_roundtrip(tmp_path):
    _, truth = simgen.generate(simgen.comp_d(0.1, seed=2))
    truth.save(tmp_path / "t.json")
    back = simgen.TruthLayout.load(tmp_path / "t.json")
    assert back.to_json() == truth.to_json()
