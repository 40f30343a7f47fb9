import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rwre_lab.env import EnvironmentLaw, MixingParams, Window, one_dim_environment, one_dim_law, sample_environment
from rwre_lab.errors import CapacityError, MissingStatusError
from rwre_lab.geometry import BoxSpec, make_hierarchy
from rwre_lab.oned import gamblers_ruin
from rwre_lab.renorm import (_cover_with_disjointness, _status_from_bits, cascade_experiment,
                             classify_recursive, classify_scale0, compute_constants,
                             disjoint_pairs, lambda2_exact, lateral_bound_value,
                             literal_bad_vectorized, null_model_cascade,
                             null_model_exact_scale1, quenched_ladder_ratio,
                             scale0_bad_probability, suggest_scaled_config)


def small_h(d=1, k_max=3):
    return make_hierarchy(10, N0=4, Ntilde0=4 if d == 1 else 16, c_tilde=1.0, k_max=k_max,
                          d=d, warn=False)


def test_lambda2_paper_defaults():
    h = make_hierarchy(1000, paper_defaults=True, k_max=2, d=1)
    assert lambda2_exact(h) == 5_290_000
    c = compute_constants(h)
    assert c.lambda1 == pytest.approx((4 * 5_290_000.0) ** -2)
    assert c.c0 == pytest.approx(math.log(4 * 5_290_000.0))


@pytest.mark.parametrize("L0", [100.0, 1000.0, 10_000.0])
def test_limit_tends_to_ln4(L0):
    h = make_hierarchy(L0, paper_defaults=True, k_max=1, d=1)
    c = compute_constants(h, MixingParams(1.0, 1.0, 1))
    assert c.limit == pytest.approx(math.log(4) - math.exp(-L0 / 30), abs=1e-12)
    assert c.inf_positive


def test_annealed_sequence_decreasing_and_above_limit():
    h = make_hierarchy(1000, paper_defaults=True, k_max=20, d=1)
    c = compute_constants(h, MixingParams(1.0, 1.0, 1), n_terms=61)
    ca = c.c_annealed
    diffs = np.diff(ca)
    # strict decrease while the increment is representable next to c_k
    for k, dk in enumerate(diffs):
        step = math.log(c.lambda2) / 2 ** (k + 1)
        if step > 4 * np.spacing(ca[k]):
            assert dk < 0
        else:
            assert dk <= 0
    assert ca.min() >= c.limit


def test_quenched_ladder():
    h = small_h()
    for k in range(4):
        assert quenched_ladder_ratio(h, k) == (4 // 4) ** k * 1
    h = make_hierarchy(10, N0=8, Ntilde0=8, k_max=3, d=1, warn=False)
    assert quenched_ladder_ratio(h, 3) == 8


def test_lateral_bound():
    c1 = compute_constants(small_h(1))
    assert lateral_bound_value(c1, 0) == 0.0
    c2 = compute_constants(small_h(2, 1))
    J, nk = c2.J_k, c2.n_k
    want = math.exp(-(J / 8) * (5.0 - math.log(2 * nk)))
    assert lateral_bound_value(c2, 0, ckLk=5.0) == pytest.approx(want)
    assert lateral_bound_value(c2, 0, ckLk=5.0, drop_dimension_factor=True) == pytest.approx(
        math.exp(-(J / 8) * (5.0 - math.log(nk))))


def test_scale0_symmetric_examples():
    env = one_dim_environment([0.5] * 61, lo=-30)
    box = BoxSpec.weak("B2", 1, 11, 1)
    st = classify_scale0(env, box, 0.25)
    assert st.sup_exit_estimate == pytest.approx(12 / 23, abs=1e-12)
    assert st.bad
    assert not classify_scale0(env, box, 0.3).bad
    deg = classify_scale0(env, box, 1.0)
    assert deg.label == "Good" and deg.degenerate


def test_scale0_drift_matches_ruin():
    env = one_dim_environment([0.9] * 61, lo=-30)
    box = BoxSpec.weak("B2", 1, 10, 1)
    st = classify_scale0(env, box, 1e-6)
    # worst start is the rear of the front box; interior -9..10, plus site 11
    assert st.sup_exit_estimate == pytest.approx(gamblers_ruin(0.9, -10, 11, 0), rel=1e-12)
    assert st.bad == (st.sup_exit_estimate >= 1e-3)


def test_scale0_mc_agrees_with_exact():
    law = one_dim_law([0.55, 0.75], [0.5, 0.5])
    env = sample_environment(law, Window([-20], [20]), seed=4)
    box = BoxSpec.weak("B2", 1, 5, 1)
    ex = classify_scale0(env, box, 0.04)
    mc = classify_scale0(env, box, 0.04, method="mc", trials=20_000, seed=2)
    assert abs(mc.sup_exit_estimate - ex.sup_exit_estimate) <= 4 * mc.stderr + 1e-3
    if not mc.indeterminate:
        assert mc.label == ex.label


def test_scale0_2d_exact_runs():
    law = EnvironmentLaw.iid_continuous(2, 0.1, [2, 1, 1, 1])
    box = BoxSpec.generic("B2", 5, 5, 1.0, 2, scale=0)
    lo, hi = box.bounding_box(pad=1)
    env = sample_environment(law, Window(lo, hi), seed=0)
    st = classify_scale0(env, box, 0.04)
    assert 0 <= st.sup_exit_estimate <= 1


def test_scale0_bad_probability_mixed_law():
    law = one_dim_law([0.55, 0.75], [0.5, 0.5])
    out = [scale0_bad_probability(law, L0, 1e-4, 300, seed=1)["p_bad"] for L0 in (4, 8, 16)]
    assert out[0] > out[1] > out[2]
    assert out[0] == 1.0 and out[2] == 0.0


def _children_and_D(h, k=1):
    parent = BoxSpec.at_scale("B2", h, k, np.zeros(h.d))
    children, D = _cover_with_disjointness(h, k, parent)
    return parent, children, D


def test_recursive_all_good_and_witness():
    h = small_h()
    parent, children, D = _children_and_D(h)
    keys = [tuple(float(v) for v in c.anchor) for c in children]
    st = classify_recursive(h, 1, parent, {k: False for k in keys})
    assert st.label == "Good" and st.cover_witness == keys[0]
    i, j = map(int, np.argwhere(D)[0])
    status = {k: (n in (i, j)) for n, k in enumerate(keys)}
    bad = classify_recursive(h, 1, parent, status, rule="pairwise")
    assert bad.bad and set(bad.witness) == {keys[i], keys[j]}


def test_missing_child_status():
    h = small_h()
    parent, children, _ = _children_and_D(h)
    with pytest.raises(MissingStatusError):
        classify_recursive(h, 1, parent, {})


def test_single_bad_child_is_good_under_both_rules():
    h = small_h(2, 1)
    parent, children, D = _children_and_D(h)
    for n in range(len(children)):
        bad = np.zeros(len(children), bool)
        bad[n] = True
        assert _status_from_bits(parent, children, bad, D, "literal").label == "Good"
        assert _status_from_bits(parent, children, bad, D, "pairwise").label == "Good"


@given(st.data())
@settings(max_examples=100)
def test_pairwise_good_implies_literal_good(data):
    h = small_h(data.draw(st.sampled_from([1, 2])), 1)
    parent, children, D = _children_and_D(h)
    bits = np.array(data.draw(st.lists(st.booleans(), min_size=len(children),
                                       max_size=len(children))))
    lit = _status_from_bits(parent, children, bits, D, "literal")
    pw = _status_from_bits(parent, children, bits, D, "pairwise")
    if pw.label == "Good":
        assert lit.label == "Good"
    assert bool(literal_bad_vectorized(bits[None, :], D)[0]) == lit.bad


def _disagreement(h):
    parent, children, D = _children_and_D(h)
    n = len(children)
    for a, b in itertools.combinations(range(n), 2):
        if D[a, b]:
            bits = np.zeros(n, bool)
            bits[[a, b]] = True
            if _status_from_bits(parent, children, bits, D, "literal").label == "Good":
                return bits
    return None


def test_literal_rule_tolerates_two_disjoint_bad_children():
    # a child meeting both bad children witnesses Good under the literal
    # quantifier while the pairwise reading calls the parent Bad
    h = small_h(1, 1)
    parent, children, D = _children_and_D(h)
    bits = _disagreement(h)
    assert bits is not None
    assert _status_from_bits(parent, children, bits, D, "pairwise").bad


@pytest.mark.xfail(strict=True, reason="the literal and pairwise readings differ")
def test_readings_agree():
    assert _disagreement(small_h(1, 1)) is None


def test_null_model_zero_and_one():
    h = small_h()
    out = null_model_cascade(h, 0.0, 200, seed=0)
    assert all(s["n_bad"] == 0 for s in out["scales"])
    out = null_model_cascade(h, 1.0, 50, seed=0)
    assert all(s["n_bad"] == 50 for s in out["scales"])


def test_null_model_scale1_exact_vs_mc():
    h = small_h(1, 1)
    exact = null_model_exact_scale1(h, 0.3)
    out = null_model_cascade(h, 0.3, 20_000, seed=5, k_max=1)
    p1 = out["scales"][1]["p_hat"]
    assert abs(p1 - exact) <= 3 * math.sqrt(exact * (1 - exact) / 20_000)
    assert exact <= len(disjoint_pairs(h, 1)) * 0.3 ** 2


def test_null_model_bound():
    out = null_model_cascade(small_h(1, 3), 0.1, 10_000, seed=0)
    assert all(s["within"] for s in out["scales"][1:])


def test_cascade_capacity_error():
    h = make_hierarchy(4.5, paper_defaults=True, k_max=1, d=2)
    with pytest.raises(CapacityError, match="infeasible constants"):
        cascade_experiment(EnvironmentLaw.iid_continuous(2, 0.1), h)


def test_suggested_config_fits():
    for d in (1, 2):
        cfg = suggest_scaled_config(d)
        h = make_hierarchy(cfg["L0"], N0=cfg["N0"], Ntilde0=cfg["Ntilde0"],
                           c_tilde=cfg["c_tilde"], k_max=cfg["k_max"], d=d, warn=False)
        assert h.k_max == cfg["k_max"]
    assert suggest_scaled_config(1)["k_max"] == 3


def test_cascade_1d_small():
    law = one_dim_law([0.85, 0.95], [0.5, 0.5])
    h = small_h(1, 1)
    rep = cascade_experiment(law, h, n_env=5, seed=0, lambda1=0.04)
    assert [s["k"] for s in rep["scales"]] == [0, 1]
    for s in rep["scales"]:
        if s.get("quenched_sup_exit_max_good") is not None:
            assert s["quenched_sup_exit_max_good"] < 1
