import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rwre_lab.conditions import (INDETERMINATE, NO, YES, ConditionSpec, decay_verdict,
                                 default_neighborhood, estimate_condition_W,
                                 estimate_condition_boxT, estimate_slab_curve, fit_decay,
                                 hierarchy_report, transience_probe, write_curve_csv)
from rwre_lab.env import EnvironmentLaw, one_dim_law
from rwre_lab.geometry import Direction

L_GRID = [4, 8, 12, 16, 20, 24]


@given(st.floats(0.2, 1.0), st.floats(0.05, 2.0))
def test_stretched_fit_recovers_exponent(g, a):
    L = np.array(L_GRID, float)
    p = np.exp(-a * L ** g)
    fit = fit_decay(L, p)
    assert fit.stretched["gamma_hat"] == pytest.approx(g, abs=1e-9)
    assert fit.stretched["rate"] == pytest.approx(a, rel=1e-8)
    assert fit.decay_accepted


@given(st.floats(0.5, 6.0))
def test_polynomial_fit_recovers_power(M):
    L = np.array(L_GRID, float)
    fit = fit_decay(L, L ** -M)
    assert fit.polynomial["label"] == "polynomial"
    assert fit.polynomial["M_hat"] == pytest.approx(M, rel=1e-9)


def test_exponential_is_super_polynomial():
    L = np.array(L_GRID, float)
    fit = fit_decay(L, np.exp(-0.5 * L))
    assert fit.polynomial["label"] == "super-polynomial"
    assert fit.exponential["rate"] == pytest.approx(0.5)
    assert fit.exponential["r2"] == pytest.approx(1.0)


def test_degenerate_curve():
    fit = fit_decay(L_GRID, [0.0] * len(L_GRID))
    assert fit.degenerate and fit.decay_accepted
    assert fit.exponential["label"] == "super-exponential"
    assert decay_verdict(fit, gamma=1.0, M=5) == YES


def test_flat_curve_is_not_decay():
    fit = fit_decay(L_GRID, [0.5] * len(L_GRID))
    assert not fit.decay_accepted
    assert decay_verdict(fit) == NO


def test_gamma_target_shortfall_is_indeterminate():
    L = np.array(L_GRID, float)
    fit = fit_decay(L, np.exp(-L ** 0.4))
    assert decay_verdict(fit, gamma=0.4) == YES
    assert decay_verdict(fit, gamma=0.9) == INDETERMINATE


def test_neighborhood():
    nb = default_neighborhood(Direction.axis(2))
    assert len(nb) == 3
    for D in nb[1:]:
        assert math.acos(np.clip(D.ell @ nb[0].ell, -1, 1)) == pytest.approx(0.1)
    assert len(default_neighborhood(Direction.axis(1))) == 1
    spec = ConditionSpec("PolynomialP", [1.0, 0.0], neighborhood=[[1.0, 0.2]])
    assert np.allclose(spec.neighborhood[0].ell, [1, 0])
    with pytest.raises(ValueError):
        ConditionSpec("Bogus", [1.0])
    with pytest.raises(ValueError):
        ConditionSpec("StretchT", [1.0], gamma=1.5)


def test_drift_slab_curve_exact():
    law = one_dim_law(0.9)
    spec = ConditionSpec("StretchT", [1.0])
    fit = estimate_slab_curve(law, spec, [5, 10, 15], trials=10)
    r = 1 / 9
    want = [(r ** L - r ** (2 * L)) / (1 - r ** (2 * L)) for L in (5, 10, 15)]
    assert fit.p == pytest.approx(want, rel=1e-9)
    assert fit.exponential["rate"] == pytest.approx(math.log(9), rel=1e-3)
    assert fit.method == "exact"


def test_boxT_equals_slab_in_one_dimension():
    law = one_dim_law([0.6, 0.9], [0.5, 0.5])
    spec = ConditionSpec("BoxT", [1.0])
    a = estimate_slab_curve(law, spec, [4, 8, 12], trials=50, seed=3)
    b = estimate_condition_boxT(law, 0.5, [4, 8, 12], trials=50, seed=3)
    assert a.p == b.p


def test_boxT_left_direction_in_one_dimension():
    law = one_dim_law(0.1)
    fit = estimate_condition_boxT(law, 1.0, [4, 8], trials=5, direction=[-1.0])
    r = 1 / 9
    assert fit.p[0] == pytest.approx((r ** 4 - r ** 8) / (1 - r ** 8), rel=1e-9)


def test_symmetric_slab_curve_is_flat():
    fit = estimate_slab_curve(one_dim_law(0.5), ConditionSpec("StretchT", [1.0]), L_GRID, trials=5)
    assert fit.p == pytest.approx([0.5] * len(L_GRID))
    assert decay_verdict(fit, gamma=0.5) == NO


def test_weak_condition_homogeneous_has_zero_width():
    law = EnvironmentLaw.homogeneous(1, 0.1, [0.9, 0.1])
    W = estimate_condition_W(law, 1.0, 30, 0.04, n_env=10, seed=0)
    assert W["ci"][0] == W["ci"][1] == W["value"]
    assert W["satisfied"] == YES and W["side_condition"]
    sym = estimate_condition_W(one_dim_law(0.5), 1.0, 30, 0.04, n_env=5)
    assert sym["satisfied"] == NO
    deg = estimate_condition_W(law, 1.0, 30, 1.0)
    assert deg["degenerate"] and deg["satisfied"] == YES


def test_weak_condition_two_dimensions():
    law = EnvironmentLaw.homogeneous(2, 0.05, [0.85, 0.05, 0.05, 0.05])
    W = estimate_condition_W(law, 1.0, 6, 0.04, n_env=2)
    assert W["satisfied"] == YES


def test_transience_verdicts():
    drift = transience_probe(one_dim_law(0.9), n_grid=(200, 400), trials=500, seed=1)
    assert drift["verdict"] == YES
    sym = transience_probe(one_dim_law(0.5), n_grid=(200, 400), trials=500, seed=1)
    assert sym["verdict"] == NO
    weak = transience_probe(EnvironmentLaw.homogeneous(1, 0.45, [0.55, 0.45]),
                            n_grid=(50, 100), trials=500, seed=1)
    assert weak["verdict"] in (YES, INDETERMINATE)


def test_two_dimensional_boxT_mc_reproducible():
    law = EnvironmentLaw.homogeneous(2, 0.2, [0.4, 0.2, 0.2, 0.2])
    a = estimate_condition_boxT(law, 0.5, [2, 3], trials=2000, seed=4)
    b = estimate_condition_boxT(law, 0.5, [2, 3], trials=2000, seed=4, jobs=3)
    assert a.p == b.p and a.method == "mc"
    assert a.p[1] <= a.p[0] + 0.05


def test_hierarchy_report_mixed_law(tmp_path):
    law = one_dim_law([0.45, 0.65], [0.5, 0.5], kappa=0.35)
    rep = hierarchy_report(law, {"L_grid": [5, 10, 15], "trials": 50, "n_env": 10,
                                 "n_grid": [100, 200], "walk_trials": 200})
    assert set(rep["verdicts"]) == {"WeakW", "PolynomialP", "StretchT", "BoxT", "Transience"}
    assert set(rep["verdicts"].values()) <= {YES, NO, INDETERMINATE}
    assert rep["note"] == "consistency evidence, not implication proof"
    fit = fit_decay([1, 2], [0.5, 0.25])
    path = tmp_path / "c.csv"
    write_curve_csv(path, fit)
    assert path.read_text().splitlines()[0] == "L,p,ci_lo,ci_hi,one_sided"
