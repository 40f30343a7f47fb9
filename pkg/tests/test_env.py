import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rwre_lab.env import (EnvironmentLaw, EnvParams, MixingParams, TransitionVector, Window,
                          check_weights, load_environment, make_stream, mixing_correction_bound,
                          one_dim_law, quantize_law, quantize_vectors, sample_environment,
                          sample_transition_vector, sample_transition_vectors)
from rwre_lab.errors import CapacityError, QuantizationError


def laws():
    """Strategy over valid laws in d = 1, 2."""
    def cont(d, frac, conc):
        kappa = frac / (2 * d)
        return EnvironmentLaw.iid_continuous(d, kappa, conc[:2 * d])

    def finite(d, frac, raw, n):
        kappa = frac / (2 * d)
        rng = np.random.default_rng(raw)
        g = rng.dirichlet(np.ones(2 * d), size=n)
        atoms = kappa + (1 - 2 * d * kappa) * g
        return EnvironmentLaw.finite_support(d, kappa, atoms, np.full(n, 1.0 / n))

    conc = st.lists(st.floats(0.2, 5.0), min_size=4, max_size=4)
    return st.one_of(
        st.builds(cont, st.integers(1, 2), st.floats(0.02, 1.0), conc),
        st.builds(finite, st.integers(1, 2), st.floats(0.02, 1.0), st.integers(0, 10 ** 6),
                  st.integers(1, 5)),
    )


def test_env_params_bounds():
    EnvParams(2, 0.25)
    with pytest.raises(ValueError):
        EnvParams(2, 0.26)
    with pytest.raises(ValueError):
        EnvParams(1, 0.0)


def test_homogeneous_returns_its_vector():
    v = (0.4, 0.2, 0.3, 0.1)
    law = EnvironmentLaw.homogeneous(2, 0.1, v)
    assert sample_transition_vector(law, make_stream(1)).weights == v


def test_degenerate_simplex():
    law = EnvironmentLaw.iid_continuous(1, 0.5)
    w = sample_transition_vectors(law, 100, 1)
    assert np.allclose(w, 0.5, atol=1e-15)


def test_uniform_continuous_mean_is_half():
    law = EnvironmentLaw.iid_continuous(1, 0.1)
    w = sample_transition_vectors(law, 100_000, 5)[:, 0]
    assert abs(w.mean() - 0.5) <= 3 * w.std() / math.sqrt(w.size)


@given(laws(), st.integers(0, 2 ** 40))
def test_every_vector_is_in_the_simplex(law, seed):
    w = sample_transition_vectors(law, 200, seed)
    assert w.min() >= law.kappa - 1e-15
    assert np.all(np.abs(w.sum(axis=1) - 1) <= 1e-12)


def test_sample_environment_homogeneous_and_deterministic():
    law = EnvironmentLaw.homogeneous(2, 0.1, (0.4, 0.2, 0.3, 0.1))
    env = sample_environment(law, Window((-3, -2), (4, 5)), 9)
    assert np.all(env.table == np.array([0.4, 0.2, 0.3, 0.1]))
    cont = EnvironmentLaw.iid_continuous(2, 0.05)
    a = sample_environment(cont, Window((-3, -2), (4, 5)), 9)
    b = sample_environment(cont, Window((-3, -2), (4, 5)), 9)
    assert np.array_equal(a.table, b.table)


def test_site_draws_do_not_depend_on_window():
    law = EnvironmentLaw.iid_continuous(2, 0.05)
    small = sample_environment(law, Window((0, 0), (2, 2)), 3)
    big = sample_environment(law, Window((-5, -5), (5, 5)), 3)
    for z in [(0, 0), (1, 2), (2, 1)]:
        assert np.array_equal(small.weights(z), big.weights(z))


def test_finite_support_fraction():
    A, B = (0.3, 0.7), (0.6, 0.4)
    law = EnvironmentLaw.finite_support(1, 0.3, [A, B], [0.5, 0.5])
    env = sample_environment(law, Window.interval(0, 9999), 11)
    frac = np.mean(np.isclose(env.table[:, 0], 0.3))
    assert 0.485 <= frac <= 0.515


def test_capacity_error():
    law = EnvironmentLaw.iid_continuous(2, 0.05)
    with pytest.raises(CapacityError):
        sample_environment(law, Window((0, 0), (999, 999)), 1, max_bytes=1000)


def test_invalid_laws_rejected():
    with pytest.raises(ValueError):
        EnvironmentLaw.finite_support(1, 0.1, [(0.5, 0.5)], [0.9])
    with pytest.raises(ValueError):
        EnvironmentLaw.homogeneous(1, 0.2, (0.9, 0.1))
    with pytest.raises(ValueError):
        TransitionVector((0.5, 0.6)).validate(0.1)


def test_quantize_hand_value():
    q = quantize_vectors([0.83, 0.17], 0.1, 10)
    assert np.allclose(q, [[0.82, 0.18]], atol=1e-12)


def test_quantize_fixed_point():
    law = one_dim_law(0.9, kappa=0.1)
    q = quantize_law(law, 2)
    assert np.allclose(q.atoms, [(0.9, 0.1)])
    assert q.probs == (1.0,)


def test_quantize_small_m_rejected():
    with pytest.raises(QuantizationError):
        quantize_vectors([0.5, 0.5], 0.1, 1)


@given(laws(), st.sampled_from([2, 3, 4, 16, 64]))
def test_quantized_atoms_in_simplex(law, m):
    q = quantize_law(law, m, n_samples=2000, seed=1)
    a = np.asarray(q.atoms)
    assert a.min() >= law.kappa - 1e-12
    assert np.all(np.abs(a.sum(axis=1) - 1) <= 1e-12)
    assert abs(sum(q.probs) - 1) <= 1e-12
    assert len(q.atoms) <= m ** (2 * law.d)


def test_quantization_converges_in_mean():
    law = EnvironmentLaw.iid_continuous(1, 0.1, (2.0, 1.0))
    ref = sample_transition_vectors(law, 200_000, 3).mean(axis=0)
    errs = [np.abs(np.asarray(quantize_law(law, m, 200_000, 3).mean_vector()) - ref).sum()
            for m in (4, 16, 64)]
    assert errs[0] > errs[1] > errs[2]


def test_mixing_bound_values():
    mp = MixingParams(1.0, 1.0, 1)
    v = mixing_correction_bound(mp, 1, 10.0, 10.0, 1.0)
    assert v == pytest.approx(math.exp(900 * math.exp(-90 / 11)), rel=1e-12)
    # the quoted reference 1.28623 is the value truncated to five places
    assert v == pytest.approx(1.28623, abs=2e-5)
    assert mixing_correction_bound(MixingParams(1.0, 1e6, 1), 1, 10.0, 10.0, 1.0) \
        == pytest.approx(1.0, abs=1e-12)
    assert mixing_correction_bound(MixingParams(0.0, 1.0, 1), 2, 10.0, 10.0, 1.0) == 1.0


@pytest.mark.filterwarnings("ignore:mixing correction overflows")
def test_mixing_bound_monotone_grid():
    for d in (1, 2):
        for L in (5.0, 10.0, 20.0):
            vals = [mixing_correction_bound(MixingParams(1.0, g, 1), d, L, L, 1.0)
                    for g in (0.5, 1.0, 2.0, 4.0)]
            assert all(v >= 1.0 for v in vals)
            assert all(b <= a for a, b in zip(vals, vals[1:]))
    vals = [mixing_correction_bound(MixingParams(1.0, 1.0, 1), 1, L, L, 1.0)
            for L in (10.0, 20.0, 40.0)]
    assert all(b <= a for a, b in zip(vals, vals[1:]))


def test_mixing_bound_overflow_sentinel():
    with pytest.warns(RuntimeWarning):
        assert mixing_correction_bound(MixingParams(1.0, 1e-6, 1), 3, 1e3, 1e6, 1.0) == math.inf


@pytest.mark.parametrize("suffix", [".json", ".npz"])
def test_environment_roundtrip(tmp_path, suffix):
    law = EnvironmentLaw.iid_continuous(2, 0.05)
    env = sample_environment(law, Window((-2, -1), (3, 2)), 4)
    p = tmp_path / f"env{suffix}"
    from rwre_lab.env import save_environment
    save_environment(env, p)
    back = load_environment(p)
    assert np.array_equal(back.table, env.table)
    assert back.window == env.window
    assert back.law_id == env.law_id


def test_loader_revalidates(tmp_path):
    import json
    law = EnvironmentLaw.iid_continuous(1, 0.1)
    env = sample_environment(law, Window.interval(0, 3), 4)
    p = tmp_path / "e.json"
    from rwre_lab.env import save_environment
    save_environment(env, p)
    data = json.loads(p.read_text())
    data["weights"][0] = [0.05, 0.95]
    p.write_text(json.dumps(data))
    with pytest.raises(ValueError):
        load_environment(p)


def test_check_weights_tolerance():
    check_weights(np.array([[0.5, 0.5 + 5e-13]]), 0.1)
    with pytest.raises(ValueError):
        check_weights(np.array([[0.5, 0.5 + 1e-9]]), 0.1)
