import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rwre_lab.geometry import (BoxSpec, Direction, StripIndexer, dependency_set,
                               disjointness_matrix, l1_distance, lattice_points, make_hierarchy,
                               quasi_cover, strip_index, uncovered_sites)

unit = st.lists(st.floats(-1, 1), min_size=2, max_size=4).filter(
    lambda v: np.linalg.norm(v) > 1e-3)


@given(unit)
def test_direction_frame_is_orthogonal(v):
    D = Direction.from_vector(v)
    assert D.check()
    assert np.allclose(D.rotation @ np.eye(D.d)[0], D.ell, atol=1e-10)


@pytest.mark.parametrize("eps", [1e-9, 1e-13, 1e-17])
def test_direction_near_first_axis(eps):
    D = Direction.from_vector([1.0, eps, -eps])
    assert D.check()


def test_axis_direction_is_identity():
    assert np.array_equal(Direction.axis(3).rotation, np.eye(3))


def test_paper_default_hierarchy():
    h = make_hierarchy(1000, paper_defaults=True, k_max=2, d=1)
    assert h.N0 == 1100 and h.Ntilde0 == 13_310_000
    assert h.separation_violations == []
    h2 = make_hierarchy(1000, paper_defaults=True, k_max=2, d=2)
    assert h2.N0 == 8800 and h2.Ntilde0 == 11 * 8 * 8800 ** 2
    assert h2.separation_violations == []


def test_scaled_hierarchy_arrays_and_warning():
    with pytest.warns(RuntimeWarning):
        h = make_hierarchy(10, N0=4, Ntilde0=4, k_max=3, d=1)
    assert list(h.L) == [10, 40, 160, 640]
    assert h.A[2] == 210
    assert (3, "A", 210.0, 640 / 11) in [(k, n, a, b) for k, n, a, b in h.separation_violations]
    assert h.L_exact(3) == Fraction(640)


def test_hierarchy_validation():
    with pytest.raises(ValueError):
        make_hierarchy(4.0, N0=4, Ntilde0=4, d=2)
    with pytest.raises(ValueError):
        make_hierarchy(10, N0=1, Ntilde0=4)
    with pytest.raises(OverflowError):
        make_hierarchy(1000, paper_defaults=True, k_max=120, d=1, warn=False)


def test_lattice_points():
    h1 = make_hierarchy(10, N0=4, Ntilde0=4, k_max=1, d=1, warn=False)
    assert lattice_points(h1, 0, ([0], [35])).ravel().tolist() == [0, 10, 20, 30]
    assert lattice_points(h1, 0, ([5], [4])).shape[0] == 0
    h2 = make_hierarchy(10, N0=4, Ntilde0=4, k_max=1, d=2, warn=False)
    pts = lattice_points(h2, 0, ([0, 0], [35, 65]))
    assert len(pts) == 12
    assert pts.tolist() == sorted(pts.tolist())


def test_b2_membership_literal_box():
    box = BoxSpec.generic("B2", 11, 11, 1.0, 1)
    labels = {z: box.membership(np.array([z])) for z in (-12, -11, -10, 0, 11, 12, 13)}
    assert labels == {-12: "exterior", -11: "boundary", -10: "interior", 0: "interior",
                      11: "interior", 12: "boundary_plus", 13: "exterior"}


@given(st.integers(2, 30), st.integers(-40, 40))
def test_boundary_plus_implies_boundary_not_interior(L, z):
    box = BoxSpec.generic("B2", L, L, 1.0, 1)
    lab = box.classify(np.array([[z]]))[0]
    if lab == 3:
        assert not box.contains(np.array([z]))
        near = box.contains(np.array([z - 1])) or box.contains(np.array([z + 1]))
        assert near


def test_axis_membership_matches_coordinates():
    box = BoxSpec.generic("B2", 5, 3, 1.0, 2, anchor=[2, -1])
    rng = np.random.default_rng(0)
    z = rng.integers(-15, 20, size=(500, 2))
    direct = ((z[:, 0] - 2 > -5) & (z[:, 0] - 2 < 60 / 11)
              & (z[:, 1] + 1 > -3) & (z[:, 1] + 1 < 12))
    assert np.array_equal(box.contains(z), direct)


def test_nested_boxes():
    h = make_hierarchy(10, N0=4, Ntilde0=4, k_max=1, d=2, warn=False)
    D = Direction.from_vector([2.0, 1.0])
    dot = BoxSpec.at_scale("B1dot", h, 0, None, D)
    b1 = BoxSpec.at_scale("B1tilde", h, 0, None, D)
    b2 = BoxSpec.at_scale("B2", h, 0, None, D)
    assert b2.contains_box(b1) and b1.contains_box(dot)
    s_dot, s_b1, s_b2 = (set(map(tuple, b.sites())) for b in (dot, b1, b2))
    assert s_dot <= s_b1 <= s_b2


def test_rotated_boundary_plus_subset_of_boundary():
    D = Direction.from_vector([1.0, 1.0])
    box = BoxSpec.generic("B2", 6, 3, 1.0, 2, direction=D)
    sites, plus = box.boundary_sites()
    assert plus.any() and (~plus).any()
    assert not box.contains(sites).any()


def test_quasi_cover_children_count_paper_relations():
    h = make_hierarchy(11, paper_defaults=True, k_max=1, d=1)
    parent = BoxSpec.at_scale("B2", h, 1, [0.0])
    n = len(quasi_cover(h, 1, parent))
    assert math.floor(23 / 11 * h.N0) <= n <= 23 / 11 * h.N0 + 1


def test_quasi_cover_needs_finer_scale():
    h = make_hierarchy(10, N0=4, Ntilde0=4, k_max=1, d=1, warn=False)
    with pytest.raises(ValueError):
        quasi_cover(h, 0, BoxSpec.at_scale("B2", h, 0))


def _scaled_d1():
    h = make_hierarchy(10, N0=4, Ntilde0=4, k_max=1, d=1, warn=False)
    return h, BoxSpec.at_scale("B2", h, 1, [0.0])


def test_quasi_cover_covers_all_but_front_sliver():
    h, parent = _scaled_d1()
    children = quasi_cover(h, 1, parent)
    assert len(children) == 8
    sites = parent.sites()
    covered = np.zeros(len(sites), bool)
    for c in children:
        covered |= c.with_kind("B1tilde", h).contains(sites)
    # every site up to 12/11 L_1 - L_0 lies in a child
    front = 12 / 11 * h.L[1] - h.L[0]
    assert covered[sites[:, 0] <= front].all()
    assert uncovered_sites(h, 1, parent)[:, 0].tolist() == [41, 42, 43]


@pytest.mark.xfail(strict=True, reason="literal boxes leave the sliver (L_1, 12/11 L_1) "
                   "uncovered; see the decisions ledger")
def test_quasi_cover_exhaustive_literal_claim():
    h, parent = _scaled_d1()
    assert len(uncovered_sites(h, 1, parent)) == 0


def test_dependency_set_sites():
    h = make_hierarchy(10, N0=4, Ntilde0=4, k_max=1, d=1, warn=False)
    lo, hi = dependency_set(h, 0, [0.0]).lattice_extent()
    assert (lo[0], hi[0]) == (-9, 10)
    s0 = set(map(tuple, dependency_set(h, 0, [0.0]).sites()))
    s1 = set(map(tuple, dependency_set(h, 1, [0.0]).sites()))
    assert s0 <= s1


@pytest.mark.parametrize("d,k", [(1, 0), (1, 1), (2, 0)])
def test_disjoint_boxes_have_separated_dependency_sets(d, k):
    h = make_hierarchy(10, paper_defaults=True, k_max=1, d=d)
    sp = h.lattice_spacing(k)
    offs = [np.array(o) * sp for o in np.ndindex(*([5] * d))]
    boxes = [BoxSpec.at_scale("B2", h, k, o) for o in offs]
    D = disjointness_matrix(boxes)
    pairs = np.argwhere(np.triu(D))
    assert len(pairs)
    for a, b in pairs:
        da = dependency_set(h, k, offs[a])
        db = dependency_set(h, k, offs[b])
        assert l1_distance(da, db) >= 9 / 11 * h.L[k]


def test_strip_index_examples():
    ix = StripIndexer(Direction.axis(1), 10.0)
    assert strip_index(ix, [4]) == 0
    assert strip_index(ix, [7]) == 1
    assert strip_index(ix, [-5]) == 0
    assert strip_index(ix, [-6]) == -1


@given(st.integers(-200, 200), st.integers(-200, 200), st.sampled_from([5.0, 10.0, 7.5]))
def test_strip_membership_matches_index(x, y, w):
    ix = StripIndexer(Direction.from_vector([1.0, 0.5]), w)
    z = np.array([x, y])
    i = ix.index(z)
    proj = z @ ix.direction.ell
    assert i * w - w / 2 - 1e-9 <= proj < i * w + w / 2 + 1e-9
