"""Directions, the scale hierarchy, box families and strips.

Boxes are rectangles in the frame of a direction ell: a lattice point z
belongs to the box anchored at x iff the frame coordinates u = R^T z - x fall
in the rectangle, with each face open or closed as in the box's definition.
"""

import math
import warnings
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

_TOL = 1e-9
TWELVE_ELEVENTHS = 12.0 / 11.0


@dataclass(frozen=True, eq=False)
class Direction:
    ell: np.ndarray
    rotation: np.ndarray

    @classmethod
    def from_vector(cls, v):
        v = np.asarray(v, dtype=float).ravel()
        n = np.linalg.norm(v)
        if n == 0:
            raise ValueError("direction must be non-zero")
        ell = v / n
        d = ell.size
        tail = float(ell[1:] @ ell[1:])
        w = -ell.copy()
        # 1 - ell_1 without cancellation when ell is close to e1
        w[0] = tail / (1.0 + ell[0]) if ell[0] > 0 else 1.0 - ell[0]
        if w @ w == 0.0:
            R = np.eye(d)
        else:
            # Householder reflection swapping e1 and ell
            R = np.eye(d) - 2.0 * np.outer(w, w) / (w @ w)
        ell.setflags(write=False)
        R.setflags(write=False)
        return cls(ell, R)

    @classmethod
    def axis(cls, d, i=0):
        v = np.zeros(d)
        v[i] = 1.0
        return cls.from_vector(v)

    @property
    def d(self):
        return self.ell.size

    def lateral(self, i):
        """R(e_i) for i in 1..d-1 (0-based lateral axis index i)."""
        return self.rotation[:, i]

    def frame(self, z):
        """Frame coordinates R^T z of one point or an (n, d) array of points."""
        return np.asarray(z, dtype=float) @ self.rotation

    def check(self):
        R = self.rotation
        assert abs(np.linalg.norm(self.ell) - 1.0) <= 1e-12
        assert np.allclose(R.T @ R, np.eye(self.d), atol=1e-10)
        assert np.allclose(R[:, 0], self.ell, atol=1e-10)
        return True

    def to_list(self):
        return [float(x) for x in self.ell]


def as_direction(direction, d):
    if direction is None:
        return Direction.axis(d)
    if isinstance(direction, Direction):
        return direction
    return Direction.from_vector(direction)


@dataclass(frozen=True, eq=False)
class ScaleHierarchy:
    """L_k = N0^k L0 and Ltilde_k = Ntilde0^k L0 with partial sums A_k, Atilde_k."""

    L0: float
    N0: int
    Ntilde0: int
    c_tilde: float
    k_max: int
    d: int
    L: np.ndarray
    Lt: np.ndarray
    A: np.ndarray
    At: np.ndarray

    @property
    def separation_violations(self):
        """Scales k where A_{k-1} <= L_k/11 or Atilde_{k-1} <= Ltilde_k/11 fails."""
        bad = []
        for k in range(1, self.k_max + 1):
            if self.A[k - 1] > self.L[k] / 11 * (1 + 1e-12):
                bad.append((k, "A", float(self.A[k - 1]), float(self.L[k] / 11)))
            if self.At[k - 1] > self.Lt[k] / 11 * (1 + 1e-12):
                bad.append((k, "Atilde", float(self.At[k - 1]), float(self.Lt[k] / 11)))
        return bad

    def L_exact(self, k):
        return Fraction(self.L0) * self.N0 ** k

    def Lt_exact(self, k):
        return Fraction(self.L0) * self.Ntilde0 ** k

    def lattice_spacing(self, k):
        """Spacing of the scale-k lattice along each frame axis."""
        return np.array([self.L[k]] + [3 * self.c_tilde * self.Lt[k]] * (self.d - 1))

    def to_dict(self):
        return {"L0": self.L0, "N0": self.N0, "Ntilde0": self.Ntilde0,
                "c_tilde": self.c_tilde, "k_max": self.k_max, "d": self.d}


def paper_N0(d):
    return 1100 * d ** 3


def paper_Ntilde0(d, N0=None):
    N0 = paper_N0(d) if N0 is None else N0
    return 11 * d ** 3 * N0 ** 2


def make_hierarchy(L0, N0=None, Ntilde0=None, c_tilde=1.0, k_max=3, d=1,
                   paper_defaults=False, warn=True):
    """Build the scale hierarchy.

    With ``paper_defaults`` N0 = 1100 d^3 and Ntilde0 = 11 d^3 N0^2 unless
    given explicitly.  Scaled-down overrides are allowed; when they break the
    1/11 separation relations a RuntimeWarning lists the offending scales.
    """
    if paper_defaults:
        N0 = paper_N0(d) if N0 is None else N0
        Ntilde0 = paper_Ntilde0(d, N0) if Ntilde0 is None else Ntilde0
    if N0 is None or Ntilde0 is None:
        raise ValueError("N0 and Ntilde0 are required unless paper_defaults=True")
    if not L0 > 3 * math.sqrt(d):
        raise ValueError(f"L0 must exceed 3 sqrt(d) = {3 * math.sqrt(d):.4f}, got {L0}")
    if int(N0) != N0 or int(Ntilde0) != Ntilde0 or N0 < 2 or Ntilde0 < 2:
        raise ValueError("N0 and Ntilde0 must be integers >= 2")
    if c_tilde <= 0 or k_max < 0:
        raise ValueError("c_tilde must be positive and k_max non-negative")
    N0, Ntilde0 = int(N0), int(Ntilde0)
    if math.log10(L0) + k_max * math.log10(max(N0, Ntilde0)) > 300:
        raise OverflowError(f"L_k overflows double precision at k_max={k_max}")
    ks = np.arange(k_max + 1)
    L = L0 * np.power(float(N0), ks)
    Lt = L0 * np.power(float(Ntilde0), ks)
    h = ScaleHierarchy(float(L0), N0, Ntilde0, float(c_tilde), int(k_max), int(d),
                       L, Lt, np.cumsum(L), np.cumsum(Lt))
    for arr in (h.L, h.Lt, h.A, h.At):
        arr.setflags(write=False)
    if warn and h.separation_violations:
        warnings.warn("scale hierarchy violates the 1/11 separation relations at "
                      f"{h.separation_violations}", RuntimeWarning, stacklevel=2)
    return h


BOX_KINDS = ("B1tilde", "B2", "B1dot", "B0L", "SlabU", "Dep")


@dataclass(frozen=True, eq=False)
class BoxSpec:
    """A rectangle in the frame of ``direction``, anchored at lattice point ``anchor``.

    ``lo``/``hi`` are offsets from the anchor along the frame axes and the
    ``*_closed`` flags say which faces belong to the box.  ``plus_level`` is
    the frame-axis-1 offset at or beyond which a boundary site is frontal.
    """

    kind: str
    anchor: np.ndarray
    direction: Direction
    lo: np.ndarray
    hi: np.ndarray
    lo_closed: np.ndarray
    hi_closed: np.ndarray
    plus_level: float
    scale: int = None

    @property
    def d(self):
        return self.anchor.size

    # constructors -----------------------------------------------------
    @classmethod
    def _make(cls, kind, anchor, direction, lo, hi, closed, plus_level, scale=None):
        d = len(lo)
        anchor = np.zeros(d) if anchor is None else np.asarray(anchor, dtype=float).ravel()
        direction = as_direction(direction, d)
        if anchor.size != d or direction.d != d:
            raise ValueError("anchor, direction and box dimension disagree")
        flags = np.full(d, bool(closed))
        return cls(kind, anchor, direction, np.asarray(lo, float), np.asarray(hi, float),
                   flags, flags.copy(), float(plus_level), scale)

    @classmethod
    def generic(cls, kind, L, Lt, c, d, anchor=None, direction=None, scale=None):
        """Scale-free boxes with frontal length L and lateral length Lt."""
        lat = d - 1
        if kind == "B1tilde":
            return cls._make(kind, anchor, direction, [0.0] + [0.0] * lat,
                             [L] + [3 * c * Lt] * lat, True, L, scale)
        if kind == "B2":
            return cls._make(kind, anchor, direction, [-L] + [-c * Lt] * lat,
                             [TWELVE_ELEVENTHS * L] + [4 * c * Lt] * lat, False,
                             TWELVE_ELEVENTHS * L, scale)
        if kind == "B1dot":
            return cls._make(kind, anchor, direction, [0.0] + [0.0] * lat,
                             [L] + [3 * c * Lt] * lat, False, L, scale)
        raise ValueError(f"unknown scale box kind {kind!r}")

    @classmethod
    def at_scale(cls, kind, hierarchy, k, anchor=None, direction=None):
        h = hierarchy
        return cls.generic(kind, h.L[k], h.Lt[k], h.c_tilde, h.d, anchor, direction, scale=k)

    @classmethod
    def weak(cls, kind, c, M, d, direction=None):
        """Boxes of the weak seed condition: frontal and lateral length M."""
        return cls.generic(kind, M, M, c, d, None, direction)

    @classmethod
    def b0(cls, L, d, direction=None):
        """(-L, L) x (-2L^3, 2L^3)^{d-1}, frontal face at L."""
        lat = d - 1
        return cls._make("B0L", None, direction, [-L] + [-2 * L ** 3] * lat,
                         [L] + [2 * L ** 3] * lat, False, L)

    @classmethod
    def slab(cls, L):
        """U_L = {x in Z : |x| < L}; frontal site +L."""
        return cls._make("SlabU", None, None, [-L], [L], False, L)

    @classmethod
    def dependency(cls, hierarchy, k, anchor=None, direction=None):
        h = hierarchy
        lat = h.d - 1
        ct = h.c_tilde
        return cls._make("Dep", anchor, direction,
                         [-h.A[k]] + [-ct * h.At[k]] * lat,
                         [h.L[k] + h.A[k] / 11] + [3 * ct * h.Lt[k] + ct * h.At[k]] * lat,
                         False, h.L[k] + h.A[k] / 11, scale=k)

    def with_kind(self, kind, hierarchy):
        return BoxSpec.at_scale(kind, hierarchy, self.scale, self.anchor, self.direction)

    # membership -------------------------------------------------------
    def offsets(self, z):
        return self.direction.frame(z) - self.anchor

    def contains(self, z):
        """Boolean membership of a point or an (n, d) array of points."""
        u = self.offsets(np.atleast_2d(z))
        ok = np.ones(u.shape[0], dtype=bool)
        for j in range(self.d):
            v = u[:, j]
            if self.lo_closed[j]:
                ok &= v >= self.lo[j] - _TOL
            else:
                ok &= v > self.lo[j] + _TOL
            if self.hi_closed[j]:
                ok &= v <= self.hi[j] + _TOL
            else:
                ok &= v < self.hi[j] - _TOL
        return ok if np.ndim(z) == 2 else bool(ok[0])

    def classify(self, z):
        """Array of labels 0 interior, 1 exterior, 2 boundary, 3 boundary_plus."""
        z = np.atleast_2d(np.asarray(z, dtype=np.int64))
        inside = self.contains(z)
        near = np.zeros(len(z), dtype=bool)
        for j in range(self.d):
            for s in (1, -1):
                zz = z.copy()
                zz[:, j] += s
                near |= self.contains(zz)
        out = np.where(inside, 0, np.where(near, 2, 1))
        frontal = self.offsets(z)[:, 0] >= self.plus_level - _TOL
        out[(out == 2) & frontal] = 3
        return out

    def membership(self, z):
        """'interior', 'exterior', 'boundary' or 'boundary_plus' for one site."""
        return ("interior", "exterior", "boundary", "boundary_plus")[int(self.classify(z)[0])]

    # enumeration ------------------------------------------------------
    def bounding_box(self, pad=0):
        if not (np.all(np.isfinite(self.lo)) and np.all(np.isfinite(self.hi))):
            raise ValueError("unbounded box")
        corners = np.array(np.meshgrid(*[[a, b] for a, b in zip(self.lo, self.hi)],
                                       indexing="ij")).reshape(self.d, -1).T
        pts = (corners + self.anchor) @ self.direction.rotation.T
        lo = np.floor(pts.min(axis=0) - _TOL).astype(np.int64) - pad
        hi = np.ceil(pts.max(axis=0) + _TOL).astype(np.int64) + pad
        return lo, hi

    def _candidates(self, pad, max_sites):
        lo, hi = self.bounding_box(pad)
        n = int(np.prod(hi - lo + 1))
        if n > max_sites:
            from .errors import CapacityError
            raise CapacityError(f"box enumeration needs {n} candidate sites (cap {max_sites})")
        axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
        grid = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grid], axis=1)

    def sites(self, max_sites=10_000_000):
        """Interior lattice sites in lexicographic order."""
        cand = self._candidates(0, max_sites)
        return cand[self.contains(cand)]

    def boundary_sites(self, max_sites=10_000_000):
        """(sites, plus_flags) of the outer vertex boundary."""
        cand = self._candidates(1, max_sites)
        lab = self.classify(cand)
        keep = lab >= 2
        return cand[keep], lab[keep] == 3

    def contains_box(self, other):
        """Continuous containment of ``other`` in this box (same direction)."""
        a_lo = other.anchor + other.lo - self.anchor
        a_hi = other.anchor + other.hi - self.anchor
        return bool(np.all(a_lo >= self.lo - _TOL) and np.all(a_hi <= self.hi + _TOL))

    def intersects(self, other):
        """Continuous open-box intersection test (same direction)."""
        a_lo = self.anchor + self.lo
        a_hi = self.anchor + self.hi
        b_lo = other.anchor + other.lo
        b_hi = other.anchor + other.hi
        return bool(np.all(np.minimum(a_hi, b_hi) - np.maximum(a_lo, b_lo) > _TOL))

    def lattice_extent(self):
        """Integer (min, max) per axis of the interior; axis-aligned ell = e1 only."""
        if not np.allclose(self.direction.rotation, np.eye(self.d)):
            raise ValueError("lattice_extent needs the axis direction e1")
        lo = np.empty(self.d, dtype=np.int64)
        hi = np.empty(self.d, dtype=np.int64)
        for j in range(self.d):
            a = self.anchor[j] + self.lo[j]
            b = self.anchor[j] + self.hi[j]
            lo[j] = math.ceil(a - _TOL) if self.lo_closed[j] else math.floor(a + _TOL) + 1
            hi[j] = math.floor(b + _TOL) if self.hi_closed[j] else math.ceil(b - _TOL) - 1
        return lo, hi

    def describe(self):
        return {"kind": self.kind, "anchor": self.anchor.tolist(), "lo": self.lo.tolist(),
                "hi": self.hi.tolist(), "scale": self.scale,
                "direction": self.direction.to_list()}


def l1_distance(box_a, box_b):
    """l1 distance between the lattice point sets of two axis-aligned boxes."""
    alo, ahi = box_a.lattice_extent()
    blo, bhi = box_b.lattice_extent()
    gap = np.maximum(0, np.maximum(blo - ahi, alo - bhi))
    return int(gap.sum())


def lattice_points(hierarchy, k, region):
    """Points of L_k Z x (3 c_tilde Ltilde_k Z)^{d-1} in ``region``.

    ``region`` is a pair of inclusive corner sequences (lo, hi).  The result
    is an (n, d) array in lexicographic order.
    """
    lo, hi = (np.asarray(c, dtype=float).ravel() for c in region)
    spacing = hierarchy.lattice_spacing(k)
    axes = []
    for a, b, s in zip(lo, hi, spacing):
        if b < a:
            return np.empty((0, hierarchy.d))
        i0 = math.ceil(a / s - _TOL)
        i1 = math.floor(b / s + _TOL)
        axes.append(np.arange(i0, i1 + 1) * s)
    if any(len(ax) == 0 for ax in axes):
        return np.empty((0, hierarchy.d))
    grid = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grid], axis=1)


def quasi_cover(hierarchy, k, parent):
    """Scale-(k-1) B2 boxes whose dotted box lies inside the scale-k ``parent``.

    Anchors are enumerated lexicographically.  Containment is decided on the
    continuous rectangles.
    """
    if k < 1:
        raise ValueError("quasi_cover needs k >= 1 (no finer scale below 0)")
    if parent.kind != "B2":
        raise ValueError("the parent must be a B2 box")
    h = hierarchy
    lat = h.d - 1
    ct = h.c_tilde
    span_lo = parent.anchor + np.array([-h.L[k]] + [-ct * h.Lt[k]] * lat)
    span_hi = parent.anchor + np.array([TWELVE_ELEVENTHS * h.L[k] - h.L[k - 1]]
                                       + [4 * ct * h.Lt[k] - 3 * ct * h.Lt[k - 1]] * lat)
    anchors = lattice_points(h, k - 1, (span_lo, span_hi))
    out = []
    for y in anchors:
        dot = BoxSpec.at_scale("B1dot", h, k - 1, y, parent.direction)
        if parent.contains_box(dot):
            out.append(BoxSpec.at_scale("B2", h, k - 1, y, parent.direction))
    return out


def uncovered_sites(hierarchy, k, parent):
    """Parent sites that lie in no child B1tilde of the quasi-cover."""
    sites = parent.sites()
    covered = np.zeros(len(sites), dtype=bool)
    for child in quasi_cover(hierarchy, k, parent):
        covered |= child.with_kind("B1tilde", hierarchy).contains(sites)
    return sites[~covered]


def dependency_set(hierarchy, k, x, direction=None):
    return BoxSpec.dependency(hierarchy, k, x, direction)


def disjointness_matrix(children):
    n = len(children)
    D = np.zeros((n, n), dtype=bool)
    for i in range(n):
        for j in range(i + 1, n):
            D[i, j] = D[j, i] = not children[i].intersects(children[j])
    return D


@dataclass(frozen=True, eq=False)
class StripIndexer:
    """Bands of width L_k along ell: I(z) = i on z.ell in [iL - L/2, iL + L/2)."""

    direction: Direction
    width: float
    reference: np.ndarray = None

    def index(self, z):
        proj = np.asarray(z, dtype=float) @ self.direction.ell
        out = np.floor(proj / self.width + 0.5 + _TOL).astype(np.int64)
        return out if out.ndim else int(out)

    def in_strip(self, z, i):
        """Membership in the thin strip H_i around the hyperplane z.ell = i L."""
        z = np.atleast_2d(np.asarray(z, dtype=float))
        s = z @ self.direction.ell - i * self.width
        hit = np.abs(s) <= _TOL
        for j in range(self.direction.d):
            for sgn in (1, -1):
                hit |= (s + sgn * self.direction.ell[j]) * s <= 0
        return hit if len(hit) > 1 else bool(hit[0])

    def in_truncated_strip(self, z, i, half_width):
        """H_i cut to |(z - reference).R(e_j)| < half_width for lateral j."""
        z = np.atleast_2d(np.asarray(z, dtype=float))
        ok = np.atleast_1d(self.in_strip(z, i))
        ref = np.zeros(self.direction.d) if self.reference is None else self.reference
        lat = (z - ref) @ self.direction.rotation[:, 1:]
        ok &= np.all(np.abs(lat) < half_width - _TOL, axis=1)
        return ok if len(ok) > 1 else bool(ok[0])


def strip_index(indexer, z):
    return indexer.index(z)
