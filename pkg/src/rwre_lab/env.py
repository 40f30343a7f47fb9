"""Environments on finite windows of Z^d and the i.i.d. laws that generate them."""

import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels as K
from .errors import CapacityError, QuantizationError

FORMAT_VERSION = 1
DEFAULT_MAX_BYTES = 1 << 28
SUM_TOL = 1e-12


@dataclass(frozen=True)
class EnvParams:
    d: int
    kappa: float

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"dimension must be a positive integer, got {self.d!r}")
        if not 0.0 < self.kappa <= 1.0 / (2 * self.d) + 1e-15:
            raise ValueError(
                f"kappa must lie in (0, 1/(2d)] = (0, {1 / (2 * self.d)}], got {self.kappa}")


def direction_labels(d):
    """Names of the 2d weight slots: '+e1', '-e1', '+e2', ..."""
    return [f"{s}e{j + 1}" for j in range(d) for s in "+-"]


@dataclass(frozen=True)
class TransitionVector:
    """One site's exit probabilities, slots ordered +e1, -e1, +e2, -e2, ..."""

    weights: tuple

    def __post_init__(self):
        w = tuple(float(x) for x in self.weights)
        if len(w) < 2 or len(w) % 2:
            raise ValueError("a transition vector needs 2d entries")
        object.__setattr__(self, "weights", w)

    @property
    def d(self):
        return len(self.weights) // 2

    def as_array(self):
        return np.asarray(self.weights, dtype=float)

    def validate(self, kappa):
        check_weights(np.asarray(self.weights)[None, :], kappa)
        return self


def check_weights(w, kappa, tol=SUM_TOL):
    """Raise ValueError unless every row of ``w`` lies in the kappa-simplex."""
    w = np.asarray(w, dtype=float)
    if w.ndim != 2:
        raise ValueError("weights must be a 2-d array")
    if np.any(w < kappa - 1e-15):
        raise ValueError(f"weight below ellipticity floor {kappa}: min={w.min()}")
    err = np.abs(w.sum(axis=1) - 1.0).max(initial=0.0)
    if err > tol:
        raise ValueError(f"weights do not sum to 1 (max error {err:.3e})")


@dataclass(frozen=True)
class MixingParams:
    """Constants C, g, r of the strong-mixing bound.

    C = 0 is accepted and denotes an independent field.
    """

    C: float
    g: float
    r: int = 1

    def __post_init__(self):
        if self.C < 0 or self.g <= 0 or int(self.r) != self.r or self.r < 1:
            raise ValueError(f"invalid mixing parameters {self}")


@dataclass(frozen=True)
class EnvironmentLaw:
    """Single-site law mu; environments are drawn from the product mu^{Z^d}.

    ``variant`` is one of ``"iid_continuous"`` (affine-embedded Dirichlet with
    the given concentration), ``"finite_support"`` and ``"homogeneous"``.
    """

    variant: str
    params: EnvParams
    concentration: tuple = ()
    atoms: tuple = ()
    probs: tuple = ()

    def __post_init__(self):
        d = self.params.d
        kappa = self.params.kappa
        if self.variant == "iid_continuous":
            conc = tuple(float(c) for c in (self.concentration or (1.0,) * 2 * d))
            if len(conc) != 2 * d or min(conc) <= 0:
                raise ValueError("concentration must be 2d positive numbers")
            object.__setattr__(self, "concentration", conc)
        elif self.variant in ("finite_support", "homogeneous"):
            atoms = tuple(tuple(float(x) for x in a) for a in self.atoms)
            probs = tuple(float(p) for p in (self.probs or (1.0,)))
            if self.variant == "homogeneous" and len(atoms) != 1:
                raise ValueError("a homogeneous law has exactly one atom")
            if not atoms or len(atoms) != len(probs):
                raise ValueError("atoms and probs must be non-empty and aligned")
            if any(len(a) != 2 * d for a in atoms):
                raise ValueError("every atom needs 2d weights")
            if min(probs) <= 0 or abs(sum(probs) - 1.0) > SUM_TOL:
                raise ValueError("probs must be positive and sum to 1")
            check_weights(np.asarray(atoms), kappa)
            object.__setattr__(self, "atoms", atoms)
            object.__setattr__(self, "probs", probs)
        else:
            raise ValueError(f"unknown law variant {self.variant!r}")

    @classmethod
    def iid_continuous(cls, d, kappa, concentration=None):
        return cls("iid_continuous", EnvParams(d, kappa), concentration=tuple(concentration or ()))

    @classmethod
    def finite_support(cls, d, kappa, atoms, probs):
        return cls("finite_support", EnvParams(d, kappa), atoms=tuple(map(tuple, atoms)),
                   probs=tuple(probs))

    @classmethod
    def homogeneous(cls, d, kappa, vector):
        if isinstance(vector, TransitionVector):
            vector = vector.weights
        return cls("homogeneous", EnvParams(d, kappa), atoms=(tuple(vector),), probs=(1.0,))

    @property
    def d(self):
        return self.params.d

    @property
    def kappa(self):
        return self.params.kappa

    @property
    def is_deterministic(self):
        return self.variant == "homogeneous"

    def mean_vector(self):
        if self.variant == "iid_continuous":
            a = np.asarray(self.concentration)
            return self.kappa + (1 - 2 * self.d * self.kappa) * a / a.sum()
        return np.asarray(self.probs) @ np.asarray(self.atoms)

    def to_dict(self):
        out = {"variant": self.variant, "d": self.d, "kappa": self.kappa}
        if self.variant == "iid_continuous":
            out["concentration"] = list(self.concentration)
        else:
            out["atoms"] = [list(a) for a in self.atoms]
            out["probs"] = list(self.probs)
        return out

    @classmethod
    def from_dict(cls, data):
        variant = data["variant"]
        params = EnvParams(int(data["d"]), float(data["kappa"]))
        if variant == "iid_continuous":
            return cls(variant, params, concentration=tuple(data.get("concentration") or ()))
        if variant == "homogeneous" and "vector" in data:
            return cls(variant, params, atoms=(tuple(data["vector"]),), probs=(1.0,))
        return cls(variant, params, atoms=tuple(map(tuple, data["atoms"])),
                   probs=tuple(data.get("probs") or (1.0,)))

    @property
    def law_id(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return f"{self.variant}-{hashlib.sha1(blob).hexdigest()[:12]}"

    def kernel_args(self):
        """(code, atoms, cumprobs, conc, kappa) as consumed by the numba kernels."""
        n = 2 * self.d
        if self.variant == "iid_continuous":
            return (K.LAW_DIRICHLET, np.zeros((1, n)), np.ones(1),
                    np.asarray(self.concentration, dtype=float), float(self.kappa))
        code = K.LAW_HOMOGENEOUS if self.variant == "homogeneous" else K.LAW_FINITE
        cum = np.cumsum(self.probs)
        cum[-1] = 1.0
        return (code, np.asarray(self.atoms, dtype=float), cum, np.ones(n), float(self.kappa))


def one_dim_law(up, probs=None, kappa=None):
    """Convenience constructor for d = 1: atoms (p, 1 - p) for p in ``up``.

    A single value gives a homogeneous law.  ``kappa`` defaults to the
    largest floor compatible with all atoms.
    """
    up = [float(p) for p in np.atleast_1d(up)]
    if kappa is None:
        kappa = min(min(p, 1 - p) for p in up)
    atoms = [(p, 1.0 - p) for p in up]
    if len(up) == 1:
        return EnvironmentLaw.homogeneous(1, kappa, atoms[0])
    if probs is None:
        probs = [1.0 / len(up)] * len(up)
    return EnvironmentLaw.finite_support(1, kappa, atoms, probs)


def sample_transition_vector(law, stream):
    """Draw one TransitionVector using ``stream`` (a length-1 uint64 state array).

    Use :func:`make_stream` to create a stream; it is advanced in place.
    """
    code, atoms, cum, conc, kappa = law.kernel_args()
    out = np.empty(2 * law.d)
    K.draw_weights(code, atoms, cum, conc, kappa, stream, out)
    return TransitionVector(tuple(out))


def make_stream(seed, *keys):
    from ._rng import derive_seed
    return np.array([derive_seed(seed, *keys)], dtype=np.uint64)


def sample_transition_vectors(law, n, seed):
    """n independent single-site draws as an (n, 2d) array."""
    code, atoms, cum, conc, kappa = law.kernel_args()
    out = np.empty((int(n), 2 * law.d))
    K.draw_many(code, atoms, cum, conc, kappa, np.int64(seed), int(n), out)
    return out


@dataclass(frozen=True)
class Window:
    """Axis-aligned lattice box with inclusive corners ``lo`` and ``hi``."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(int(x) for x in self.lo)
        hi = tuple(int(x) for x in self.hi)
        if len(lo) != len(hi) or not lo:
            raise ValueError("window corners must have equal, positive length")
        if any(h < l for l, h in zip(lo, hi)):
            raise ValueError(f"empty window {lo}..{hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def interval(cls, a, b):
        return cls((a,), (b,))

    @property
    def d(self):
        return len(self.lo)

    @property
    def shape(self):
        return tuple(h - l + 1 for l, h in zip(self.lo, self.hi))

    @property
    def size(self):
        return math.prod(self.shape)

    def contains(self, z):
        return all(l <= int(c) <= h for c, l, h in zip(z, self.lo, self.hi))

    def sites(self):
        axes = [np.arange(l, h + 1) for l, h in zip(self.lo, self.hi)]
        grid = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grid], axis=1)


def table_bytes(window, d):
    return window.size * 2 * d * 8


@dataclass(frozen=True, eq=False)
class QuenchedEnvironment:
    """A sampled environment omega restricted to ``window``.

    ``table`` holds one row of 2d weights per site in row-major order.  The
    values are a pure function of (law, seed, site), so ``extend`` and the
    walk kernels' on-demand draws agree with the table wherever both exist.
    """

    window: Window
    table: np.ndarray
    law: EnvironmentLaw
    seed: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.ascontiguousarray(self.table, dtype=float)
        if t.shape != (self.window.size, 2 * self.law.d):
            raise ValueError(f"table shape {t.shape} does not match window {self.window.shape}")
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    @property
    def d(self):
        return self.law.d

    @property
    def kappa(self):
        return self.law.kappa

    @property
    def law_id(self):
        return self.law.law_id

    def index(self, z):
        z = np.asarray(z, dtype=np.int64)
        off = z - np.asarray(self.window.lo)
        if np.any(off < 0) or np.any(off >= np.asarray(self.window.shape)):
            raise KeyError(f"site {tuple(z)} outside window {self.window}")
        return int(np.ravel_multi_index(tuple(off), self.window.shape))

    def weights(self, z):
        return self.table[self.index(z)]

    def __getitem__(self, z):
        return TransitionVector(tuple(self.weights(np.atleast_1d(z))))

    def up_probabilities(self):
        """omega(x, +e1) over the window (d = 1 only), left to right."""
        if self.d != 1:
            raise ValueError("up_probabilities is defined for d = 1")
        return self.table[:, 0].copy()

    def extend(self, window, max_bytes=DEFAULT_MAX_BYTES):
        return sample_environment(self.law, window, self.seed, max_bytes=max_bytes)

    def kernel_args(self):
        w = self.window
        return (self.table, np.asarray(w.lo, dtype=np.int64), np.asarray(w.shape, dtype=np.int64))


def sample_environment(law, window, seed, max_bytes=DEFAULT_MAX_BYTES):
    """Fill ``window`` with independent site draws from ``law``.

    Each site's draw comes from a sub-stream keyed by (seed, coordinates), so
    the result does not depend on the window's extent.
    """
    if not isinstance(window, Window):
        window = Window(*window)
    if window.d != law.d:
        raise ValueError(f"window dimension {window.d} != law dimension {law.d}")
    need = table_bytes(window, law.d)
    if need > max_bytes:
        raise CapacityError(f"environment window needs {need} bytes (cap {max_bytes})")
    table = np.empty((window.size, 2 * law.d))
    code, atoms, cum, conc, kappa = law.kernel_args()
    K.fill_table(code, atoms, cum, conc, kappa, np.int64(seed),
                 np.asarray(window.lo, dtype=np.int64),
                 np.asarray(window.shape, dtype=np.int64), table)
    return QuenchedEnvironment(window, table, law, int(seed))


def environment_from_table(law, window, table, seed=0):
    """Wrap an explicit weight table (e.g. a hand-built test environment)."""
    if not isinstance(window, Window):
        window = Window(*window)
    check_weights(table, law.kappa)
    return QuenchedEnvironment(window, np.asarray(table, dtype=float), law, int(seed))


def one_dim_environment(up, lo=0, kappa=None, seed=0):
    """Environment on [lo, lo + len(up) - 1] with the given omega(x, +e1)."""
    up = np.asarray(up, dtype=float)
    if kappa is None:
        kappa = float(min(up.min(), (1 - up).min()))
    law = EnvironmentLaw.finite_support(1, kappa, [(p, 1 - p) for p in np.unique(up)],
                                        [1.0 / len(np.unique(up))] * len(np.unique(up)))
    table = np.stack([up, 1.0 - up], axis=1)
    return environment_from_table(law, Window.interval(lo, lo + len(up) - 1), table, seed)


def _floor_to_grid(values, kappa, mesh, m):
    idx = np.floor((values - kappa) / mesh + 1e-9)
    return kappa + np.clip(idx, 0, m) * mesh


def quantize_vectors(w, kappa, m):
    """Floor the first 2d-1 coordinates of each row to the mesh-(1-2d kappa)/m grid.

    The last coordinate takes up the remaining mass; if rounding pushes it
    below kappa the shortfall is taken proportionally from the excess of the
    other coordinates.
    """
    if m < 2:
        raise QuantizationError(f"quantization needs m >= 2, got {m}")
    w = np.atleast_2d(np.asarray(w, dtype=float))
    n2 = w.shape[1]
    mesh = (1.0 - n2 * kappa) / m
    if mesh <= 1e-15:
        # the simplex is the single point (kappa, ..., kappa)
        return np.full_like(w, kappa)
    q = np.empty_like(w)
    q[:, :-1] = _floor_to_grid(w[:, :-1], kappa, mesh, m)
    q[:, -1] = 1.0 - q[:, :-1].sum(axis=1)
    short = kappa - q[:, -1]
    bad = short > 0
    if np.any(bad):
        excess = q[bad, :-1] - kappa
        avail = excess.sum(axis=1)
        if np.any(avail < short[bad]):
            raise QuantizationError(f"m={m} too small to respect the kappa floor")
        q[bad, :-1] -= excess * (short[bad] / avail)[:, None]
        q[bad, -1] = kappa
    return q


def quantize_law(law, m, n_samples=100_000, seed=0):
    """Finite-support approximation of ``law`` on a grid of mesh (1-2d kappa)/m.

    Finite laws are mapped atom by atom.  The continuous law is pushed
    forward through the grid map using ``n_samples`` draws; the empirical cell
    frequencies become the atom probabilities.
    """
    kappa = law.kappa
    if law.variant == "iid_continuous":
        draws = sample_transition_vectors(law, n_samples, seed)
        q = quantize_vectors(draws, kappa, m)
        atoms, counts = np.unique(np.round(q, 12), axis=0, return_inverse=False,
                                  return_counts=True)
        # recompute exact atoms from the rounded keys to keep sums exact
        atoms = quantize_vectors(atoms, kappa, m)
        probs = counts / counts.sum()
    else:
        q = quantize_vectors(np.asarray(law.atoms), kappa, m)
        keys, inverse = np.unique(np.round(q, 12), axis=0, return_inverse=True)
        atoms = np.empty_like(keys)
        probs = np.zeros(len(keys))
        for i, row in enumerate(q):
            atoms[inverse[i]] = row
            probs[inverse[i]] += law.probs[i]
    probs = probs / probs.sum()
    return EnvironmentLaw.finite_support(law.d, kappa, atoms, probs)


def mixing_correction_bound(mp, d, L_k, Ltilde_k, c_tilde):
    """Uniform bound on the mixing correction for disjoint scale-k boxes.

    exp(exp(-g (9/11) L_k) * 9 r^{2d} L_k^2 (6 c_tilde Ltilde_k)^{2(d-1)} C),
    evaluated in log space; returns inf (with a warning) when the outer
    exponential overflows.
    """
    if mp.C == 0:
        return 1.0
    log_inner = (-mp.g * (9.0 / 11.0) * L_k + math.log(9.0) + 2 * d * math.log(mp.r)
                 + 2 * math.log(L_k) + 2 * (d - 1) * math.log(6 * c_tilde * Ltilde_k)
                 + math.log(mp.C))
    if log_inner > math.log(709.0):
        warnings.warn(f"mixing correction overflows (log inner term {log_inner:.1f})",
                      RuntimeWarning, stacklevel=2)
        return math.inf
    return math.exp(math.exp(log_inner))


def save_environment(env, path):
    """Write ``env`` as JSON (``.json``) or a numpy archive (anything else)."""
    path = Path(path)
    header = {
        "format_version": FORMAT_VERSION,
        "d": env.d,
        "kappa": env.kappa,
        "law_id": env.law_id,
        "law": env.law.to_dict(),
        "seed": env.seed,
        "window": {"lo": list(env.window.lo), "hi": list(env.window.hi)},
    }
    if path.suffix == ".json":
        payload = dict(header, weights=env.table.tolist())
        path.write_text(json.dumps(payload))
    else:
        with open(path, "wb") as fh:
            np.savez(fh, header=np.array(json.dumps(header)), weights=env.table)


def load_environment(path):
    path = Path(path)
    if path.suffix == ".json":
        data = json.loads(path.read_text())
        weights = np.asarray(data.pop("weights"), dtype=float)
        header = data
    else:
        with np.load(path, allow_pickle=False) as npz:
            header = json.loads(str(npz["header"]))
            weights = npz["weights"]
    if header.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported environment format {header.get('format_version')}")
    law = EnvironmentLaw.from_dict(header["law"])
    if law.d != header["d"] or law.kappa != header["kappa"] or law.law_id != header["law_id"]:
        raise ValueError("environment header is inconsistent with its law")
    window = Window(header["window"]["lo"], header["window"]["hi"])
    return environment_from_table(law, window, weights.reshape(window.size, 2 * law.d),
                                  header["seed"])
