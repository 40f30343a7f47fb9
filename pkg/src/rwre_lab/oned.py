"""Exact one-dimensional machinery: birth-death absorption, strip ratios,
the potential f, slab exit probabilities and the finite-approximation study."""

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from . import _kernels as K
from .env import quantize_law
from .stats import linear_fit

ENUM_LIMIT = 10 ** 7


@dataclass(frozen=True, eq=False)
class BirthDeathChain:
    """Chain on [i, j] absorbed at both ends; ``alpha[m - i - 1]`` is the
    up-probability at interior site m."""

    i: int
    j: int
    alpha: np.ndarray
    kappa_eff: float = 0.0

    def __post_init__(self):
        if not self.i < self.j:
            raise ValueError(f"need i < j, got i={self.i}, j={self.j}")
        a = np.ascontiguousarray(self.alpha, dtype=float)
        if a.shape != (self.j - self.i - 1,):
            raise ValueError(f"expected {self.j - self.i - 1} up-probabilities, got {a.shape}")
        lo = max(self.kappa_eff, 0.0)
        if a.size and (np.any(a <= 0) or np.any(a >= 1) or np.any(a < lo - 1e-15)
                       or np.any(a > 1 - lo + 1e-15)):
            raise ValueError("up-probabilities must lie in [kappa_eff, 1 - kappa_eff] and (0, 1)")
        a.setflags(write=False)
        object.__setattr__(self, "alpha", a)

    @classmethod
    def constant(cls, i, j, alpha):
        return cls(i, j, np.full(j - i - 1, float(alpha)))

    @classmethod
    def from_environment(cls, env, i, j):
        """Interior up-probabilities omega(m, +e1) for i < m < j."""
        if env.d != 1:
            raise ValueError("birth-death chains come from d = 1 environments")
        if j - i > 1:
            a, b = env.index([i + 1]), env.index([j - 1])
            up = env.table[a:b + 1, 0]
        else:
            up = np.empty(0)
        return cls(int(i), int(j), up, env.kappa)

    @property
    def rho(self):
        return (1.0 - self.alpha) / self.alpha

    @property
    def sites(self):
        return np.arange(self.i, self.j + 1)


@dataclass(frozen=True, eq=False)
class AbsorptionSolution:
    """Q[m - i] = P_m(hit i before j) for m in [i, j]."""

    i: int
    j: int
    Q: np.ndarray

    def at(self, m):
        return float(self.Q[int(m) - self.i])

    def poisson_residual(self, chain):
        q = self.Q
        a = chain.alpha
        r = q[1:-1] - (a * q[2:] + (1 - a) * q[:-2])
        return float(np.abs(r).max()) if r.size else 0.0


def solve_absorption(chain):
    """Product-formula solution with the boundary-correct index range.

    Q_m = sum_{m<=n<j} pi_n / sum_{i<=n<j} pi_n with pi_n the product of rho
    over (i, n].  Products carry their binary exponent separately and the sums
    are compensated, so long drifting chains neither under- nor overflow.
    """
    n = chain.j - chain.i
    rho = np.empty(n)
    rho[0] = 1.0
    rho[1:] = chain.rho
    sm, se = K.scaled_suffix_sums(rho)
    Q = np.empty(n + 1)
    Q[:n] = np.ldexp(sm / sm[0], se - se[0])
    Q[0] = 1.0
    Q[n] = 0.0
    return AbsorptionSolution(chain.i, chain.j, Q)


def tridiagonal_absorption(chain):
    """Independent route: direct elimination of the tridiagonal Poisson system."""
    return AbsorptionSolution(chain.i, chain.j, K.thomas_absorption(chain.alpha))


def banded_absorption(chain):
    """Generic LU route through scipy's banded solver.

    Accurate only on well-conditioned chains: long stretches of backward
    drift make the system ill-conditioned and LU loses digits there.
    """
    a = chain.alpha
    n = a.size
    Q = np.empty(n + 2)
    Q[0], Q[-1] = 1.0, 0.0
    if n:
        ab = np.zeros((3, n))
        ab[0, 1:] = -a[:-1]
        ab[1, :] = 1.0
        ab[2, :-1] = -(1 - a[1:])
        rhs = np.zeros(n)
        rhs[0] = 1 - a[0]
        Q[1:-1] = solve_banded((1, 1), ab, rhs)
    return AbsorptionSolution(chain.i, chain.j, Q)


def gamblers_ruin(alpha, i, j, m):
    """Closed-form Q_m for constant up-probability ``alpha``."""
    if alpha == 0.5:
        return (j - m) / (j - i)
    r = (1 - alpha) / alpha
    a, b = m - i, j - i
    return (r ** a - r ** b) / (1 - r ** b)


def slab_barriers(L, b=1.0):
    """Absorbing sites (floor(-bL), ceil(L)) of the race {T~_{-bL} < T_L} from 0."""
    return math.floor(-b * L + 1e-12), math.ceil(L - 1e-12)


def left_exit_exact(env, i, j, start):
    """P_start(hit i before j) in a quenched d = 1 environment."""
    if start <= i:
        return 1.0
    if start >= j:
        return 0.0
    return solve_absorption(BirthDeathChain.from_environment(env, i, j)).at(start)


def slab_exit_exact(env, L, start=0, b=1.0):
    """Probability of leaving U_L = (-L, L) on the left (b = 1), exactly.

    With b != 1 this is the backtrack event {T~_{-bL} < T_L}.  The frontal
    boundary of U_L is the single site ceil(L).
    """
    i, j = slab_barriers(L, b)
    return left_exit_exact(env, i, j, start)


def rho_profile(env, w=1, index_range=None):
    """Strip ratios rho_i for a d = 1 environment.

    For w = 1 this is omega(x, -e1)/omega(x, +e1) per site.  For w > 1 sites
    are grouped into bands {x : floor(x/w + 1/2) = i}; from each band site the
    walk is run to the levels (i - 1)w and (i + 1)w and rho_i is the largest
    ratio of the lower to the upper absorption probability.
    """
    if env.d != 1:
        raise ValueError("rho_profile needs d = 1")
    lo, hi = env.window.lo[0], env.window.hi[0]
    if w == 1:
        a, b = (lo, hi) if index_range is None else index_range
        up = np.array([env.weights([x])[0] for x in range(a, b + 1)])
        return (1 - up) / up
    if index_range is None:
        a = math.ceil((lo + 1) / w) + 1
        b = math.floor((hi - 1) / w) - 1
    else:
        a, b = index_range
    out = np.empty(b - a + 1)
    for n, i in enumerate(range(a, b + 1)):
        lower, upper = (i - 1) * w, (i + 1) * w
        sol = solve_absorption(BirthDeathChain.from_environment(env, lower, upper))
        band = [x for x in range(lower + 1, upper)
                if math.floor(x / w + 0.5) == i]
        out[n] = max(sol.at(x) / (1 - sol.at(x)) for x in band)
    return out


@dataclass(frozen=True)
class Potential:
    """f(j) for j = lo .. w0 + 1 with f(w0 + 1) = 0; ``log_f`` is ln f."""

    lo: int
    w0: int
    log_f: np.ndarray

    @property
    def f(self):
        with np.errstate(over="ignore"):
            return np.exp(self.log_f)

    def at(self, j):
        if j >= self.w0 + 1:
            return 0.0
        return float(np.exp(self.log_f[j - self.lo]))

    def log_at(self, j):
        return float(self.log_f[j - self.lo])


def f_potential(rho, w0, lo=0):
    """f(j) = sum_{j<=n<=w0} prod_{n<m<=w0} 1/rho_m, computed in log space.

    ``rho[k]`` is rho at index lo + k and must cover lo .. w0.
    """
    rho = np.asarray(rho, dtype=float)
    if rho.size < w0 - lo + 1:
        raise ValueError("rho must cover indices lo..w0")
    lr = np.log(rho[: w0 - lo + 1])
    # log D_j = -sum_{j<m<=w0} ln rho_m for j = lo..w0
    logD = np.zeros(w0 - lo + 1)
    logD[:-1] = -np.cumsum(lr[::-1])[::-1][1:]
    log_f = np.empty(w0 - lo + 2)
    log_f[-1] = -np.inf
    log_f[:-1] = np.logaddexp.accumulate(logD[::-1])[::-1]
    return Potential(lo, w0, log_f)


def potential_ratio_check(rho, w0, N0, lo=None):
    """f(0)/f(-(N0-9)) next to the exact P_0(hit -(N0-9) before w0+1).

    The chain uses up-probabilities 1/(1 + rho_m); the two numbers coincide
    because f is harmonic for that chain and vanishes at w0 + 1.
    """
    left = -(N0 - 9)
    lo = left if lo is None else lo
    pot = f_potential(rho, w0, lo)
    ratio = math.exp(pot.log_at(0) - pot.log_at(left))
    rho = np.asarray(rho, dtype=float)
    alpha = 1.0 / (1.0 + rho[left + 1 - lo: w0 + 1 - lo])
    exact = solve_absorption(BirthDeathChain(left, w0 + 1, alpha)).at(0)
    return {"ratio": ratio, "exact": exact, "left": left, "w0": w0}


def _law_arrays(law):
    if law.d != 1:
        raise ValueError("one-dimensional law required")
    return law.kernel_args()


def annealed_left_exit(law, i, j, start=0, n_env=2000, seed=0, enum_limit=ENUM_LIMIT):
    """E[P_{start,omega}(hit i before j)] under ``law``.

    Exact enumeration over atom assignments when atoms^(sites) is at most
    ``enum_limit``; otherwise a mean over ``n_env`` sampled environments, each
    solved exactly.  Environment e is the one trial e of an annealed walk run
    with the same seed would see.
    """
    code, atoms, cum, conc, kappa = _law_arrays(law)
    n_int = j - i - 1
    t = start - i
    if t <= 0 or t >= j - i:
        return {"p_exit": 1.0 if t <= 0 else 0.0, "stderr": 0.0, "method": "exact", "n_env": 0}
    if law.variant != "iid_continuous":
        k = len(law.atoms)
        if k == 1 or n_int * math.log(k) <= math.log(enum_limit) + 1e-12:
            p = K.annealed_enumerate(np.asarray(atoms[:, 0], float),
                                     np.asarray(law.probs, float), n_int, t)
            return {"p_exit": float(p), "stderr": 0.0, "method": "exact", "n_env": k ** n_int}
    out = np.empty(n_env)
    K.annealed_exact_solves(code, atoms, cum, conc, kappa, np.int64(seed), i + 1,
                            n_int, t, 0, n_env, out)
    se = float(out.std(ddof=1) / math.sqrt(n_env)) if n_env > 1 else 0.0
    return {"p_exit": float(out.mean()), "stderr": se, "method": "mc", "n_env": n_env}


def annealed_slab_exit(law, L, b=1.0, start=0, **kw):
    i, j = slab_barriers(L, b)
    return annealed_left_exit(law, i, j, start, **kw)


def fit_exponential_rate(L, p):
    """c_hat from ln p = -c L + const over the points with p > 0."""
    L = np.asarray(L, dtype=float)
    p = np.asarray(p, dtype=float)
    keep = p > 0
    fit = linear_fit(L[keep], np.log(p[keep]))
    return {"c_hat": -fit.slope, "r2": fit.r2, "n_points": int(keep.sum()),
            "dropped_zero": int((~keep).sum())}


def corollary_experiment(law, m_grid, L_grid, b=1.0, n_env=2000, seed=0,
                         enum_limit=ENUM_LIMIT, quant_samples=100_000):
    """Annealed slab exit for the law and its finite approximations.

    Returns a report with one row per (m, L), the fitted exponential rate per
    m, the rate of the unquantized law and whether the rate error shrinks
    monotonically along ``m_grid``.
    """
    if law.d != 1:
        raise ValueError("corollary_experiment needs a d = 1 law")
    rows = []
    fits = {}
    laws = [("exact", law)] + [(int(m), quantize_law(law, int(m), quant_samples, seed))
                               for m in m_grid]
    for key, lw in laws:
        ps = []
        for L in L_grid:
            r = annealed_slab_exit(lw, L, b, n_env=n_env, seed=seed, enum_limit=enum_limit)
            rows.append({"m": key, "L": float(L), **r})
            ps.append(r["p_exit"])
        fits[key] = fit_exponential_rate(L_grid, ps)
    c_ref = fits["exact"]["c_hat"]
    errs = [abs(fits[int(m)]["c_hat"] - c_ref) for m in m_grid]
    monotone = all(b_ < a_ for a_, b_ in zip(errs, errs[1:]))
    return {
        "law": law.to_dict(),
        "b": b,
        "rows": rows,
        "rate_fit": {str(k): v for k, v in fits.items()},
        "rate_errors": errs,
        "monotone_error_decrease": monotone,
    }


def enumerate_sup_comparison(kappa, i, j, start):
    """Both sides of the sup-over-environments comparison on a tiny window.

    Left: the largest left-exit probability over all environments whose
    up-probabilities take the extreme values kappa or 1 - kappa.  Right: the
    simple symmetric walk's left-exit probability.  Reported, not asserted.
    """
    n_sites = j - i - 1
    best = 0.0
    for bits in range(2 ** n_sites):
        up = np.array([kappa if (bits >> s) & 1 else 1 - kappa for s in range(n_sites)])
        best = max(best, K.chain_left_prob(up, start - i))
    return {"sup_over_env": best, "symmetric_walk": gamblers_ruin(0.5, i, j, start)}
