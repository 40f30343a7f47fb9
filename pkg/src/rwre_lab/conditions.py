"""Estimators and decay fits for the ballisticity conditions.

Every verdict is three-valued: "yes", "no" or "indeterminate".  Threshold
conditions estimated with Monte Carlo error never collapse to a bare
boolean when the interval straddles the threshold.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from ._rng import derive_seed
from .env import Window, sample_environment
from .geometry import BoxSpec, Direction, as_direction
from .oned import annealed_left_exit, slab_barriers
from .renorm import _nonplus_exact
from .stats import linear_fit, mean_interval, wilson_interval
from .walk import (DEFAULT_BUDGET, DEFAULT_CENSOR_CAP, box_exit_batch, fixed_horizon,
                   half_space_above, half_space_below, race_batch)

YES, NO, INDETERMINATE = "yes", "no", "indeterminate"
DECAY_R2 = 0.9
TRANSIENCE_LEVEL = 1 - 1e-3
NEIGHBORHOOD_ANGLE = 0.1
EVIDENCE_NOTE = "consistency evidence, not implication proof"

VARIANTS = ("PolynomialP", "StretchT", "BoxT", "WeakW", "Transience")


def default_neighborhood(direction, angle=NEIGHBORHOOD_ANGLE):
    """ell plus its tilts by +-angle towards each lateral frame axis."""
    D = direction if isinstance(direction, Direction) else Direction.from_vector(direction)
    out = [D]
    for i in range(1, D.d):
        for s in (1.0, -1.0):
            v = math.cos(angle) * D.ell + s * math.sin(angle) * D.rotation[:, i]
            out.append(Direction.from_vector(v))
    return out


@dataclass(frozen=True, eq=False)
class ConditionSpec:
    variant: str
    direction: Direction
    b: float = 1.0
    neighborhood: tuple = None
    M: float = None
    gamma: float = None
    c: float = None
    lambda1: float = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown condition {self.variant!r}")
        D = as_direction(self.direction, len(np.atleast_1d(self.direction))
                         if not isinstance(self.direction, Direction) else self.direction.d)
        object.__setattr__(self, "direction", D)
        if self.b <= 0:
            raise ValueError("b must be positive")
        if self.gamma is not None and not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.M is not None and self.M <= 0:
            raise ValueError("M must be positive")
        nb = self.neighborhood
        if nb is None:
            nb = default_neighborhood(D)
        else:
            nb = [as_direction(v, D.d) for v in nb]
            if not any(np.allclose(v.ell, D.ell) for v in nb):
                nb = [D] + list(nb)
        object.__setattr__(self, "neighborhood", tuple(nb))


@dataclass
class DecayFit:
    L: list
    p: list
    ci_lo: list
    ci_hi: list
    one_sided: list
    method: str
    exponential: dict = field(default_factory=dict)
    stretched: dict = field(default_factory=dict)
    polynomial: dict = field(default_factory=dict)
    degenerate: bool = False
    decay_accepted: bool = False
    worst_direction: list = None

    @property
    def log_p(self):
        return [math.log(p) if p > 0 else -math.inf for p in self.p]

    def to_dict(self):
        return {"L": self.L, "p": self.p, "ci_lo": self.ci_lo, "ci_hi": self.ci_hi,
                "one_sided": self.one_sided, "method": self.method,
                "exponential": self.exponential, "stretched": self.stretched,
                "polynomial": self.polynomial, "degenerate": self.degenerate,
                "decay_accepted": self.decay_accepted,
                "worst_direction": self.worst_direction}


def fit_decay(L, p, ci_lo=None, ci_hi=None, one_sided=None, method="exact"):
    """Fit exponential, stretched-exponential and polynomial decay models.

    Only points with 0 < p < 1 that are not one-sided bounds enter the fits.
    When no point survives because every probability is 0 the curve is
    flagged degenerate and reported as super-exponential.
    """
    L = [float(x) for x in L]
    p = [float(x) for x in p]
    n = len(L)
    ci_lo = list(ci_lo) if ci_lo is not None else list(p)
    ci_hi = list(ci_hi) if ci_hi is not None else list(p)
    one_sided = list(one_sided) if one_sided is not None else [False] * n
    fit = DecayFit(L, p, ci_lo, ci_hi, one_sided, method)
    use = [i for i in range(n) if 0 < p[i] < 1 and not one_sided[i]]
    if not use:
        if all(x == 0 for x in p) or all(one_sided):
            fit.degenerate = True
            fit.exponential = {"rate": math.inf, "r2": None, "label": "super-exponential"}
            fit.stretched = {"gamma_hat": None, "rate": None, "r2": None}
            fit.polynomial = {"M_hat": None, "label": "super-polynomial"}
            fit.decay_accepted = True
        return fit
    x = np.array([L[i] for i in use])
    lp = np.array([math.log(p[i]) for i in use])
    ex = linear_fit(x, lp)
    fit.exponential = {"rate": -ex.slope, "intercept": ex.intercept, "r2": ex.r2}
    st = linear_fit(np.log(x), np.log(-lp))
    fit.stretched = {"gamma_hat": st.slope,
                     "rate": math.exp(st.intercept) if np.isfinite(st.intercept) else None,
                     "r2": st.r2}
    slopes = []
    for a, b in zip(use, use[1:]):
        slopes.append((math.log(p[b]) - math.log(p[a])) / (math.log(L[b]) - math.log(L[a])))
    if not slopes:
        fit.polynomial = {"M_hat": None, "local_slopes": [], "label": "undetermined"}
    elif len(slopes) >= 2 and all(s2 < s1 for s1, s2 in zip(slopes, slopes[1:])) \
            and slopes[-1] < 0:
        fit.polynomial = {"M_hat": None, "local_slopes": slopes, "label": "super-polynomial"}
    else:
        fit.polynomial = {"M_hat": -slopes[-1], "local_slopes": slopes, "label": "polynomial"}
    fit.decay_accepted = bool(ex.slope < 0 and ex.r2 >= DECAY_R2)
    return fit


def _one_dim_exact_curve(law, D, L_grid, b, n_env, seed):
    """Exact annealed backtrack probabilities in d = 1 (direction +-1)."""
    sgn = 1 if D.ell[0] > 0 else -1
    out = []
    for L in L_grid:
        i, j = slab_barriers(L, b)
        if sgn > 0:
            r = annealed_left_exit(law, i, j, 0, n_env=n_env, seed=seed)
        else:
            # backtrack against -e1 means reaching ceil(bL) before floor(-L)
            i2, j2 = math.floor(-L + 1e-12), math.ceil(b * L - 1e-12)
            r = annealed_left_exit(law, i2, j2, 0, n_env=n_env, seed=seed)
            r = dict(r, p_exit=1.0 - r["p_exit"])
        out.append(r)
    return out


def _mc_curve(law, D, L_grid, b, trials, seed, jobs, budget, censor_cap):
    out = []
    for n, L in enumerate(L_grid):
        specs = [half_space_below(D, -b * L, budget), half_space_above(D, L, budget)]
        batch = race_batch(law, np.zeros(D.d, np.int64), specs, trials,
                           seed=derive_seed(seed, n), jobs=jobs,
                           env_seed=derive_seed(seed, n, 1))
        rep = batch.frequency(0, censor_cap)
        out.append({"p_exit": rep["estimate"], "stderr": rep["stderr"], "method": "mc",
                    "ci": rep["ci"], "hits": int(batch.counts()[0])})
    return out


def _curve_from_rows(L_grid, rows_by_dir, dirs):
    p, lo, hi, one, worst = [], [], [], [], []
    method = "exact"
    for i in range(len(L_grid)):
        best = max(range(len(dirs)), key=lambda k: rows_by_dir[k][i]["p_exit"])
        r = rows_by_dir[best][i]
        p.append(r["p_exit"])
        worst.append(dirs[best].to_list())
        if r["method"] == "mc":
            method = "mc" if method == "exact" else method
            ci = r.get("ci")
            if ci is None:
                ci = [r["p_exit"] - 1.96 * r["stderr"], r["p_exit"] + 1.96 * r["stderr"]]
            lo.append(max(0.0, ci[0]))
            hi.append(ci[1])
            one.append(r.get("hits", 1) == 0 or r["p_exit"] == 0.0)
        else:
            lo.append(r["p_exit"])
            hi.append(r["p_exit"])
            one.append(False)
    return p, lo, hi, one, method, worst


def estimate_slab_curve(law, spec, L_grid, trials=10_000, seed=0, jobs=1,
                        budget=DEFAULT_BUDGET, censor_cap=DEFAULT_CENSOR_CAP):
    """Worst-direction curve of P_0[T~_{-bL} < T_L] over the neighborhood.

    d = 1 uses exact annealed values (enumeration, or ``trials`` sampled
    environments with exact quenched solves); d >= 2 uses annealed Monte
    Carlo with ``trials`` walks per point.
    """
    L_grid = list(L_grid)
    if any(b <= a for a, b in zip(L_grid, L_grid[1:])):
        raise ValueError("L_grid must be increasing")
    dirs = list(spec.neighborhood)
    rows = []
    for k, D in enumerate(dirs):
        s = derive_seed(seed, k)
        if law.d == 1:
            rows.append(_one_dim_exact_curve(law, D, L_grid, spec.b, trials, s))
        else:
            rows.append(_mc_curve(law, D, L_grid, spec.b, trials, s, jobs, budget, censor_cap))
    p, lo, hi, one, method, worst = _curve_from_rows(L_grid, rows, dirs)
    fit = fit_decay(L_grid, p, lo, hi, one, method)
    fit.worst_direction = worst
    return fit


def estimate_condition_boxT(law, gamma, L_grid, trials=10_000, seed=0, jobs=1,
                            direction=None, budget=DEFAULT_BUDGET,
                            censor_cap=DEFAULT_CENSOR_CAP, max_L=200):
    """Non-frontal exit probability from B_{0,L} across ``L_grid``.

    In d = 1 the box is the slab (-L, L) and the computation is the exact
    annealed one used by ``estimate_slab_curve`` with b = 1 and the same
    seed, so the two curves coincide point for point.
    """
    d = law.d
    D = as_direction(direction, d)
    L_grid = list(L_grid)
    if d >= 2 and max(L_grid) > max_L:
        from .errors import CapacityError
        raise CapacityError(f"B_0,L with L = {max(L_grid)} exceeds the desk cap {max_L}")
    if d == 1:
        s = derive_seed(seed, 0)
        rows = []
        for L in L_grid:
            box = BoxSpec.b0(L, 1, D)
            a = box.anchor[0] + box.lo[0]
            b = box.anchor[0] + box.hi[0]
            i, j = math.floor(a + 1e-12), math.ceil(b - 1e-12)
            if D.ell[0] > 0:
                rows.append(annealed_left_exit(law, i, j, 0, n_env=trials, seed=s))
            else:
                r = annealed_left_exit(law, i, j, 0, n_env=trials, seed=s)
                rows.append(dict(r, p_exit=1.0 - r["p_exit"]))
        p, lo, hi, one, method, worst = _curve_from_rows(L_grid, [rows], [D])
    else:
        p, lo, hi, one = [], [], [], []
        method = "mc"
        for n, L in enumerate(L_grid):
            box = BoxSpec.b0(L, d, D)
            rep, batch = box_exit_batch(law, np.zeros(d, np.int64), box, trials,
                                        seed=derive_seed(seed, n), jobs=jobs, budget=budget,
                                        censor_cap=censor_cap,
                                        env_seed=derive_seed(seed, n, 1))
            q = 1.0 - rep["estimate"]
            p.append(q)
            lo.append(1.0 - rep["ci"][1])
            hi.append(1.0 - rep["ci"][0])
            one.append(q == 0.0)
        worst = [D.to_list()] * len(L_grid)
    fit = fit_decay(L_grid, p, lo, hi, one, method)
    fit.worst_direction = worst
    fit.polynomial["gamma_target"] = gamma
    return fit


def estimate_condition_W(law, c, M, lambda1, n_env=200, seed=0, direction=None, z=1.96):
    """Annealed mean of the quenched worst non-frontal exit from B_2(c, M).

    Each sampled environment is solved exactly.  The verdict compares the
    confidence interval of the mean with lambda1.
    """
    d = law.d
    D = as_direction(direction, d)
    side = M > 1.0 / lambda1
    if lambda1 >= 1:
        return {"value": None, "satisfied": YES, "degenerate": True, "side_condition": side,
                "M": M, "c": c, "lambda1": lambda1}
    box = BoxSpec.weak("B2", c, M, d, D)
    lo, hi = box.bounding_box(pad=1)
    vals = np.empty(n_env)
    for e in range(n_env):
        env = sample_environment(law, Window(lo, hi), derive_seed(seed, e))
        _, q = _nonplus_exact(env, box)
        vals[e] = q.max()
    m, se, clo, chi = mean_interval(vals, z)
    if chi < lambda1:
        verdict = YES
    elif clo >= lambda1:
        verdict = NO
    else:
        verdict = INDETERMINATE
    return {"value": m, "stderr": se, "ci": [clo, chi], "satisfied": verdict,
            "degenerate": False, "side_condition": side, "M": M, "c": c,
            "lambda1": lambda1, "n_env": n_env}


def transience_probe(law, direction=None, n_grid=(1000, 2000, 4000), trials=2000, seed=0,
                     jobs=1, level=TRANSIENCE_LEVEL):
    """Escape fractions P[min_{n0<=n<=H} X_n.ell > X_{n0/2}.ell] and the velocity.

    The horizon H is twice the largest checkpoint.  Supported when the
    escape fraction at the largest checkpoint exceeds ``level``.  Not
    supported when its upper Wilson bound is below ``level`` and the velocity
    interval does not lie above 0; inconclusive otherwise.
    """
    d = law.d
    D = as_direction(direction, d)
    n_grid = sorted(int(n) for n in n_grid)
    H = 2 * n_grid[-1]
    final, esc = fixed_horizon(law, H, trials, seed, jobs, D, checkpoints=n_grid)
    frac = esc.mean(axis=0)
    k = int(esc[:, -1].sum())
    lo, hi = wilson_interval(k, trials)
    v = (final @ D.ell) / H
    vm, vse, vlo, vhi = mean_interval(v)
    if frac[-1] > level:
        verdict = YES
    elif hi < level and vlo <= 0:
        # no detectable drift along ell and escape clearly short of the level
        verdict = NO
    else:
        verdict = INDETERMINATE
    label = {YES: "supported", NO: "not supported", INDETERMINATE: "inconclusive"}[verdict]
    return {"n_grid": n_grid, "escape_fraction": frac.tolist(), "ci_last": [lo, hi],
            "verdict": verdict, "label": label, "threshold": level,
            "velocity": {"mean": vm, "stderr": vse, "ci": [vlo, vhi], "n_steps": H}}


def decay_verdict(fit, gamma=None, M=None):
    """yes / no / indeterminate for a decay condition from its fit."""
    if fit.degenerate:
        return YES
    ex = fit.exponential
    if fit.decay_accepted:
        if gamma is not None:
            g = fit.stretched.get("gamma_hat")
            if g is None or g < gamma - 0.1:
                return INDETERMINATE
        if M is not None and fit.polynomial.get("label") != "super-polynomial":
            mh = fit.polynomial.get("M_hat")
            if mh is None or mh < M:
                return INDETERMINATE
        return YES
    if not ex or ex.get("rate", 0) <= 0 or (ex.get("r2") or 0) < 0.5:
        return NO
    return INDETERMINATE


def hierarchy_report(law, config):
    """Verdict table for one law across all conditions.

    ``config`` keys: direction, b, L_grid, trials, seed, gamma, M, c, M_W,
    lambda1, n_env, n_grid, walk_trials, jobs.
    """
    cfg = dict(config)
    d = law.d
    D = as_direction(cfg.get("direction"), d)
    seed = int(cfg.get("seed", 0))
    jobs = int(cfg.get("jobs", 1))
    gamma = float(cfg.get("gamma", 0.5))
    L_grid = cfg.get("L_grid", [5, 10, 15, 20, 25])
    trials = int(cfg.get("trials", 2000))
    spec = ConditionSpec("StretchT", D, b=float(cfg.get("b", 1.0)), gamma=gamma)
    slab = estimate_slab_curve(law, spec, L_grid, trials, derive_seed(seed, 1), jobs)
    boxT = estimate_condition_boxT(law, gamma, L_grid, trials, derive_seed(seed, 2), jobs, D)
    W = estimate_condition_W(law, float(cfg.get("c", 1.0)), float(cfg.get("M_W", 30)),
                             float(cfg.get("lambda1", 0.04)), int(cfg.get("n_env", 100)),
                             derive_seed(seed, 3), D)
    tr = transience_probe(law, D, cfg.get("n_grid", (500, 1000, 2000)),
                          int(cfg.get("walk_trials", 1000)), derive_seed(seed, 4), jobs)
    M = float(cfg.get("M", 2.0))
    table = {
        "WeakW": W["satisfied"],
        "PolynomialP": decay_verdict(slab, M=M),
        "StretchT": decay_verdict(slab, gamma=gamma),
        "BoxT": decay_verdict(boxT, gamma=gamma),
        "Transience": tr["verdict"],
    }
    return {"law": law.to_dict(), "verdicts": table, "note": EVIDENCE_NOTE,
            "details": {"slab": slab.to_dict(), "boxT": boxT.to_dict(), "W": W,
                        "transience": tr}}


def write_curve_csv(path, fit):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["L", "p", "ci_lo", "ci_hi", "one_sided"])
        for row in zip(fit.L, fit.p, fit.ci_lo, fit.ci_hi, fit.one_sided):
            w.writerow(row)
