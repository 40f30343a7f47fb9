"""Quenched walk engine: stop specifications, trial batches and exact exit solves.

A race runs the chain X_n under P_{x,omega} until the first of several stop
specifications triggers.  Every trial draws its steps from a private stream
keyed by (seed, trial), and annealed runs draw the environment of trial t from
a stream keyed by (env_seed, t), so results never depend on the number of
worker threads.
"""

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from . import _kernels as K
from ._rng import derive_seed
from .env import EnvironmentLaw, QuenchedEnvironment
from .errors import CensoringError, WindowUnderrunError
from .geometry import BoxSpec, Direction, StripIndexer, as_direction
from .stats import binomial_stderr, wilson_interval

DEFAULT_BUDGET = 10 ** 7
DEFAULT_CENSOR_CAP = 1e-3
DEBUG = bool(os.environ.get("RWRE_LAB_DEBUG"))

_INF = math.inf


@dataclass(frozen=True, eq=False)
class StopSpec:
    """One stopping rule.

    variant is one of HalfSpaceAbove, HalfSpaceBelow, ExitSet, EnterSet,
    LateralAbove, LateralBelow, StripVisit.  Use the module-level
    constructors rather than building instances directly.
    """

    variant: str
    direction: Direction = None
    level: float = 0.0
    region: BoxSpec = None
    axis: int = 0
    width: float = 0.0
    budget: int = DEFAULT_BUDGET

    def __post_init__(self):
        if self.budget <= 0:
            raise ValueError("budget must be positive")

    def describe(self):
        out = {"variant": self.variant}
        if self.region is not None:
            out["region"] = self.region.describe()
        else:
            out.update(level=self.level, axis=self.axis, width=self.width)
        return out


def _dir(ell, d=None):
    if isinstance(ell, Direction):
        return ell
    if np.isscalar(ell):
        return Direction.axis(d or 1)
    return Direction.from_vector(ell)


def half_space_above(ell, L, budget=DEFAULT_BUDGET):
    """T_L^ell = inf{n >= 0 : X_n . ell >= L}."""
    return StopSpec("HalfSpaceAbove", _dir(ell), float(L), budget=budget)


def half_space_below(ell, L, budget=DEFAULT_BUDGET):
    """T~_L^ell = inf{n >= 0 : X_n . ell <= L}."""
    return StopSpec("HalfSpaceBelow", _dir(ell), float(L), budget=budget)


def exit_set(box, budget=DEFAULT_BUDGET):
    """T_A: first time outside ``box``."""
    return StopSpec("ExitSet", box.direction, region=box, budget=budget)


def enter_set(box, budget=DEFAULT_BUDGET):
    """H_A: first time inside ``box``."""
    return StopSpec("EnterSet", box.direction, region=box, budget=budget)


def lateral_above(direction, i, u, budget=DEFAULT_BUDGET):
    """sigma_u^{+i}: (X_n - X_0) . R(e_i) >= u, i the 0-based frame axis."""
    return StopSpec("LateralAbove", direction, float(u), axis=int(i), budget=budget)


def lateral_below(direction, i, u, budget=DEFAULT_BUDGET):
    """sigma_u^{-i}: (X_n - X_0) . R(e_i) <= u."""
    return StopSpec("LateralBelow", direction, float(u), axis=int(i), budget=budget)


def strip_visit(direction, width, budget=DEFAULT_BUDGET):
    """First visit to the thin strip H_{I(X_0) + 1} or H_{I(X_0) - 1}."""
    return StopSpec("StripVisit", direction, width=float(width), budget=budget)


@dataclass(frozen=True)
class ExitRecord:
    which_stop: int
    exit_site: tuple
    steps: int
    censored: bool

    def to_dict(self):
        return {"which_stop": self.which_stop, "exit_site": list(self.exit_site),
                "steps": self.steps, "censored": self.censored}


@dataclass(frozen=True, eq=False)
class CompiledSpecs:
    mode: np.ndarray
    frame: np.ndarray
    anchor: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    loc: np.ndarray
    hic: np.ndarray
    relative: np.ndarray
    aux: np.ndarray
    budget: int

    def args(self):
        return (self.mode, self.frame, self.anchor, self.lo, self.hi, self.loc,
                self.hic, self.relative, self.aux)


def compile_specs(specs, start):
    """Flatten stop specs into the arrays consumed by the race kernel."""
    start = np.asarray(start, dtype=np.int64)
    d = start.size
    ns = len(specs)
    if ns == 0:
        raise ValueError("at least one stop spec is required")
    mode = np.zeros(ns, dtype=np.int64)
    frame = np.zeros((ns, d, d))
    anchor = np.zeros((ns, d))
    lo = np.full((ns, d), -_INF)
    hi = np.full((ns, d), _INF)
    loc = np.ones((ns, d), dtype=np.bool_)
    hic = np.ones((ns, d), dtype=np.bool_)
    relative = np.zeros(ns, dtype=np.bool_)
    aux = np.zeros((ns, 2))
    for s, spec in enumerate(specs):
        D = spec.direction if spec.direction is not None else Direction.axis(d)
        if D.d != d:
            raise ValueError(f"spec {s} has dimension {D.d}, walk has {d}")
        frame[s] = D.rotation.T
        v = spec.variant
        if v == "HalfSpaceAbove":
            mode[s] = K.MODE_ENTER
            lo[s, 0] = spec.level
        elif v == "HalfSpaceBelow":
            mode[s] = K.MODE_ENTER
            hi[s, 0] = spec.level
        elif v in ("ExitSet", "EnterSet"):
            box = spec.region
            mode[s] = K.MODE_EXIT if v == "ExitSet" else K.MODE_ENTER
            anchor[s] = box.anchor
            lo[s], hi[s] = box.lo, box.hi
            loc[s], hic[s] = box.lo_closed, box.hi_closed
        elif v in ("LateralAbove", "LateralBelow"):
            if not 1 <= spec.axis < d:
                raise ValueError("lateral specs need a frame axis in 1..d-1")
            mode[s] = K.MODE_ENTER
            relative[s] = True
            if v == "LateralAbove":
                lo[s, spec.axis] = spec.level
            else:
                hi[s, spec.axis] = spec.level
        elif v == "StripVisit":
            mode[s] = K.MODE_STRIP
            aux[s, 0] = spec.width
            aux[s, 1] = StripIndexer(D, spec.width).index(start)
        else:
            raise ValueError(f"unknown stop spec variant {v!r}")
    budget = min(spec.budget for spec in specs)
    return CompiledSpecs(mode, frame, anchor, lo, hi, loc, hic, relative, aux, int(budget))


def _env_args(env, d):
    """(table, win_lo, win_shape, law args, env_seed) for the kernels."""
    if isinstance(env, QuenchedEnvironment):
        table, wlo, wsh = env.kernel_args()
        return (table, wlo, wsh) + env.law.kernel_args() + (np.int64(env.seed),)
    if isinstance(env, EnvironmentLaw):
        return ((np.empty((0, 2 * d)), np.zeros(d, np.int64), np.zeros(d, np.int64))
                + env.kernel_args() + (np.int64(0),))
    raise TypeError("expected a QuenchedEnvironment or an EnvironmentLaw")


def _check_path(trace, n):
    if n > 1:
        steps = np.abs(np.diff(trace[:n], axis=0)).sum(axis=1)
        assert np.all(steps == 1), "path is not nearest-neighbour"


def run_race(env, start, specs, seed=0, trial=0, lazy=False, trace_len=0):
    """One quenched trajectory from ``start`` until the first spec triggers.

    Ties between specs triggering at the same step go to the earliest in
    ``specs``.  Without ``lazy`` a walk that reaches a site outside
    ``env.window`` raises WindowUnderrunError.  With ``trace_len`` > 0 the
    record is returned together with the first ``trace_len`` visited sites.
    """
    start = np.asarray(start, dtype=np.int64)
    d = start.size
    comp = compile_specs(specs, start)
    table, wlo, wsh, code, atoms, cum, conc, kappa, env_seed = _env_args(env, d)
    if isinstance(env, EnvironmentLaw):
        lazy = True
        env_seed = np.int64(derive_seed(seed, 1))
    w = np.empty(1, np.int64)
    p = np.empty((1, d), np.int64)
    st = np.empty(1, np.int64)
    K.race_trials(start, table, wlo, wsh, bool(lazy), code, atoms, cum, conc, kappa,
                  env_seed, False, *comp.args(), comp.budget, np.int64(seed), trial,
                  trial + 1, w, p, st)
    which, steps = int(w[0]), int(st[0])
    if which == K.WHICH_UNDERRUN:
        raise WindowUnderrunError(f"trial {trial} left the environment window after {steps} steps")
    censored = which == K.WHICH_CENSORED
    rec = ExitRecord(-1 if censored else which, tuple(int(v) for v in p[0]), steps, censored)
    n_tr = int(trace_len) or (min(steps + 1, 10 ** 6) if DEBUG else 0)
    if not n_tr:
        return rec
    trace = np.zeros((n_tr, d), dtype=np.int64)
    K.trace_trial(start, table, wlo, wsh, bool(lazy), code, atoms, cum, conc, kappa,
                  env_seed, *comp.args(), comp.budget, np.int64(seed), np.int64(trial), trace)
    trace = trace[:min(steps + 1, n_tr)]
    if DEBUG:
        _check_path(trace, len(trace))
    return (rec, trace) if trace_len else rec


@dataclass(frozen=True, eq=False)
class RaceBatch:
    """Per-trial outcomes of a batch of races."""

    which: np.ndarray
    exit_sites: np.ndarray
    steps: np.ndarray
    n_specs: int

    @property
    def trials(self):
        return self.which.size

    @property
    def censored(self):
        return int((self.which == K.WHICH_CENSORED).sum())

    def counts(self):
        return np.bincount(self.which[self.which >= 0], minlength=self.n_specs)

    def frequency(self, s, censor_cap=DEFAULT_CENSOR_CAP):
        """Estimator output for ``which_stop == s``: {estimate, stderr, trials, censored}."""
        return frequency_report(int(self.counts()[s]), self.trials, self.censored, censor_cap)

    def record(self, t):
        w = int(self.which[t])
        return ExitRecord(w, tuple(int(v) for v in self.exit_sites[t]), int(self.steps[t]),
                          w == K.WHICH_CENSORED)


def frequency_report(hits, trials, censored, censor_cap=DEFAULT_CENSOR_CAP):
    """Binomial estimate over uncensored trials; refuses beyond the censoring cap."""
    if trials and censored / trials > censor_cap:
        raise CensoringError(f"{censored}/{trials} trials censored (cap {censor_cap:.2%})")
    n = trials - censored
    p = hits / n if n else math.nan
    lo, hi = wilson_interval(hits, n)
    return {"estimate": p, "stderr": binomial_stderr(p, n), "trials": trials,
            "censored": censored, "ci": [lo, hi]}


def _chunks(n, jobs):
    # chunk boundaries depend only on n, never on jobs, so reductions over
    # chunks are identical for every degree of parallelism
    size = max(1, min(1 << 14, -(-n // 64)))
    return [(a, min(a + size, n)) for a in range(0, n, size)]


def _run_chunks(fn, n, jobs):
    parts = _chunks(n, jobs)
    if jobs is None or jobs <= 1:
        return [fn(a, b) for a, b in parts]
    with ThreadPoolExecutor(max_workers=int(jobs)) as ex:
        return list(ex.map(lambda ab: fn(*ab), parts))


def race_batch(env, start, specs, trials, seed=0, jobs=1, env_seed=None, lazy=None):
    """Run ``trials`` independent races.

    ``env`` is a QuenchedEnvironment (quenched law) or an EnvironmentLaw
    (annealed law: trial t samples its own environment on demand).
    """
    start = np.asarray(start, dtype=np.int64)
    d = start.size
    comp = compile_specs(specs, start)
    annealed = isinstance(env, EnvironmentLaw)
    table, wlo, wsh, code, atoms, cum, conc, kappa, eseed = _env_args(env, d)
    if annealed:
        eseed = np.int64(derive_seed(seed, 1) if env_seed is None else env_seed)
        lazy = True
    lazy = bool(lazy)
    which = np.empty(trials, np.int64)
    pos = np.empty((trials, d), np.int64)
    steps = np.empty(trials, np.int64)

    def work(a, b):
        return K.race_trials(start, table, wlo, wsh, lazy, code, atoms, cum, conc, kappa,
                             eseed, annealed, *comp.args(), comp.budget, np.int64(seed),
                             a, b, which[a:b], pos[a:b], steps[a:b])

    bad = [u for u in _run_chunks(work, trials, jobs) if u >= 0]
    if bad:
        raise WindowUnderrunError(f"trial {min(bad)} left the environment window "
                                  f"{getattr(getattr(env, 'window', None), 'lo', '')}")
    return RaceBatch(which, pos, steps, len(specs))


def box_exit_face(env, start, box, seed=0, trial=0, budget=DEFAULT_BUDGET, lazy=False):
    """('plus_face' | 'other_face', ExitRecord) for one run of T_box."""
    rec = run_race(env, start, [exit_set(box, budget)], seed, trial, lazy)
    if rec.censored:
        return None, rec
    label = box.classify(np.array([rec.exit_site]))[0]
    return ("plus_face" if label == 3 else "other_face"), rec


def box_exit_batch(env, start, box, trials, seed=0, jobs=1, budget=DEFAULT_BUDGET,
                   censor_cap=DEFAULT_CENSOR_CAP, env_seed=None, lazy=None):
    """Frequency of exiting ``box`` through its frontal boundary."""
    batch = race_batch(env, start, [exit_set(box, budget)], trials, seed, jobs, env_seed, lazy)
    done = batch.which >= 0
    plus = np.zeros(trials, dtype=bool)
    if done.any():
        plus[done] = box.classify(batch.exit_sites[done]) == 3
    rep = frequency_report(int(plus.sum()), trials, batch.censored, censor_cap)
    return rep, batch


def exit_probabilities_exact(env, box, max_sites=200_000):
    """P_x(X_{T_box} in the frontal boundary) for every interior site x.

    Solves the harmonic system on the interior with scipy's sparse direct
    solver.  Returns (sites, p_plus).
    """
    sites = box.sites(max_sites=max_sites)
    n = len(sites)
    if n == 0:
        return sites, np.empty(0)
    d = box.d
    index = {tuple(s): i for i, s in enumerate(sites)}
    rows, cols, vals = [], [], []
    rhs = np.zeros(n)
    for i, z in enumerate(sites):
        w = env.weights(z)
        rows.append(i)
        cols.append(i)
        vals.append(1.0)
        for j in range(d):
            for sgn, slot in ((1, 2 * j), (-1, 2 * j + 1)):
                y = z.copy()
                y[j] += sgn
                k = index.get(tuple(y))
                if k is not None:
                    rows.append(i)
                    cols.append(k)
                    vals.append(-w[slot])
                elif box.classify(y[None, :])[0] == 3:
                    rhs[i] += w[slot]
    A = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return sites, np.asarray(spsolve(A.tocsc(), rhs))


def lateral_event_indicator(trace, parent, hierarchy, k):
    """Event I_k on a recorded path: a lateral excursion of size c~ L~_{k+1}
    strictly before the path leaves ``parent`` (a scale-(k+1) B2 box)."""
    trace = np.atleast_2d(np.asarray(trace))
    d = trace.shape[1]
    if d == 1:
        return False
    u = hierarchy.c_tilde * hierarchy.Lt[k + 1]
    inside = parent.contains(trace)
    out = np.flatnonzero(~inside)
    T = out[0] if out.size else trace.shape[0]
    lat = (trace - trace[0]) @ parent.direction.rotation[:, 1:]
    hit = np.flatnonzero(np.any((lat >= u - 1e-9) | (lat <= -u + 1e-9), axis=1))
    return bool(hit.size and hit[0] < T)


def first_passage_index(trace, ell, level):
    """Replay check: first n with X_n . ell >= level, or -1."""
    proj = np.asarray(trace, dtype=float) @ np.asarray(ell, dtype=float)
    idx = np.flatnonzero(proj >= level - 1e-9)
    return int(idx[0]) if idx.size else -1


def last_visit_index(trace, ell, level):
    """Trace post-processing: last n with (X_n - X_0) . ell <= level, or -1.

    A random time rather than a stopping time, so it is only available after
    the fact.
    """
    trace = np.asarray(trace, dtype=float)
    proj = (trace - trace[0]) @ np.asarray(ell, dtype=float)
    idx = np.flatnonzero(proj <= level + 1e-9)
    return int(idx[-1]) if idx.size else -1


def write_trace_csv(path, trace):
    trace = np.asarray(trace)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step"] + [f"x_{j + 1}" for j in range(trace.shape[1])])
        for n, row in enumerate(trace):
            w.writerow([n] + [int(v) for v in row])


def fixed_horizon(env, n_steps, trials, seed=0, jobs=1, direction=None, checkpoints=None,
                  start=None, env_seed=None):
    """Final positions after ``n_steps`` and escape flags at ``checkpoints``.

    The environment is extended on demand, so the walk never underruns.
    """
    d = env.d
    start = np.zeros(d, np.int64) if start is None else np.asarray(start, np.int64)
    D = as_direction(direction, d)
    annealed = isinstance(env, EnvironmentLaw)
    table, wlo, wsh, code, atoms, cum, conc, kappa, eseed = _env_args(env, d)
    if annealed:
        eseed = np.int64(derive_seed(seed, 1) if env_seed is None else env_seed)
    cps = np.asarray([n_steps] if checkpoints is None else checkpoints, dtype=np.int64)
    if np.any(cps > n_steps) or np.any(cps < 1):
        raise ValueError("checkpoints must lie in [1, n_steps]")
    final = np.empty((trials, d), np.int64)
    esc = np.empty((trials, cps.size), np.bool_)

    def work(a, b):
        K.fixed_horizon_trials(start, table, wlo, wsh, code, atoms, cum, conc, kappa, eseed,
                               annealed, D.ell, int(n_steps), cps, np.int64(seed), a, b,
                               final[a:b], esc[a:b])

    _run_chunks(work, trials, jobs)
    return final, esc


def velocity_estimate(env, n_steps, trials, seed=0, jobs=1, direction=None, env_seed=None):
    """Sample mean of X_n / n with its standard error and 95% interval.

    With an EnvironmentLaw every trial samples a fresh environment.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    final, _ = fixed_horizon(env, n_steps, trials, seed, jobs, direction, env_seed=env_seed)
    v = final / float(n_steps)
    mean = v.mean(axis=0)
    se = v.std(axis=0, ddof=1) / math.sqrt(trials) if trials > 1 else np.zeros(v.shape[1])
    return {"velocity": mean.tolist(), "stderr": se.tolist(),
            "ci_lo": (mean - 1.96 * se).tolist(), "ci_hi": (mean + 1.96 * se).tolist(),
            "trials": trials, "n_steps": n_steps}
