"""numba kernels: per-site environment draws and the quenched walk engine.

Direction index convention for a site's 2d weights: slot 2j is +e_j and slot
2j+1 is -e_j.
"""

import math

import numpy as np
from numba import njit

from ._rng import hash_key, mix64, next_gamma, next_uniform, _GOLDEN

LAW_HOMOGENEOUS = 0
LAW_FINITE = 1
LAW_DIRICHLET = 2

SITE_TAG = -0x51E
TRIAL_TAG = -0x7A1
ENV_TAG = -0xE4

MODE_ENTER = 0
MODE_EXIT = 1
MODE_STRIP = 2

WHICH_CENSORED = -1
WHICH_UNDERRUN = -2

_TOL = 1e-9


@njit(cache=True, nogil=True)
def site_state(seed, coords):
    h = mix64(np.uint64(seed) + _GOLDEN)
    h = hash_key(h, SITE_TAG)
    for c in coords:
        h = hash_key(h, c)
    return h


@njit(cache=True, nogil=True)
def trial_state(seed, trial, tag):
    h = mix64(np.uint64(seed) + _GOLDEN)
    h = hash_key(h, tag)
    return hash_key(h, trial)


@njit(cache=True, nogil=True)
def draw_weights(code, atoms, cumprobs, conc, kappa, state, out):
    n = out.shape[0]
    if code == LAW_HOMOGENEOUS:
        for i in range(n):
            out[i] = atoms[0, i]
    elif code == LAW_FINITE:
        u = next_uniform(state)
        idx = 0
        while idx < cumprobs.shape[0] - 1 and u >= cumprobs[idx]:
            idx += 1
        for i in range(n):
            out[i] = atoms[idx, i]
    else:
        total = 0.0
        for i in range(n):
            out[i] = next_gamma(state, conc[i])
            total += out[i]
        scale = 1.0 - n * kappa
        for i in range(n):
            out[i] = kappa + scale * (out[i] / total)


@njit(cache=True, nogil=True)
def site_weights(code, atoms, cumprobs, conc, kappa, seed, coords, out):
    state = np.empty(1, dtype=np.uint64)
    state[0] = site_state(seed, coords)
    draw_weights(code, atoms, cumprobs, conc, kappa, state, out)


@njit(cache=True, nogil=True)
def fill_table(code, atoms, cumprobs, conc, kappa, seed, lo, shape, table):
    d = lo.shape[0]
    coords = np.empty(d, dtype=np.int64)
    n = table.shape[0]
    for idx in range(n):
        rem = idx
        for j in range(d - 1, -1, -1):
            coords[j] = lo[j] + rem % shape[j]
            rem //= shape[j]
        site_weights(code, atoms, cumprobs, conc, kappa, seed, coords, table[idx])


@njit(cache=True, nogil=True)
def draw_many(code, atoms, cumprobs, conc, kappa, seed, n, out):
    """Independent draws indexed 0..n-1 (used for law-level sampling)."""
    coords = np.zeros(1, dtype=np.int64)
    for i in range(n):
        coords[0] = i
        site_weights(code, atoms, cumprobs, conc, kappa, seed, coords, out[i])


@njit(cache=True, nogil=True)
def _race_one(start, table, win_lo, win_shape, lazy, code, atoms, cumprobs,
              conc, kappa, env_seed, mode, frame, anchor0, lo, hi, loc, hic,
              relative, aux, budget, rng, pos, trace):
    """Run one quenched trajectory until a stop spec triggers.

    Returns (which, steps); ``pos`` holds the final site.  When ``trace`` has
    rows, visited sites are written into it while room remains.  The spec
    tests and the environment lookup are written out in this one body on
    purpose: helper calls taking many arrays cost more than a whole step.
    """
    d = start.shape[0]
    ns = mode.shape[0]
    for j in range(d):
        pos[j] = start[j]
    buf = np.empty(2 * d)
    anchors = anchor0.copy()
    for s in range(ns):
        if relative[s]:
            for a in range(d):
                acc = 0.0
                for j in range(d):
                    acc += frame[s, a, j] * start[j]
                anchors[s, a] += acc
    has_table = table.shape[0] > 0
    ntrace = trace.shape[0]
    steps = 0
    while True:
        if steps < ntrace:
            for j in range(d):
                trace[steps, j] = pos[j]
        for s in range(ns):
            m = mode[s]
            hit = False
            if m == MODE_STRIP:
                # some nearest neighbour on the other side of (or on) the
                # hyperplane x.ell = (i0 +- 1) * width
                for r in range(2):
                    level = (aux[s, 1] + 2.0 * r - 1.0) * aux[s, 0]
                    t0 = -level
                    for j in range(d):
                        t0 += pos[j] * frame[s, 0, j]
                    if abs(t0) <= _TOL:
                        hit = True
                    else:
                        for j in range(d):
                            e = frame[s, 0, j]
                            if (t0 + e) * t0 <= 0.0 or (t0 - e) * t0 <= 0.0:
                                hit = True
                                break
                    if hit:
                        break
            else:
                inside = True
                for a in range(d):
                    v = -anchors[s, a]
                    for j in range(d):
                        v += frame[s, a, j] * pos[j]
                    if loc[s, a]:
                        if v < lo[s, a] - _TOL:
                            inside = False
                    elif v <= lo[s, a] + _TOL:
                        inside = False
                    if hic[s, a]:
                        if v > hi[s, a] + _TOL:
                            inside = False
                    elif v >= hi[s, a] - _TOL:
                        inside = False
                    if not inside:
                        break
                hit = inside if m == MODE_ENTER else not inside
            if hit:
                return s, steps
        if steps >= budget:
            return WHICH_CENSORED, steps
        in_win = has_table
        idx = 0
        if in_win:
            for j in range(d):
                off = pos[j] - win_lo[j]
                if off < 0 or off >= win_shape[j]:
                    in_win = False
                    break
                idx = idx * win_shape[j] + off
        if in_win:
            for i in range(2 * d):
                buf[i] = table[idx, i]
        elif lazy:
            site_weights(code, atoms, cumprobs, conc, kappa, env_seed, pos, buf)
        else:
            return WHICH_UNDERRUN, steps
        x = next_uniform(rng)
        k = 0
        acc = buf[0]
        while x >= acc and k < 2 * d - 1:
            k += 1
            acc += buf[k]
        if k % 2 == 0:
            pos[k // 2] += 1
        else:
            pos[k // 2] -= 1
        steps += 1


@njit(cache=True, nogil=True)
def race_trials(start, table, win_lo, win_shape, lazy, code, atoms, cumprobs,
                conc, kappa, env_seed, annealed, mode, frame, anchor, lo, hi,
                loc, hic, relative, aux, budget, master_seed, trial_lo,
                trial_hi, out_which, out_pos, out_steps):
    d = start.shape[0]
    rng = np.empty(1, dtype=np.uint64)
    pos = np.empty(d, dtype=np.int64)
    notrace = np.empty((0, d), dtype=np.int64)
    for t in range(trial_lo, trial_hi):
        rng[0] = trial_state(master_seed, t, TRIAL_TAG)
        seed_t = env_seed
        if annealed:
            seed_t = np.int64(trial_state(env_seed, t, ENV_TAG) >> np.uint64(1))
        which, steps = _race_one(start, table, win_lo, win_shape, lazy, code,
                                 atoms, cumprobs, conc, kappa, seed_t, mode,
                                 frame, anchor, lo, hi, loc, hic, relative, aux,
                                 budget, rng, pos, notrace)
        i = t - trial_lo
        out_which[i] = which
        out_steps[i] = steps
        for j in range(d):
            out_pos[i, j] = pos[j]
        if which == WHICH_UNDERRUN:
            return t
    return -1


@njit(cache=True, nogil=True)
def trace_trial(start, table, win_lo, win_shape, lazy, code, atoms, cumprobs,
                conc, kappa, env_seed, mode, frame, anchor, lo, hi, loc, hic,
                relative, aux, budget, master_seed, trial, trace):
    d = start.shape[0]
    rng = np.empty(1, dtype=np.uint64)
    rng[0] = trial_state(master_seed, trial, TRIAL_TAG)
    pos = np.empty(d, dtype=np.int64)
    which, steps = _race_one(start, table, win_lo, win_shape, lazy, code,
                             atoms, cumprobs, conc, kappa, env_seed, mode, frame,
                             anchor, lo, hi, loc, hic, relative, aux, budget,
                             rng, pos, trace)
    return which, steps


@njit(cache=True, nogil=True)
def fixed_horizon_trials(start, table, win_lo, win_shape, code, atoms,
                         cumprobs, conc, kappa, env_seed, annealed, ell,
                         n_steps, checkpoints, master_seed, trial_lo, trial_hi,
                         out_final, out_escape):
    """Run walks for exactly ``n_steps`` with on-demand environment.

    For each checkpoint n0 records whether min_{n0<=n<=n_steps} X_n.ell
    exceeds X_{n0//2}.ell.
    """
    d = start.shape[0]
    rng = np.empty(1, dtype=np.uint64)
    pos = np.empty(d, dtype=np.int64)
    buf = np.empty(2 * d)
    has_table = table.shape[0] > 0
    proj = np.empty(n_steps + 1)
    suffix_min = np.empty(n_steps + 1)
    for t in range(trial_lo, trial_hi):
        rng[0] = trial_state(master_seed, t, TRIAL_TAG)
        seed_t = env_seed
        if annealed:
            seed_t = np.int64(trial_state(env_seed, t, ENV_TAG) >> np.uint64(1))
        for j in range(d):
            pos[j] = start[j]
        for n in range(n_steps + 1):
            acc = 0.0
            for j in range(d):
                acc += pos[j] * ell[j]
            proj[n] = acc
            if n == n_steps:
                break
            in_win = has_table
            idx = 0
            if in_win:
                for j in range(d):
                    off = pos[j] - win_lo[j]
                    if off < 0 or off >= win_shape[j]:
                        in_win = False
                        break
                    idx = idx * win_shape[j] + off
            if in_win:
                for j in range(2 * d):
                    buf[j] = table[idx, j]
            else:
                site_weights(code, atoms, cumprobs, conc, kappa, seed_t, pos, buf)
            x = next_uniform(rng)
            k = 0
            c = buf[0]
            while x >= c and k < 2 * d - 1:
                k += 1
                c += buf[k]
            if k % 2 == 0:
                pos[k // 2] += 1
            else:
                pos[k // 2] -= 1
        suffix_min[n_steps] = proj[n_steps]
        for n in range(n_steps - 1, -1, -1):
            suffix_min[n] = min(proj[n], suffix_min[n + 1])
        i = t - trial_lo
        for j in range(d):
            out_final[i, j] = pos[j]
        for c_i in range(checkpoints.shape[0]):
            n0 = checkpoints[c_i]
            out_escape[i, c_i] = suffix_min[n0] > proj[n0 // 2]


@njit(cache=True, nogil=True)
def scaled_suffix_sums(rho):
    """Exponent-tracked products and compensated suffix sums.

    For rho[0..n-1] (rho[0] unused) define pi_0 = 1, pi_t = prod_{1<=l<=t}
    rho[l].  Returns mantissa/exponent pairs (sm, se) with
    S_t = sum_{t<=s<n} pi_s = sm[t] * 2**se[t].  Products are renormalised
    with frexp at every step so nothing under- or overflows, and the suffix
    sums carry a Kahan compensation term.
    """
    n = rho.shape[0]
    pm = np.empty(n)
    pe = np.empty(n, dtype=np.int64)
    m = 1.0
    e = 0
    pm[0] = 1.0
    pe[0] = 0
    for t in range(1, n):
        m *= rho[t]
        m, de = math.frexp(m)
        e += de
        pm[t] = m
        pe[t] = e
    sm = np.empty(n)
    se = np.empty(n, dtype=np.int64)
    s = 0.0
    comp = 0.0
    s_e = pe[n - 1]
    for t in range(n - 1, -1, -1):
        if pe[t] > s_e:
            scale = math.ldexp(1.0, s_e - pe[t])
            s *= scale
            comp *= scale
            s_e = pe[t]
            term = pm[t]
        else:
            term = math.ldexp(pm[t], pe[t] - s_e)
        y = term - comp
        tot = s + y
        comp = (tot - s) - y
        s = tot
        sm[t] = s
        se[t] = s_e
    return sm, se


@njit(cache=True, nogil=True)
def chain_left_prob(up, t):
    """P(hit i before j) from i + t for a chain with interior up-probabilities
    ``up`` (sites i+1..j-1, so j - i = len(up) + 1)."""
    n = up.shape[0] + 1
    if t <= 0:
        return 1.0
    if t >= n:
        return 0.0
    rho = np.empty(n)
    rho[0] = 1.0
    for s in range(1, n):
        rho[s] = (1.0 - up[s - 1]) / up[s - 1]
    sm, se = scaled_suffix_sums(rho)
    return math.ldexp(sm[t] / sm[0], se[t] - se[0])


@njit(cache=True, nogil=True)
def annealed_enumerate(atom_up, probs, n_int, t):
    """Exact E[Q] over all atom assignments of ``n_int`` interior sites."""
    k = atom_up.shape[0]
    digits = np.zeros(n_int, dtype=np.int64)
    up = np.empty(n_int)
    total = 0.0
    comp = 0.0
    while True:
        w = 1.0
        for s in range(n_int):
            up[s] = atom_up[digits[s]]
            w *= probs[digits[s]]
        y = w * chain_left_prob(up, t) - comp
        tot = total + y
        comp = (tot - total) - y
        total = tot
        s = 0
        while s < n_int:
            digits[s] += 1
            if digits[s] < k:
                break
            digits[s] = 0
            s += 1
        if s == n_int:
            break
    return total


@njit(cache=True, nogil=True)
def annealed_exact_solves(code, atoms, cumprobs, conc, kappa, env_seed, lo,
                          n_int, t, env_lo, env_hi, out):
    """Quenched exact left-exit probabilities for annealed environments.

    Environment e uses the same per-trial seed as trial e of an annealed
    ``race_trials`` run, so the two estimators see identical environments.
    """
    buf = np.empty(2)
    coords = np.empty(1, dtype=np.int64)
    up = np.empty(n_int)
    for e in range(env_lo, env_hi):
        seed_e = np.int64(trial_state(env_seed, e, ENV_TAG) >> np.uint64(1))
        for s in range(n_int):
            coords[0] = lo + s
            site_weights(code, atoms, cumprobs, conc, kappa, seed_e, coords, buf)
            up[s] = buf[0]
        out[e - env_lo] = chain_left_prob(up, t)


@njit(cache=True, nogil=True)
def thomas_absorption(alpha):
    """Tridiagonal elimination for Q_m = a_m Q_{m+1} + (1 - a_m) Q_{m-1},
    Q_0 = 1, Q_{n+1} = 0.

    Forward elimination writes Q_m = beta_m Q_{m+1} + gamma_m and carries
    delta_m = 1 - beta_m instead of beta_m, so every update is a ratio of
    positive sums and nothing cancels.
    """
    n = alpha.shape[0]
    beta = np.empty(n)
    gamma = np.empty(n)
    delta = 1.0
    g = 1.0
    for m in range(n):
        a = alpha[m]
        den = a + (1.0 - a) * delta
        beta[m] = a / den
        g = (1.0 - a) * g / den
        delta = (1.0 - a) * delta / den
        gamma[m] = g
    Q = np.empty(n + 2)
    Q[0] = 1.0
    Q[n + 1] = 0.0
    nxt = 0.0
    for m in range(n - 1, -1, -1):
        nxt = beta[m] * nxt + gamma[m]
        Q[m + 1] = nxt
    return Q
