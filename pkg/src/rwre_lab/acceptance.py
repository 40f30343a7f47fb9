"""Pinned reproduction checks A1 to A9.

Each ``check_A*`` runs a fixed configuration and returns a dict with the
measured values, the expected values, the runtime and a ``passed`` flag
that includes the runtime limit.
"""

import json
import math
import time
from fractions import Fraction

import numpy as np

from .conditions import (ConditionSpec, estimate_condition_boxT, estimate_condition_W,
                         estimate_slab_curve, transience_probe)
from .env import EnvironmentLaw, MixingParams, Window, one_dim_law, sample_environment
from .geometry import BoxSpec, make_hierarchy, quasi_cover
from .oned import (BirthDeathChain, corollary_experiment, slab_exit_exact, solve_absorption,
                   tridiagonal_absorption)
from .renorm import (classify_recursive, compute_constants, lambda2_exact, null_model_cascade,
                     quenched_ladder_ratio)
from .walk import half_space_above, half_space_below, race_batch

LN9 = math.log(9.0)


def _result(cid, ok, limit, t0, measured, expected):
    runtime = time.perf_counter() - t0
    return {"id": cid, "passed": bool(ok and runtime < limit), "values_ok": bool(ok),
            "runtime_s": runtime, "runtime_limit_s": limit,
            "measured": measured, "expected": expected}


def check_A1(n_chains=1000, seed=1):
    """Product formula vs tridiagonal elimination, plus the ruin value 31/1023."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_chains):
        n = int(rng.integers(1, 200))
        kappa = float(rng.uniform(0.01, 0.4))
        alpha = rng.uniform(kappa, 1 - kappa, size=n)
        ch = BirthDeathChain(0, n + 1, alpha, kappa)
        worst = max(worst, float(np.max(np.abs(solve_absorption(ch).Q
                                               - tridiagonal_absorption(ch).Q))))
    q5 = solve_absorption(BirthDeathChain.constant(0, 10, 2 / 3)).at(5)
    err = abs(q5 - 31 / 1023)
    return _result("A1", worst <= 1e-12 and err <= 1e-12, 10.0, t0,
                   {"max_discrepancy": worst, "Q5": q5, "Q5_error": err},
                   {"max_discrepancy": "<= 1e-12", "Q5": 31 / 1023})


A2_LAW = EnvironmentLaw.iid_continuous(1, 0.1, (2.0, 1.0))


def check_A2(n_envs=50, trials=100_000, L=30, seed=2, jobs=1):
    """Quenched race frequencies vs exact slab exit probabilities.

    The start is the site of (-L, L) whose exact exit probability is closest
    to 1/2, so the binomial check is informative for every environment.
    """
    t0 = time.perf_counter()
    ok_count = 0
    rows = []
    D = np.array([1.0])
    for e in range(n_envs):
        env = sample_environment(A2_LAW, Window([-L - 1], [L + 1]), seed * 1000 + e)
        exact = {x: slab_exit_exact(env, L, start=x) for x in range(-L + 1, L)}
        start = min(exact, key=lambda x: abs(exact[x] - 0.5))
        p = exact[start]
        specs = [half_space_below(D, -L), half_space_above(D, L)]
        batch = race_batch(env, np.array([start]), specs, trials, seed=seed * 1000 + e,
                           jobs=jobs)
        f = batch.counts()[0] / trials
        sigma = math.sqrt(p * (1 - p) / trials)
        ok = abs(f - p) <= 3 * sigma
        ok_count += int(ok)
        rows.append({"start": start, "exact": p, "mc": f, "z": (f - p) / sigma})
    return _result("A2", ok_count >= 48, 120.0, t0,
                   {"within_3sigma": ok_count, "n_envs": n_envs,
                    "max_abs_z": max(abs(r["z"]) for r in rows)},
                   {"within_3sigma": ">= 48 of 50"})


def check_A3():
    """Exponential slab decay rate ln 9 and convergence of quantized laws."""
    t0 = time.perf_counter()
    law = one_dim_law(0.9, kappa=0.01)
    rep = corollary_experiment(law, [4, 16, 64], list(range(10, 51, 5)), b=1.0)
    c = rep["rate_fit"]["exact"]["c_hat"]
    rel = abs(c - LN9) / LN9
    rates = {k: v["c_hat"] for k, v in rep["rate_fit"].items()}
    return _result("A3", rel <= 0.05 and rep["monotone_error_decrease"], 60.0, t0,
                   {"rate": c, "relative_error": rel, "rates": rates,
                    "rate_errors": rep["rate_errors"],
                    "monotone": rep["monotone_error_decrease"]},
                   {"rate": LN9, "relative_error": "<= 0.05", "monotone": True})


def a4_hierarchy():
    return make_hierarchy(10, N0=4, Ntilde0=4, c_tilde=1.0, k_max=3, d=1, warn=False)


def check_A4(p=0.1, samples=10_000, seed=4):
    """Null-model Bad probabilities under the pair-count bound at every scale."""
    t0 = time.perf_counter()
    rep = null_model_cascade(a4_hierarchy(), p, samples, seed)
    within = [s.get("within", True) for s in rep["scales"][1:]]
    return _result("A4", all(within), 60.0, t0,
                   {"p_hat": [s["p_hat"] for s in rep["scales"]],
                    "bound": [s["bound"] for s in rep["scales"]], "npairs": rep["npairs"]},
                   {"p_hat[k+1]": "<= npairs p_k^2 + 3 sigma"})


def a5_hierarchy():
    return make_hierarchy(1000, paper_defaults=True, k_max=20, d=1, warn=False)


def check_A5():
    """lambda2, default lambda1, the annealed limit at k = 60 and the quenched ladder."""
    t0 = time.perf_counter()
    h = a5_hierarchy()
    mixing = MixingParams(1.0, 1.0, 1)
    cc = compute_constants(h, mixing, n_terms=61)
    l2 = lambda2_exact(h)
    ok_l2 = cc.lambda2 == float(l2)
    ok_l1 = abs(cc.lambda1 - 1 / (4 * float(l2)) ** 2) <= 1e-9 * cc.lambda1
    lim = cc.c0 - math.log(float(l2)) - math.exp(-mixing.g * h.L[0] / 30)
    gap = abs(cc.c_annealed[60] - lim)
    ladder = all(quenched_ladder_ratio(h, k) == Fraction(h.N0, 4) ** k for k in range(21))
    return _result("A5", ok_l2 and ok_l1 and gap <= 1e-9 and ladder, 1.0, t0,
                   {"lambda2": cc.lambda2, "lambda1": cc.lambda1, "c60": cc.c_annealed[60],
                    "limit": lim, "gap": gap, "ladder_exact": ladder},
                   {"lambda2": float(l2), "lambda1": 1 / (4 * float(l2)) ** 2,
                    "gap": "<= 1e-9", "ladder_exact": True})


def box_intervals(children):
    """Per-child list of (lo, hi) interval endpoints, as plain floats."""
    return [[(float(c.anchor[ax] + c.lo[ax]), float(c.anchor[ax] + c.hi[ax]))
             for ax in range(c.d)] for c in children]


def brute_force_bad(intervals, bad):
    """Good/Bad quantifiers evaluated literally over all candidate children.

    Good iff some child y has every child z with z disjoint from y Good.
    Disjointness is checked from the interval endpoints of each axis.
    """
    def disjoint(a, b):
        return any(ahi <= blo + 1e-9 or bhi <= alo + 1e-9
                   for (alo, ahi), (blo, bhi) in zip(a, b))

    n = len(intervals)
    for y in range(n):
        if all(not bad[z] for z in range(n)
               if z != y and bad[z] and disjoint(intervals[y], intervals[z])):
            return False
    return True


def check_A6(n_configs=200, seed=6):
    """Recursive classifier vs brute-force quantifiers on random child statuses."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    cases = []
    h1 = a4_hierarchy()
    h2 = make_hierarchy(10, N0=4, Ntilde0=16, c_tilde=1.0, k_max=1, d=2, warn=False)
    for h in (h1, h2):
        parent = BoxSpec.at_scale("B2", h, 1, np.zeros(h.d))
        ch = quasi_cover(h, 1, parent)
        cases.append((h, parent, ch, box_intervals(ch)))
    agree = 0
    n_bad = 0
    for n in range(n_configs):
        h, parent, children, iv = cases[n % 2]
        p = rng.uniform(0.0, 0.6)
        bad = rng.random(len(children)) < p
        status = {tuple(float(v) for v in c.anchor): bool(b) for c, b in zip(children, bad)}
        got = classify_recursive(h, 1, parent, status).bad
        want = brute_force_bad(iv, bad)
        agree += got == want
        n_bad += want
    return _result("A6", agree == n_configs, 10.0, t0,
                   {"agree": agree, "n_configs": n_configs, "n_bad": n_bad,
                    "n_children": [len(c[2]) for c in cases]},
                   {"agree": n_configs})


A7_DRIFT = one_dim_law(0.9)
A7_SYM = one_dim_law(0.5)


def check_A7(seed=7, jobs=1):
    """Known-truth verdicts for a drift law and the symmetric law."""
    t0 = time.perf_counter()
    L_grid = [5, 10, 15, 20, 25]
    out = {}
    for name, law in (("drift", A7_DRIFT), ("symmetric", A7_SYM)):
        spec = ConditionSpec("StretchT", [1.0], gamma=1.0)
        fit = estimate_slab_curve(law, spec, L_grid, trials=200, seed=seed)
        W = estimate_condition_W(law, 1.0, 30, 0.04, n_env=20, seed=seed)
        tr = transience_probe(law, [1.0], (1000, 2000, 4000), 2000, seed=seed, jobs=jobs)
        out[name] = {"W": W["satisfied"], "W_value": W["value"],
                     "gamma_hat": fit.stretched.get("gamma_hat"),
                     "decay_accepted": fit.decay_accepted, "transience": tr["verdict"],
                     "escape_fraction": tr["escape_fraction"][-1],
                     "velocity": tr["velocity"]["mean"]}
    d, s = out["drift"], out["symmetric"]
    ok = (d["W"] == "yes" and d["gamma_hat"] is not None and d["gamma_hat"] >= 0.9
          and d["transience"] == "yes" and s["W"] == "no" and not s["decay_accepted"]
          and s["transience"] == "no")
    return _result("A7", ok, 180.0, t0, out,
                   {"drift": {"W": "yes", "gamma_hat": ">= 0.9", "transience": "yes"},
                    "symmetric": {"W": "no", "decay_accepted": False, "transience": "no"}})


A8_LAWS = (one_dim_law([0.55, 0.75], [0.5, 0.5]),
           EnvironmentLaw.iid_continuous(1, 0.05, (3.0, 1.0)))


def check_A8(seed=8):
    """boxT curve equals the slab curve point for point in d = 1."""
    t0 = time.perf_counter()
    L_grid = [4, 8, 12, 16, 20, 24]
    rows = []
    for law in A8_LAWS:
        spec = ConditionSpec("StretchT", [1.0], b=1.0)
        slab = estimate_slab_curve(law, spec, L_grid, trials=300, seed=seed)
        box = estimate_condition_boxT(law, 1.0, L_grid, trials=300, seed=seed)
        rows.append({"law": law.law_id, "slab": slab.p, "boxT": box.p,
                     "identical": slab.p == box.p})
    return _result("A8", all(r["identical"] for r in rows), 60.0, t0, rows,
                   {"identical": True})


def a9_configs():
    """Configurations whose payloads are compared across parallelism degrees."""
    return [
        {"schema_version": "1.0", "experiment": "slab_curve",
         "law": {"variant": "homogeneous", "d": 2, "kappa": 0.1,
                 "vector": [0.4, 0.2, 0.2, 0.2]},
         "direction": [1.0, 0.0], "condition": {"b": 1.0, "L_grid": [2, 4, 6]},
         "trials": 3000, "seed": 9},
        {"schema_version": "1.0", "experiment": "transience",
         "law": {"variant": "iid_continuous", "d": 2, "kappa": 0.05,
                 "concentration": [3.0, 1.0, 1.0, 1.0]},
         "direction": [1.0, 0.0], "condition": {"n_grid": [100, 200]},
         "trials": 3000, "seed": 9},
    ]


def check_A9():
    """jobs = 1 and jobs = 8 give byte-identical payloads."""
    from .cli import canonical_json, execute, validate_config

    t0 = time.perf_counter()
    same = []
    for cfg in a9_configs():
        cfg = validate_config(cfg)
        a = canonical_json(execute(cfg, jobs=1)["payload"])
        b = canonical_json(execute(cfg, jobs=8)["payload"])
        same.append(a == b)
    return _result("A9", all(same), 60.0, t0, {"identical": same}, {"identical": True})


CHECKS = {f"A{i}": globals()[f"check_A{i}"] for i in range(1, 10)}


def run_checks(ids=None):
    ids = list(CHECKS) if ids in (None, "all", ["all"]) else list(ids)
    unknown = [i for i in ids if i not in CHECKS]
    if unknown:
        raise KeyError(f"unknown acceptance id(s) {unknown}; valid: {sorted(CHECKS)} or 'all'")
    return [CHECKS[i]() for i in ids]


def summary_line(res):
    tag = "PASS" if res["passed"] else "FAIL"
    return f"{res['id']}: {tag} ({res['runtime_s']:.2f} s / {res['runtime_limit_s']:.0f} s) " \
           + json.dumps(res["measured"], default=float)[:160]
