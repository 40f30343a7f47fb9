"""Good/Bad boxes, cascade constants and desk-scale cascade experiments.

Everything here runs at reduced constants: the scale ratios that make the
multiscale argument work (N0 = 1100 d^3) are far beyond what can be sampled,
so the experiments check the structure of the induction, not its constants.
"""

import json
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from ._rng import derive_seed
from .env import MixingParams, Window, sample_environment
from .errors import CapacityError, MissingStatusError
from .geometry import BoxSpec, disjointness_matrix, quasi_cover
from .oned import BirthDeathChain, solve_absorption
from .stats import wilson_interval
from .walk import box_exit_batch, exit_probabilities_exact

STRUCTURAL_NOTE = "structural check at reduced constants"
DEFAULT_MEMORY_CAP = 1 << 28


def lambda2_exact(hierarchy):
    """((5/3) Ntilde0)^{2(d-1)} ((23/11) N0)^2 as a Fraction."""
    h = hierarchy
    return (Fraction(5, 3) * h.Ntilde0) ** (2 * (h.d - 1)) * (Fraction(23, 11) * h.N0) ** 2


def n_k_exact(hierarchy):
    return Fraction(23, 11) * hierarchy.N0 + 1


def J_k_exact(hierarchy):
    return math.floor(Fraction(hierarchy.Ntilde0) / (4 * (n_k_exact(hierarchy) + 1)))


@dataclass(frozen=True)
class CascadeConstants:
    lambda2: float
    lambda1: float
    c_annealed: np.ndarray
    c_quenched: np.ndarray
    n_k: float
    J_k: int
    w0: float
    gamma: float
    limit: float
    inf_positive: bool
    d: int
    L: np.ndarray
    eta1: float = None
    eta2: float = None
    eta3: float = None
    lambda1_overridden: bool = False

    @property
    def c0(self):
        return float(self.c_annealed[0])

    @property
    def w0_index(self):
        return int(math.floor(self.w0))

    def to_dict(self):
        return {
            "lambda2": self.lambda2, "lambda1": self.lambda1,
            "c_annealed": [float(c) for c in self.c_annealed],
            "c_quenched": [float(c) for c in self.c_quenched],
            "n_k": self.n_k, "J_k": self.J_k, "w0": self.w0, "gamma": self.gamma,
            "limit": self.limit, "inf_positive": self.inf_positive,
            "eta1": self.eta1, "eta2": self.eta2, "eta3": self.eta3,
        }


def mixing_term(hierarchy, mixing, k):
    """exp(-g (9/11) L_k) 9 r^{2d} L_k^2 (6 c~ L~_k)^{2(d-1)} C in log space,
    so scales whose L_k overflows a double simply contribute 0."""
    h = hierarchy
    if mixing.C == 0:
        return 0.0
    log_L = math.log(h.L0) + k * math.log(h.N0)
    log_Lt = math.log(h.L0) + k * math.log(h.Ntilde0)
    if log_L > 700:
        return 0.0
    log_term = (-mixing.g * (9.0 / 11.0) * math.exp(log_L) + math.log(9.0)
                + 2 * h.d * math.log(mixing.r) + 2 * log_L
                + 2 * (h.d - 1) * (math.log(6 * h.c_tilde) + log_Lt) + math.log(mixing.C))
    return math.exp(log_term) if log_term < 700 else math.inf


def annealed_sequence(hierarchy, mixing, lambda1, n_terms):
    """c_0 .. c_{n_terms-1} of the annealed recursion (scales beyond k_max
    are extended with L_k = N0^k L0)."""
    h = hierarchy
    lam2 = float(lambda2_exact(h))
    c = np.empty(n_terms)
    c[0] = -0.5 * math.log(lambda1)
    ln_l2 = math.log(lam2)
    for k in range(n_terms - 1):
        c[k + 1] = c[k] - ln_l2 / 2 ** (k + 1) - mixing_term(h, mixing, k) / 2 ** (k + 1)
    return c


def compute_constants(hierarchy, mixing=None, lambda1=None, n_terms=None):
    """All cascade constants for ``hierarchy``.

    lambda1 defaults to (4 lambda2)^{-2}.  ``limit`` is the closed-form lower
    bound c_0 - ln lambda2 - exp(-g L0/30) on inf_k c_k.
    """
    h = hierarchy
    mixing = MixingParams(C=0.0, g=1.0, r=1) if mixing is None else mixing
    lam2 = float(lambda2_exact(h))
    overridden = lambda1 is not None
    lam1 = (4.0 * lam2) ** -2 if lambda1 is None else float(lambda1)
    if not 0 < lam1 <= 1:
        raise ValueError("lambda1 must lie in (0, 1]")
    n_terms = h.k_max + 1 if n_terms is None else max(n_terms, h.k_max + 1)
    ca = annealed_sequence(h, mixing, lam1, n_terms)
    c0 = ca[0]
    cq = np.array([c0 / (4.0 ** k * h.L0) for k in range(h.k_max + 1)])
    limit = c0 - (math.log(lam2) + math.exp(-mixing.g * h.L0 / 30.0))
    return CascadeConstants(
        lambda2=lam2, lambda1=lam1, c_annealed=ca, c_quenched=cq,
        n_k=float(n_k_exact(h)), J_k=int(J_k_exact(h)), w0=h.N0 * 12.0 / 11.0,
        gamma=math.log(2) / (2 * math.log(h.N0)), limit=limit, inf_positive=limit > 0,
        d=h.d, L=np.array(h.L), lambda1_overridden=overridden)


def quenched_ladder_ratio(hierarchy, k):
    """(c_k L_k) / (c_0 L_0) in exact arithmetic; equals (N0/4)^k."""
    h = hierarchy
    return (Fraction(1, 4 ** k) * h.L_exact(k)) / (Fraction(1) * h.L_exact(0))


def lateral_bound_value(constants, k, ckLk=None, drop_dimension_factor=False):
    """exp(-(J_k/8)(c_k L_k - ln(2(d-1) n_k))); 0 in d = 1 where the lateral
    event is empty.  With ``drop_dimension_factor`` the log term is ln n_k."""
    if constants.d == 1:
        return 0.0
    ckLk = float(constants.c_quenched[k] * constants.L[k]) if ckLk is None else float(ckLk)
    fac = 1.0 if drop_dimension_factor else 2.0 * (constants.d - 1)
    return math.exp(-(constants.J_k / 8.0) * (ckLk - math.log(fac * constants.n_k)))


@dataclass(frozen=True, eq=False)
class BoxStatus:
    box: BoxSpec
    label: str
    sup_exit_estimate: float = None
    stderr: float = None
    witness: tuple = None
    cover_witness: tuple = None
    indeterminate: bool = False
    degenerate: bool = False
    method: str = "exact"

    @property
    def bad(self):
        return self.label == "Bad"

    def to_dict(self):
        return {"anchor": self.box.anchor.tolist(), "scale": self.box.scale,
                "label": self.label, "sup_exit_estimate": self.sup_exit_estimate,
                "stderr": self.stderr, "witness": self.witness,
                "indeterminate": self.indeterminate, "degenerate": self.degenerate,
                "method": self.method}


def _front_sites(box):
    """Sites of B~_1 sharing the anchor and scale of the B2 ``box``."""
    L = box.hi[0] * 11.0 / 12.0
    lat = [] if box.d == 1 else [box.hi[1] * 3.0 / 4.0] * (box.d - 1)
    tilde = BoxSpec._make("B1tilde", box.anchor, box.direction, [0.0] * box.d,
                          [L] + lat, True, L, box.scale)
    return tilde.sites()


def _nonplus_exact(env, box):
    """Exact non-frontal exit probability from every B~_1 site."""
    starts = _front_sites(box)
    if box.d == 1 and np.allclose(box.direction.rotation, 1.0):
        a = box.anchor[0] + box.lo[0]
        b = box.anchor[0] + box.hi[0]
        i, j = math.floor(a + 1e-9), math.ceil(b - 1e-9)
        sol = solve_absorption(BirthDeathChain.from_environment(env, i, j))
        return starts, np.array([sol.at(int(z[0])) for z in starts])
    sites, p_plus = exit_probabilities_exact(env, box)
    index = {tuple(s): n for n, s in enumerate(sites)}
    out = np.array([1.0 - p_plus[index[tuple(z)]] if tuple(z) in index else
                    (0.0 if box.classify(z[None, :])[0] == 3 else 1.0) for z in starts])
    return starts, out


def classify_scale0(env, box, lambda1, method="exact", trials=10_000, seed=0, jobs=1):
    """Good/Bad status of a scale-0 box from the worst non-frontal exit probability.

    ``method`` is "exact" (birth-death solve in d = 1, sparse harmonic solve
    otherwise) or "mc" (per-site binomial estimates).  An MC interval that
    straddles the threshold sqrt(lambda1) gives Bad with ``indeterminate``.
    """
    thr = math.sqrt(lambda1)
    if lambda1 >= 1:
        return BoxStatus(box, "Good", None, None, degenerate=True, method=method)
    if method == "exact":
        _, q = _nonplus_exact(env, box)
        sup = float(q.max())
        return BoxStatus(box, "Good" if sup < thr else "Bad", sup, 0.0, method="exact")
    starts = _front_sites(box)
    best, best_se, lo_max, hi_max = -1.0, 0.0, 0.0, 0.0
    for n, z in enumerate(starts):
        rep, _ = box_exit_batch(env, z, box, trials, seed=derive_seed(seed, n), jobs=jobs)
        p = 1.0 - rep["estimate"]
        lo, hi = 1.0 - rep["ci"][1], 1.0 - rep["ci"][0]
        if p > best:
            best, best_se = p, rep["stderr"]
        lo_max, hi_max = max(lo_max, lo), max(hi_max, hi)
    if hi_max < thr:
        label, ind = "Good", False
    elif lo_max >= thr:
        label, ind = "Bad", False
    else:
        label, ind = "Bad", True
    return BoxStatus(box, label, best, best_se, indeterminate=ind, method="mc")


def classify_recursive(hierarchy, k, parent, child_status, rule="literal"):
    """Good/Bad status of a scale-k B2 box from its children's statuses.

    ``child_status`` maps child anchors (tuples) to BoxStatus or bool
    (True = Bad).  The literal rule: Good iff some child y has every child
    disjoint from B2(y) Good; candidates y are tried in lexicographic order.
    The pairwise rule: Bad iff two disjoint children are both Bad.
    """
    children, D = _cover_with_disjointness(hierarchy, k, parent)
    bad = np.empty(len(children), dtype=bool)
    for n, ch in enumerate(children):
        key = tuple(float(v) for v in ch.anchor)
        if key not in child_status:
            raise MissingStatusError(f"no status for scale-{k - 1} child at {key}")
        st = child_status[key]
        bad[n] = st.bad if isinstance(st, BoxStatus) else bool(st)
    return _status_from_bits(parent, children, bad, D, rule)


_COVER_CACHE = {}


def _cover_with_disjointness(hierarchy, k, parent):
    # children and their disjointness matrix depend only on the geometry
    key = (json.dumps(hierarchy.to_dict(), sort_keys=True, default=str), k,
           parent.kind, tuple(parent.anchor.tolist()), tuple(parent.direction.ell.tolist()))
    hit = _COVER_CACHE.get(key)
    if hit is None:
        children = quasi_cover(hierarchy, k, parent)
        hit = (children, disjointness_matrix(children))
        if len(_COVER_CACHE) > 256:
            _COVER_CACHE.clear()
        _COVER_CACHE[key] = hit
    return hit


def _status_from_bits(parent, children, bad, D, rule):
    anchor = lambda n: tuple(float(v) for v in children[n].anchor)
    if rule == "pairwise":
        pair = np.argwhere(np.triu(D & np.outer(bad, bad)))
        if pair.size:
            a, b = pair[0]
            return BoxStatus(parent, "Bad", witness=(anchor(a), anchor(b)), method="recursive")
        return BoxStatus(parent, "Good", method="recursive")
    if rule != "literal":
        raise ValueError(f"unknown rule {rule!r}")
    for y in range(len(children)):
        if not np.any(D[y] & bad):
            return BoxStatus(parent, "Good", cover_witness=anchor(y), method="recursive")
    a = int(np.flatnonzero(bad)[0])
    b = int(np.flatnonzero(D[a] & bad)[0])
    return BoxStatus(parent, "Bad", witness=(anchor(a), anchor(b)), method="recursive")


def literal_bad_vectorized(bad, D):
    """Literal-rule Bad flags for a batch: ``bad`` is (samples, children)."""
    hits = (bad.astype(np.int64) @ D.T.astype(np.int64)) > 0
    return hits.all(axis=1)


def disjoint_pairs(hierarchy, k, parent=None):
    """Unordered disjoint child pairs of the quasi-cover (counting set N_2)."""
    if parent is None:
        parent = BoxSpec.at_scale("B2", hierarchy, k, np.zeros(hierarchy.d))
    children = quasi_cover(hierarchy, k, parent)
    D = disjointness_matrix(children)
    return [(i, j) for i in range(len(children)) for j in range(i + 1, len(children)) if D[i, j]]


class _Tree:
    """Anchors needed at every scale below a scale-K box, with child indices."""

    def __init__(self, hierarchy, K_top, direction=None):
        h = hierarchy
        d = h.d
        self.levels = {K_top: [tuple([0.0] * d)]}
        self.children = {}
        self.D = {}
        for k in range(K_top, 0, -1):
            need = {}
            kids = []
            for a in self.levels[k]:
                parent = BoxSpec.at_scale("B2", h, k, a, direction)
                cover = quasi_cover(h, k, parent)
                if k not in self.D:
                    self.D[k] = disjointness_matrix(cover)
                idx = []
                for ch in cover:
                    key = tuple(float(v) for v in ch.anchor)
                    if key not in need:
                        need[key] = len(need)
                    idx.append(need[key])
                kids.append(idx)
            self.levels[k - 1] = list(need)
            self.children[k] = np.array(kids, dtype=np.int64)
        self.K = K_top


def propagate(tree, bad0):
    """Statuses at every scale from scale-0 Bad flags (samples, anchors)."""
    out = {0: bad0}
    for k in range(1, tree.K + 1):
        kids = tree.children[k]
        prev = out[k - 1]
        cur = np.empty((prev.shape[0], kids.shape[0]), dtype=bool)
        for n, idx in enumerate(kids):
            cur[:, n] = literal_bad_vectorized(prev[:, idx], tree.D[k])
        out[k] = cur
    return out


def null_model_exact_scale1(hierarchy, p):
    """Exact P[scale-1 box Bad] when its children are Bad i.i.d. with prob p."""
    parent = BoxSpec.at_scale("B2", hierarchy, 1, np.zeros(hierarchy.d))
    children = quasi_cover(hierarchy, 1, parent)
    n = len(children)
    D = disjointness_matrix(children)
    total = 0.0
    for bits in range(2 ** n):
        b = np.array([(bits >> i) & 1 for i in range(n)], dtype=bool)
        if literal_bad_vectorized(b[None, :], D)[0]:
            m = int(b.sum())
            total += p ** m * (1 - p) ** (n - m)
    return total


def null_model_cascade(hierarchy, p, samples, seed=0, k_max=None):
    """Independent-marking null model: scale-0 boxes Bad i.i.d. with prob p.

    Statuses propagate by the literal rule with overlapping boxes sharing
    sub-boxes.  Returns per-scale empirical Bad frequencies of the box at 0
    and the pair-count bound npairs * p_k^2 for the next scale.
    """
    k_max = hierarchy.k_max if k_max is None else k_max
    tree = _Tree(hierarchy, k_max)
    rng = np.random.default_rng(seed)
    bad0 = rng.random((samples, len(tree.levels[0]))) < p
    st = propagate(tree, bad0)
    npairs = len(disjoint_pairs(hierarchy, 1))
    scales = []
    for k in range(k_max + 1):
        top = st[k][:, tree.levels[k].index(tuple([0.0] * hierarchy.d))]
        nb = int(top.sum())
        lo, hi = wilson_interval(nb, samples)
        scales.append({"k": k, "n_boxes": samples, "n_bad": nb, "p_hat": nb / samples,
                       "ci_lo": lo, "ci_hi": hi})
    for k in range(k_max):
        pk = scales[k]["p_hat"]
        scales[k + 1]["bound"] = npairs * pk * pk
        sk = math.sqrt(pk * (1 - pk) / samples)
        pk1 = scales[k + 1]["p_hat"]
        s1 = math.sqrt(pk1 * (1 - pk1) / samples)
        # delta-method error of the bound plus the error of the estimate
        scales[k + 1]["sigma"] = math.hypot(s1, 2 * npairs * pk * sk)
        scales[k + 1]["within"] = pk1 <= npairs * pk * pk + 3 * scales[k + 1]["sigma"]
    scales[0]["bound"] = p
    return {"p": p, "samples": samples, "npairs": npairs, "scales": scales,
            "note": STRUCTURAL_NOTE}


def cascade_memory_bytes(hierarchy, k):
    """Dependency-window sites x 16 bytes x 2d for a scale-k experiment."""
    h = hierarchy
    front = h.L[k] + h.A[k] / 11 + h.A[k]
    lat = 3 * h.c_tilde * h.Lt[k] + 2 * h.c_tilde * h.At[k]
    sites = front * lat ** (h.d - 1)
    return sites * 16 * 2 * h.d


def suggest_scaled_config(d=1, memory_cap=DEFAULT_MEMORY_CAP):
    """Desk-scale hierarchy with the deepest k_max <= 3 that fits ``memory_cap``."""
    from .geometry import make_hierarchy
    Nt = 4 if d == 1 else 16
    k_fit = 0
    for k in range(4):
        h = make_hierarchy(10, N0=4, Ntilde0=Nt, c_tilde=1.0, k_max=k, d=d, warn=False)
        if cascade_memory_bytes(h, k) <= memory_cap:
            k_fit = k
    return {"L0": 10, "N0": 4, "Ntilde0": Nt, "c_tilde": 1.0, "k_max": k_fit, "d": d}


def scale0_bad_flags(env, tree, hierarchy, lambda1):
    """Exact scale-0 Bad flags and sup-exit values for every needed anchor."""
    out = np.empty(len(tree.levels[0]), dtype=bool)
    sup = np.empty(len(tree.levels[0]))
    for n, a in enumerate(tree.levels[0]):
        st = classify_scale0(env, BoxSpec.at_scale("B2", hierarchy, 0, a), lambda1)
        out[n] = st.bad
        sup[n] = st.sup_exit_estimate
    return out, sup


def scale0_bad_probability(law, L0, lambda1, n_env, seed=0, method="exact", trials=2000):
    """Fraction of sampled environments in which the scale-0 box at 0 is Bad."""
    d = law.d
    box = BoxSpec.generic("B2", L0, L0, 1.0, d, scale=0)
    lo, hi = box.bounding_box(pad=1)
    bad = 0
    indet = 0
    for e in range(n_env):
        env = sample_environment(law, Window(lo, hi), derive_seed(seed, e))
        st = classify_scale0(env, box, lambda1, method=method, trials=trials,
                             seed=derive_seed(seed, e, 1))
        bad += st.bad
        indet += st.indeterminate
    lo_, hi_ = wilson_interval(bad, n_env)
    return {"L0": L0, "p_bad": bad / n_env, "ci": [lo_, hi_], "n_env": n_env,
            "indeterminate": indet, "method": method}


def fit_eta1(p_hat):
    """eta1_hat from -ln p_k ~ eta 2^k over scales with 0 < p_k < 1 (diagnostic)."""
    vals = [math.log(-math.log(p)) - k * math.log(2) for k, p in enumerate(p_hat) if 0 < p < 1]
    return math.exp(float(np.mean(vals))) if vals else None


def cascade_experiment(law, hierarchy, k_max=None, n_env=100, seed=0, lambda1=None,
                       mixing=None, memory_cap=DEFAULT_MEMORY_CAP):
    """Sample environments, classify boxes at every scale, report the cascade.

    Scale-0 boxes are classified exactly (d = 1 birth-death solves, sparse
    solves otherwise); higher scales by the literal recursive rule.  For
    Good boxes the exact quenched sup-exit is compared with exp(-c_k L_k).
    """
    h = hierarchy
    k_max = h.k_max if k_max is None else k_max
    need = cascade_memory_bytes(h, k_max)
    if need > memory_cap:
        raise CapacityError(
            f"infeasible constants: scale-{k_max} dependency window needs {need:.3g} bytes "
            f"(cap {memory_cap}); try {suggest_scaled_config(h.d, memory_cap)}")
    consts = compute_constants(h, mixing, lambda1)
    tree = _Tree(h, k_max)
    anchors0 = np.array(tree.levels[0])
    lo = np.floor(anchors0.min(axis=0) - 2 * h.L[0] - 2 * h.c_tilde * h.Lt[0]).astype(int)
    hi = np.ceil(anchors0.max(axis=0) + 2 * h.L[0] + 4 * h.c_tilde * h.Lt[0]).astype(int)
    for k in range(k_max + 1):
        blo, bhi = BoxSpec.at_scale("B2", h, k, np.zeros(h.d)).bounding_box(pad=1)
        lo, hi = np.minimum(lo, blo), np.maximum(hi, bhi)
    flags = np.empty((n_env, len(anchors0)), dtype=bool)
    quenched = {k: [] for k in range(k_max + 1)}
    for e in range(n_env):
        env = sample_environment(law, Window(lo, hi), derive_seed(seed, e))
        flags[e], sup0 = scale0_bad_flags(env, tree, h, consts.lambda1)
        if h.d == 1:
            for k in range(k_max + 1):
                box = BoxSpec.at_scale("B2", h, k, np.zeros(1))
                _, q = _nonplus_exact(env, box)
                quenched[k].append(float(q.max()))
    st = propagate(tree, flags)
    scales = []
    p_hat = []
    for k in range(k_max + 1):
        top = st[k][:, tree.levels[k].index(tuple([0.0] * h.d))]
        nb = int(top.sum())
        lo_, hi_ = wilson_interval(nb, n_env)
        p_hat.append(nb / n_env)
        row = {"k": k, "n_boxes": n_env, "n_bad": nb, "ci_lo": lo_, "ci_hi": hi_,
               "bound": math.exp(-consts.c_annealed[k] * 2 ** k),
               "one_sided": nb == 0}
        if quenched[k]:
            good = [q for q, b in zip(quenched[k], top) if not b]
            row["quenched_sup_exit_max_good"] = max(good) if good else None
            row["quenched_bound"] = math.exp(-consts.c_quenched[k] * h.L[k])
        scales.append(row)
    return {"scales": scales, "eta1_hat": fit_eta1(p_hat), "constants": consts.to_dict(),
            "hierarchy": h.to_dict(), "law": law.to_dict(), "note": STRUCTURAL_NOTE}
