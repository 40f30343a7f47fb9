"""Small statistical helpers shared by the estimators."""

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as _st

Z3 = 3.0


def binomial_stderr(p, n):
    return math.sqrt(max(p * (1 - p), 0.0) / n) if n > 0 else math.inf


def wilson_interval(k, n, z=1.959963984540054):
    """Wilson score interval for k successes in n trials."""
    if n <= 0:
        return 0.0, 1.0
    p = k / n
    den = 1 + z * z / n
    mid = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return max(0.0, mid - half), min(1.0, mid + half)


def mean_interval(x, z=1.959963984540054):
    """(mean, stderr, lo, hi) of a sample."""
    x = np.asarray(x, dtype=float)
    m = float(x.mean())
    se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0
    return m, se, m - z * se, m + z * se


@dataclass(frozen=True)
class LinearFit:
    slope: float
    intercept: float
    r2: float
    n: int

    def to_dict(self):
        return {"slope": self.slope, "intercept": self.intercept, "r2": self.r2, "n": self.n}


def linear_fit(x, y):
    """Least squares y = a x + b; r^2 is 0 when y has no variance."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2 or np.ptp(x) == 0:
        return LinearFit(math.nan, math.nan, 0.0, int(x.size))
    res = _st.linregress(x, y)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot == 0.0 or not np.isfinite(res.rvalue):
        r2 = 0.0
    else:
        r2 = float(res.rvalue ** 2)
    return LinearFit(float(res.slope), float(res.intercept), r2, int(x.size))
