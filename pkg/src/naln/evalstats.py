"""Paired/unpaired t-tests and summaries for comparing model conditions.

The t-distribution tail is integrated numerically (adaptive Simpson) rather
than taken from a special-function library.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ParameterError, StatisticsError

SIMPSON_TOL = 1e-10


class TTestResult(NamedTuple):
    t: float
    p: float
    df: float


@dataclass
class ConditionResults:
    name: str
    scores: np.ndarray
    units: tuple = ()

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(self.scores)):
            raise ParameterError(f"condition {self.name!r} has non-finite scores")
        if self.units and len(self.units) != len(self.scores):
            raise ParameterError("one unit label per score is required")


def _adaptive_simpson(f, a, b, tol, depth=50):
    def simpson(a, fa, b, fb):
        m = 0.5 * (a + b)
        fm = f(m)
        return m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb)

    def recurse(a, fa, b, fb, m, fm, whole, tol, depth):
        lm, flm, left = simpson(a, fa, m, fm)
        rm, frm, right = simpson(m, fm, b, fb)
        delta = left + right - whole
        if depth <= 0 or abs(delta) <= 15.0 * tol:
            return left + right + delta / 15.0
        return (recurse(a, fa, m, fm, lm, flm, left, tol / 2.0, depth - 1)
                + recurse(m, fm, b, fb, rm, frm, right, tol / 2.0, depth - 1))

    fa, fb = f(a), f(b)
    m, fm, whole = simpson(a, fa, b, fb)
    return recurse(a, fa, b, fb, m, fm, whole, tol, depth)


def t_two_sided_p(t, df):
    """Two-sided tail probability ``P(|T| >= |t|)`` for Student's t with ``df`` degrees of freedom.

    With ``x = sqrt(df) * tan(theta)`` the density becomes
    ``c * cos(theta) ** (df - 1)`` on ``[0, pi/2)``, which is bounded and
    smooth, so the tail integral is well behaved for any ``t``.
    """
    if not df > 0:
        raise ParameterError("degrees of freedom must be positive")
    if t == 0:
        return 1.0
    if math.isinf(t):
        return 0.0
    c = math.exp(math.lgamma((df + 1) / 2.0) - math.lgamma(df / 2.0)) / math.sqrt(math.pi)
    theta0 = math.atan(abs(t) / math.sqrt(df))

    def density(theta):
        return c * math.cos(theta) ** (df - 1)

    # the tail integrand is singular at pi/2 when df < 1; integrate the body instead
    if df >= 1:
        p = 2.0 * _adaptive_simpson(density, theta0, math.pi / 2.0, SIMPSON_TOL / 2.0)
    else:
        p = 1.0 - 2.0 * _adaptive_simpson(density, 0.0, theta0, SIMPSON_TOL / 2.0)
    return min(max(p, 0.0), 1.0)


def summarize(scores):
    """Mean and standard error (sample sd / sqrt(n); 0 for a single score)."""
    x = np.asarray(scores, dtype=np.float64).reshape(-1)
    if x.size < 1:
        raise ParameterError("summarize needs at least one score")
    mean = float(np.mean(x))
    if x.size == 1:
        return mean, 0.0
    return mean, float(np.std(x, ddof=1) / math.sqrt(x.size))


def paired_ttest(a, b):
    """Paired t-test on ``a - b``; returns ``(t, p, df)`` with a two-sided p."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.size != b.size or a.size < 2:
        raise ParameterError("paired samples need equal lengths of at least 2")
    d = a - b
    sd = float(np.std(d, ddof=1))
    if sd == 0.0:
        raise StatisticsError("paired differences have zero variance")
    n = d.size
    t = float(np.mean(d)) / (sd / math.sqrt(n))
    df = n - 1
    return TTestResult(t, t_two_sided_p(t, df), df)


def unpaired_ttest(a, b, equal_var=True):
    """Two-sample t-test (pooled variance, or Welch's when ``equal_var`` is off)."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    na, nb = a.size, b.size
    if na < 2 or nb < 2:
        raise ParameterError("each group needs at least 2 values")
    va, vb = np.var(a, ddof=1), np.var(b, ddof=1)
    if va == 0.0 and vb == 0.0:
        raise StatisticsError("both groups have zero variance")
    diff = float(np.mean(a) - np.mean(b))
    if equal_var:
        df = na + nb - 2
        pooled = ((na - 1) * va + (nb - 1) * vb) / df
        se = math.sqrt(pooled * (1.0 / na + 1.0 / nb))
    else:
        qa, qb = va / na, vb / nb
        se = math.sqrt(qa + qb)
        df = (qa + qb) ** 2 / (qa ** 2 / (na - 1) + qb ** 2 / (nb - 1))
    t = diff / se
    return TTestResult(t, t_two_sided_p(t, df), df)


def compare_conditions(a, b, paired=True):
    """Test two :class:`ConditionResults`; paired tests align on unit labels when given."""
    sa, sb = a.scores, b.scores
    if paired and a.units and b.units:
        if set(a.units) != set(b.units):
            raise ParameterError("paired conditions must cover the same units")
        order = {u: i for i, u in enumerate(b.units)}
        sb = np.array([sb[order[u]] for u in a.units])
    return paired_ttest(sa, sb) if paired else unpaired_ttest(sa, sb)


def results_table(rows):
    """Fixed-width text table from ``(label, mean_a, se_a, mean_b, se_b, t, p, df)`` rows."""
    head = f"{'label':<16}{'mean_a':>10}{'se_a':>10}{'mean_b':>10}{'se_b':>10}{'t':>10}{'p':>12}{'df':>8}"
    lines = [head]
    for label, ma, sa, mb, sb, t, p, df in rows:
        lines.append(f"{label:<16}{ma:>10.4f}{sa:>10.4f}{mb:>10.4f}{sb:>10.4f}{t:>10.4f}{p:>12.3e}{df:>8.2f}")
    return "\n".join(lines) + "\n"
