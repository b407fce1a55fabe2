"""Paired and two-sample significance tests.

Student-t tail probabilities come from a continued-fraction evaluation of
the regularized incomplete beta function; the signed-rank and sign tests
are exact for small samples.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np


class DegenerateSampleError(ValueError):
    pass


@dataclass
class TestResult:
    __test__ = False  # not a pytest class

    statistic: float
    p_value: float
    n: int
    test_name: str
    df: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# special functions


def _betacf(a: float, b: float, x: float, max_iter: int = 10000, eps: float = 1e-16) -> float:
    # modified Lentz evaluation of the incomplete beta continued fraction
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _betacf(a, b, x) / a
    return 1.0 - math.exp(log_front) * _betacf(b, a, 1.0 - x) / b


def student_t_two_sided(t: float, df: float) -> float:
    """P(|T| >= |t|) for Student's t with ``df`` degrees of freedom."""
    if df <= 0:
        raise ValueError("degrees of freedom must be positive")
    if t == 0:
        return 1.0
    return min(1.0, betainc_reg(df / 2.0, 0.5, df / (df + t * t)))


def normal_two_sided(z: float) -> float:
    return min(1.0, math.erfc(abs(z) / math.sqrt(2.0)))


# ---------------------------------------------------------------------------
# t tests


def _paired_diffs(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"paired samples need equal 1-D shapes, got {a.shape} and {b.shape}")
    return a - b


def paired_t_test(a, b) -> TestResult:
    d = _paired_diffs(a, b)
    n = d.size
    if n < 2:
        raise ValueError("paired t-test needs at least 2 pairs")
    if not np.any(d):
        return TestResult(0.0, 1.0, n, "paired_t", n - 1)
    sd = float(np.std(d, ddof=1))
    if sd == 0.0:
        raise DegenerateSampleError("differences have zero variance")
    t = float(np.mean(d)) / (sd / math.sqrt(n))
    return TestResult(t, student_t_two_sided(t, n - 1), n, "paired_t", n - 1)


def welch_t_test(a, b) -> TestResult:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = a.size, b.size
    if na < 2 or nb < 2:
        raise ValueError("Welch test needs at least 2 observations per sample")
    va = float(np.var(a, ddof=1)) / na
    vb = float(np.var(b, ddof=1)) / nb
    if va == 0.0 and vb == 0.0:
        raise DegenerateSampleError("both samples have zero variance")
    t = (float(np.mean(a)) - float(np.mean(b))) / math.sqrt(va + vb)
    df = (va + vb) ** 2 / (va ** 2 / (na - 1) + vb ** 2 / (nb - 1))
    return TestResult(t, student_t_two_sided(t, df), na + nb, "welch_t", df)


# ---------------------------------------------------------------------------
# rank and sign tests


def _midranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(x.size, dtype=np.float64)
    xs = x[order]
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def signed_rank_null_counts(doubled_ranks) -> np.ndarray:
    """counts[s] = number of sign patterns whose doubled positive-rank sum is s."""
    total = int(sum(doubled_ranks))
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in doubled_ranks:
        r = int(r)
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:-r] if r else counts
        counts = counts + shifted
    return counts


EXACT_WILCOXON_MAX_N = 25


def wilcoxon_signed_rank(a, b) -> TestResult:
    """Two-sided signed-rank test on paired samples; statistic is W+ (positive rank sum).

    Zero differences are dropped. Exact null distribution up to n = 25,
    normal approximation with tie correction beyond.
    """
    d = _paired_diffs(a, b)
    d = d[d != 0]
    n = d.size
    if n == 0:
        raise DegenerateSampleError("all differences are zero")
    if n < 5:
        raise ValueError("signed-rank test needs at least 5 non-zero differences")
    ranks = _midranks(np.abs(d))
    w_plus = float(np.sum(ranks[d > 0]))
    if n <= EXACT_WILCOXON_MAX_N:
        doubled = np.rint(2 * ranks).astype(np.int64)
        counts = signed_rank_null_counts(doubled)
        w2 = int(round(2 * w_plus))
        total = counts.sum()
        lower = counts[:w2 + 1].sum() / total
        upper = counts[w2:].sum() / total
        p = min(1.0, 2.0 * min(lower, upper))
        return TestResult(w_plus, p, n, "wilcoxon_exact")
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts ** 3 - tie_counts) / 48.0
    z = (w_plus - mean) / math.sqrt(var)
    return TestResult(w_plus, normal_two_sided(z), n, "wilcoxon_normal")


def sign_test(a, b) -> TestResult:
    """Exact two-sided binomial sign test (p0 = 1/2); ties dropped. Statistic: # positive."""
    d = _paired_diffs(a, b)
    pos = int(np.sum(d > 0))
    neg = int(np.sum(d < 0))
    n = pos + neg
    if n == 0:
        raise DegenerateSampleError("all pairs are tied")
    k = max(pos, neg)
    tail = sum(math.comb(n, i) for i in range(k, n + 1))
    p = min(1.0, 2.0 * tail / 2 ** n)
    return TestResult(float(pos), p, n, "sign")


def bonferroni_alpha(alpha: float, m: int) -> float:
    if m < 1:
        raise ValueError("need at least one comparison")
    return alpha / m
