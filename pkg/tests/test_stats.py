import itertools
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from chainzrule import stats as S

mpmath.mp.dps = 40

A10 = [2.31, 1.87, 3.02, 2.55, 1.94, 2.78, 2.12, 3.10, 2.47, 2.09]
B10 = [2.05, 1.90, 2.61, 2.40, 1.72, 2.80, 1.95, 2.71, 2.36, 2.10]


def mp_t_two_sided(t, df):
    t, df = mpmath.mpf(t), mpmath.mpf(df)
    return mpmath.betainc(df / 2, mpmath.mpf(1) / 2, 0, df / (df + t * t), regularized=True)


def mp_paired_t(a, b):
    d = [mpmath.mpf(x) - mpmath.mpf(y) for x, y in zip(a, b)]
    n = len(d)
    mean = sum(d) / n
    sd = mpmath.sqrt(sum((x - mean) ** 2 for x in d) / (n - 1))
    t = mean / (sd / mpmath.sqrt(n))
    return t, mp_t_two_sided(t, n - 1)


def sig_equal(a, b, digits=6):
    return f"{float(a):.{digits - 1}e}" == f"{float(b):.{digits - 1}e}"


def enum_wilcoxon(d):
    d = [x for x in d if x != 0]
    ranks = S._midranks(np.abs(np.array(d)))
    w = sum(r for r, x in zip(ranks, d) if x > 0)
    total = len(ranks) * (len(ranks) + 1) / 2
    dist = [sum(r for r, s in zip(ranks, signs) if s)
            for signs in itertools.product((0, 1), repeat=len(ranks))]
    lo = sum(v <= w + 1e-9 for v in dist) / len(dist)
    hi = sum(v >= w - 1e-9 for v in dist) / len(dist)
    return min(1.0, 2 * min(lo, hi))


class TestPairedT:
    def test_matches_high_precision(self):
        res = S.paired_t_test(A10, B10)
        t, p = mp_paired_t(A10, B10)
        assert sig_equal(res.statistic, t) and sig_equal(res.p_value, p)

    def test_equal_samples(self):
        res = S.paired_t_test(A10, A10)
        assert (res.statistic, res.p_value) == (0.0, 1.0)

    def test_zero_variance_differences(self):
        with pytest.raises(S.DegenerateSampleError):
            S.paired_t_test([1.0, 2.0, 3.0], [0.0, 1.0, 2.0])

    def test_monotone_in_shift(self):
        noise = np.random.default_rng(0).normal(0, 0.1, size=10)
        ps = [S.paired_t_test(noise + s, np.zeros(10)).p_value for s in (0.0, 0.05, 0.1, 0.2)]
        assert all(x > y for x, y in zip(ps, ps[1:]))

    @given(st.lists(st.tuples(st.floats(-100, 100), st.floats(-100, 100)), min_size=3, max_size=20))
    def test_antisymmetric(self, pairs):
        a, b = map(list, zip(*pairs))
        try:
            r1 = S.paired_t_test(a, b)
        except S.DegenerateSampleError:
            return
        r2 = S.paired_t_test(b, a)
        assert r1.statistic == pytest.approx(-r2.statistic)
        assert r1.p_value == pytest.approx(r2.p_value)
        assert 0 <= r1.p_value <= 1


class TestWelch:
    def test_identical(self):
        assert S.welch_t_test(A10, A10).p_value == 1.0

    def test_matches_high_precision(self):
        a, b = np.array(A10), np.array(B10[:7]) + 0.3
        res = S.welch_t_test(a, b)
        va = mpmath.mpf(float(np.var(a, ddof=1))) / len(a)
        vb = mpmath.mpf(float(np.var(b, ddof=1))) / len(b)
        df = (va + vb) ** 2 / (va ** 2 / (len(a) - 1) + vb ** 2 / (len(b) - 1))
        t = (mpmath.mpf(float(a.mean())) - float(b.mean())) / mpmath.sqrt(va + vb)
        assert sig_equal(res.df, df) and sig_equal(res.p_value, mp_t_two_sided(t, df))

    def test_equal_variance_df(self):
        a = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
        res = S.welch_t_test(a, a + 10)
        assert res.df == pytest.approx(8, abs=1e-6)

    def test_degenerate(self):
        with pytest.raises(S.DegenerateSampleError):
            S.welch_t_test([1.0, 1.0], [2.0, 2.0])


class TestWilcoxon:
    def test_all_positive(self):
        assert S.wilcoxon_signed_rank(np.arange(1, 7), np.zeros(6)).p_value == 0.03125

    def test_symmetric(self):
        d = np.array([1.0, -1.0, 2.0, -2.0, 3.0, -3.0])
        assert S.wilcoxon_signed_rank(d, np.zeros(6)).p_value == 1.0

    def test_twelve_pair_fixture(self):
        d = [0.8, -0.3, 1.2, 0.5, -0.9, 2.1, 0.4, 1.1, -0.2, 0.7, 1.5, 0.6]
        assert S.wilcoxon_signed_rank(d, np.zeros(12)).p_value == pytest.approx(enum_wilcoxon(d), abs=1e-12)

    @given(st.lists(st.integers(-6, 6).filter(bool), min_size=5, max_size=11))
    def test_matches_enumeration_with_ties(self, d):
        assert S.wilcoxon_signed_rank(d, np.zeros(len(d))).p_value == pytest.approx(
            enum_wilcoxon(d), abs=1e-12)

    def test_all_zero(self):
        with pytest.raises(S.DegenerateSampleError):
            S.wilcoxon_signed_rank([1, 2, 3], [1, 2, 3])

    def test_normal_branch_against_scipy(self):
        from scipy.stats import wilcoxon

        d = np.random.default_rng(3).normal(0.2, 1, size=40)
        ours = S.wilcoxon_signed_rank(d, np.zeros(40))
        ref = wilcoxon(d, method="approx", correction=False)
        assert ours.test_name == "wilcoxon_normal"
        assert ours.p_value == pytest.approx(ref.pvalue, rel=1e-9)


class TestSign:
    def test_24_of_24(self):
        res = S.sign_test(np.ones(24), np.zeros(24))
        assert res.p_value == 2.0 ** -23
        assert res.p_value < 1e-6

    def test_cases(self):
        assert S.sign_test([1, 1, 1, -1, -1, -1], [0] * 6).p_value == 1.0
        assert S.sign_test([1, 1, 1, 1, 1, -1], [0] * 6).p_value == 0.21875

    @given(st.integers(0, 12), st.integers(0, 12))
    def test_matches_enumeration(self, pos, neg):
        if pos + neg == 0:
            return
        n = pos + neg
        k = max(pos, neg)
        count = sum(1 for s in itertools.product((0, 1), repeat=n) if sum(s) >= k)
        res = S.sign_test([1] * pos + [-1] * neg, [0] * n)
        assert res.p_value == pytest.approx(min(1.0, 2 * count / 2 ** n), abs=1e-15)

    def test_all_ties(self):
        with pytest.raises(S.DegenerateSampleError):
            S.sign_test([1, 2], [1, 2])


@given(st.floats(0.01, 50), st.floats(1, 200))
def test_student_t_matches_mpmath(t, df):
    assert S.student_t_two_sided(t, df) == pytest.approx(float(mp_t_two_sided(t, df)), rel=1e-9, abs=1e-300)


def test_bonferroni():
    assert S.bonferroni_alpha(0.05, 4) == 0.0125
    with pytest.raises(ValueError):
        S.bonferroni_alpha(0.05, 0)
