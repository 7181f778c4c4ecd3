import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from riskrct import stats
from riskrct.selftest import fisher_oracle, wilcoxon_oracle


def chi2_tail_oracle(x, df):
    return float(mpmath.gammainc(mpmath.mpf(df) / 2, mpmath.mpf(x) / 2, mpmath.inf, regularized=True))


def t_tail_oracle(t, df):
    # two-sided: 2 * integral of the t density beyond |t|
    df = mpmath.mpf(df)
    c = mpmath.gamma((df + 1) / 2) / (mpmath.sqrt(df * mpmath.pi) * mpmath.gamma(df / 2))
    dens = lambda x: c * (1 + x * x / df) ** (-(df + 1) / 2)  # noqa: E731
    return float(2 * mpmath.quad(dens, [abs(t), mpmath.inf]))


def test_fisher_examples():
    assert stats.fisher_exact_2x2([[5, 5], [5, 5]]) == pytest.approx(1.0)
    assert stats.fisher_exact_2x2([[3, 1], [1, 3]]) == pytest.approx(34 / 70, abs=1e-15)
    assert stats.fisher_exact_2x2([[10, 0], [0, 10]]) == pytest.approx(2 / 184756, rel=1e-12)


def test_fisher_zero_margin():
    with pytest.raises(ValueError):
        stats.fisher_exact_2x2([[0, 0], [3, 4]])
    with pytest.raises(ValueError):
        stats.fisher_exact_2x2([[-1, 2], [3, 4]])


@given(st.lists(st.integers(0, 10), min_size=4, max_size=4))
@settings(max_examples=400)
def test_fisher_matches_enumeration(cells):
    a, b, c, d = cells
    if min(a + b, c + d, a + c, b + d) == 0:
        return
    t = [[a, b], [c, d]]
    assert abs(stats.fisher_exact_2x2(t) - float(fisher_oracle(t))) < 1e-12


@given(st.lists(st.integers(0, 400), min_size=4, max_size=4))
def test_fisher_symmetries(cells):
    a, b, c, d = cells
    if min(a + b, c + d, a + c, b + d) == 0:
        return
    p = stats.fisher_exact_2x2([[a, b], [c, d]])
    assert 0 < p <= 1
    assert p == pytest.approx(stats.fisher_exact_2x2([[b, a], [d, c]]), rel=1e-9)
    assert p == pytest.approx(stats.fisher_exact_2x2([[a, c], [b, d]]), rel=1e-9)


def test_chi_square_examples():
    assert stats.pearson_chi_square_2x2([[10, 10], [10, 10]]) == (0.0, 1.0)
    chi, p = stats.pearson_chi_square_2x2([[20, 30], [30, 20]])
    assert chi == pytest.approx(4.0, abs=1e-12)
    assert p == pytest.approx(chi2_tail_oracle(4.0, 1), rel=1e-12)
    assert p == pytest.approx(0.0455, abs=5e-5)
    with pytest.raises(ValueError):
        stats.pearson_chi_square_2x2([[0, 0], [1, 2]])


@given(st.floats(0.01, 80), st.integers(1, 30))
@settings(max_examples=100, deadline=None)
def test_chi2_tail_matches_mpmath(x, df):
    assert stats.chi2_sf(x, df) == pytest.approx(chi2_tail_oracle(x, df), rel=1e-9, abs=1e-300)


def test_t_examples():
    assert stats.students_t([1, 2, 3], [1, 2, 3]) == (0.0, 1.0)
    t, p = stats.students_t([1, 2, 3, 4], [2, 3, 4, 5])
    assert t == pytest.approx(-1 / math.sqrt(5 / 6), abs=1e-12)
    assert t == pytest.approx(-1.0954, abs=1e-4)
    assert p == pytest.approx(t_tail_oracle(t, 6), rel=1e-10)
    with pytest.raises(ValueError):
        stats.students_t([2, 2], [2, 2])


@given(st.floats(-8, 8), st.integers(1, 60))
@settings(max_examples=60, deadline=None)
def test_t_tail_matches_mpmath(t, df):
    assert stats.t_two_sided_p(t, df) == pytest.approx(t_tail_oracle(t, df), rel=1e-8, abs=1e-14)


def test_wilcoxon_examples():
    assert stats.wilcoxon_rank_sum([1, 2], [1, 2])[1] == 1.0
    assert stats.wilcoxon_rank_sum([1, 2], [3, 4])[1] == pytest.approx(2 / 6, abs=1e-15)
    assert stats.wilcoxon_rank_sum([1, 3], [2, 4])[1] == pytest.approx(4 / 6, abs=1e-15)
    with pytest.raises(ValueError):
        stats.wilcoxon_rank_sum([], [1])


@given(st.lists(st.integers(0, 6), min_size=1, max_size=6),
       st.lists(st.integers(0, 6), min_size=1, max_size=6))
@settings(max_examples=300, deadline=None)
def test_wilcoxon_matches_permutations(a, b):
    assert abs(stats.wilcoxon_rank_sum(a, b)[1] - wilcoxon_oracle(np.array(a), np.array(b))) < 1e-12


def test_wilcoxon_normal_approximation_is_close():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=40), rng.normal(0.6, size=45)
    w, p = stats.wilcoxon_rank_sum(a, b)
    from scipy.stats import mannwhitneyu
    ref = mannwhitneyu(a, b, alternative="two-sided", method="asymptotic").pvalue
    assert p == pytest.approx(ref, rel=1e-6)


def test_effect_size_examples():
    assert stats.effect_size(0.04, 0.04) == 0
    assert stats.effect_size(0.0, 0.04) == 1.0
    assert stats.effect_size(0.03, 0.04) == pytest.approx(0.25)
    assert math.isnan(stats.effect_size(0.1, 0.0))


@given(st.floats(0, 1), st.floats(0.001, 1))
def test_effect_size_recomputed_under_swap(x_i, x_c):
    e = stats.effect_size(x_i, x_c)
    assert e == pytest.approx((x_c - x_i) / x_c)
    if x_i > 0:
        assert stats.effect_size(x_c, x_i) == pytest.approx((x_i - x_c) / x_i)


def test_spearman_examples():
    assert stats.spearman([1, 2, 3], [0, 0, 1]) == pytest.approx(math.sqrt(3) / 2)
    assert stats.spearman([1, 2, 3, 4], [1, 3, 5, 9]) == pytest.approx(1.0)
    assert math.isnan(stats.spearman([1, 1, 1], [1, 2, 3]))
