"""Exact and classical tests used by the trial analysis."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special
from scipy.stats import rankdata

FISHER_RELATIVE_SLACK = 1e-7
WILCOXON_EXACT_MAX_N = 20


@dataclass(frozen=True)
class ContingencyTable2x2:
    a: int
    b: int
    c: int
    d: int

    def __post_init__(self):
        for name in "abcd":
            v = getattr(self, name)
            if v < 0 or int(v) != v:
                raise ValueError(f"cell {name} must be a nonnegative integer, got {v}")

    @classmethod
    def of(cls, table) -> "ContingencyTable2x2":
        if isinstance(table, ContingencyTable2x2):
            return table
        (a, b), (c, d) = table
        return cls(int(a), int(b), int(c), int(d))

    @property
    def rows(self) -> tuple[int, int]:
        return self.a + self.b, self.c + self.d

    @property
    def cols(self) -> tuple[int, int]:
        return self.a + self.c, self.b + self.d

    @property
    def n(self) -> int:
        return self.a + self.b + self.c + self.d


def _log_comb(n, k):
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def fisher_exact_2x2(table) -> float:
    """Two-sided Fisher exact p-value.

    Sums the hypergeometric probabilities of every table with the observed
    margins whose probability does not exceed the observed one (relative
    slack 1e-7 for float ties).
    """
    t = ContingencyTable2x2.of(table)
    r1, r2 = t.rows
    c1, _ = t.cols
    if min(*t.rows, *t.cols) == 0:
        raise ValueError(f"Fisher test needs positive margins, got {t}")
    lo, hi = max(0, c1 - r2), min(r1, c1)
    ks = np.arange(lo, hi + 1)
    logp = np.array([_log_comb(r1, k) + _log_comb(r2, c1 - k) for k in ks]) - _log_comb(t.n, c1)
    # normalise by the mode to keep the sum well conditioned
    ref = logp.max()
    w = np.exp(logp - ref)
    obs = w[t.a - lo]
    total = w.sum()
    p = w[w <= obs * (1 + FISHER_RELATIVE_SLACK)].sum() / total
    return float(min(1.0, p))


def chi2_sf(x: float, df: float) -> float:
    """Upper tail of the chi-square distribution (regularized upper gamma)."""
    if x <= 0:
        return 1.0
    return float(special.gammaincc(df / 2.0, x / 2.0))


def t_two_sided_p(t: float, df: float) -> float:
    """Two-sided tail of Student's t via the regularized incomplete beta."""
    return float(special.betainc(df / 2.0, 0.5, df / (df + t * t)))


def pearson_chi_square_2x2(table) -> tuple[float, float]:
    """Pearson statistic N(ad-bc)^2/(r1 r2 c1 c2) without continuity correction, df=1."""
    t = ContingencyTable2x2.of(table)
    r1, r2 = t.rows
    c1, c2 = t.cols
    if min(r1, r2, c1, c2) == 0:
        raise ValueError(f"chi-square test needs positive expected counts, got {t}")
    stat = t.n * (t.a * t.d - t.b * t.c) ** 2 / (r1 * r2 * c1 * c2)
    return float(stat), chi2_sf(stat, 1)


def students_t(sample_a, sample_b) -> tuple[float, float]:
    """Pooled-variance two-sample t statistic and two-sided p (df = n1+n2-2)."""
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each sample needs at least two values")
    df = len(a) + len(b) - 2
    pooled = (((a - a.mean()) ** 2).sum() + ((b - b.mean()) ** 2).sum()) / df
    if pooled <= 0:
        raise ValueError("pooled variance is zero")
    t = (a.mean() - b.mean()) / math.sqrt(pooled * (1 / len(a) + 1 / len(b)))
    return float(t), t_two_sided_p(t, df)


def _rank_sum_distribution(doubled_ranks: np.ndarray, n1: int) -> dict[int, int]:
    """Counts of every rank sum (in doubled units) over all n1-subsets."""
    # dp[j][s]: number of j-subsets of the ranks seen so far with sum s
    dp = [dict() for _ in range(n1 + 1)]
    dp[0][0] = 1
    for r in doubled_ranks.tolist():
        for j in range(min(n1, len(dp) - 1), 0, -1):
            prev = dp[j - 1]
            cur = dp[j]
            for s, c in prev.items():
                cur[s + r] = cur.get(s + r, 0) + c
    return dp[n1]


def wilcoxon_rank_sum(sample_a, sample_b) -> tuple[float, float]:
    """Rank sum of ``sample_a`` in the pooled sample and its two-sided p.

    Exact over all rank assignments (mid-ranks for ties) when the pooled
    size is at most 20; otherwise a normal approximation with tie and
    continuity correction.  Two-sided means ``|W - E[W]|`` at least as large
    as observed.
    """
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    n1, n2 = len(a), len(b)
    if n1 == 0 or n2 == 0:
        raise ValueError("both samples must be nonempty")
    ranks = rankdata(np.concatenate([a, b]))
    w = float(ranks[:n1].sum())
    n = n1 + n2
    mean = n1 * (n + 1) / 2.0
    if n <= WILCOXON_EXACT_MAX_N:
        doubled = np.rint(2 * ranks).astype(np.int64)
        dist = _rank_sum_distribution(doubled, n1)
        obs_dev = abs(round(2 * w) - round(2 * mean))
        total = sum(dist.values())
        extreme = sum(c for s, c in dist.items() if abs(s - round(2 * mean)) >= obs_dev)
        return w, float(extreme / total)
    _, counts = np.unique(ranks, return_counts=True)
    tie = (counts ** 3 - counts).sum()
    var = n1 * n2 / 12.0 * ((n + 1) - tie / (n * (n - 1)))
    if var <= 0:
        return w, 1.0
    z = max(abs(w - mean) - 0.5, 0.0) / math.sqrt(var)
    return w, float(min(1.0, math.erfc(z / math.sqrt(2))))


def effect_size(x_i: float, x_c: float) -> float:
    """Relative reduction (x_c - x_i) / x_c; NaN when the control rate is zero."""
    if x_c <= 0:
        return float("nan")
    return (x_c - x_i) / x_c


def spearman(x, y) -> float:
    """Spearman rank correlation (Pearson on mid-ranks); NaN if either is constant."""
    rx = rankdata(np.asarray(x, dtype=np.float64))
    ry = rankdata(np.asarray(y, dtype=np.float64))
    rx -= rx.mean()
    ry -= ry.mean()
    den = math.sqrt(float((rx * rx).sum() * (ry * ry).sum()))
    if den == 0:
        return float("nan")
    return float((rx * ry).sum() / den)
