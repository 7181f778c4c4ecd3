"""Quick oracle checks bundled with the command-line tool.

Each check compares a production routine with a slow, independent
reference: exhaustive table enumeration for Fisher's test, permutation
enumeration for the rank-sum test, central differences for the attention
network's gradients and brute-force split search for the boosted trees.
"""
from __future__ import annotations

import itertools
import math
import time
from fractions import Fraction

import numpy as np
from scipy.stats import rankdata

from . import gnn, stacker, stats
from .domain import LayerEdges


def fisher_oracle(table) -> Fraction:
    (a, b), (c, d) = table
    r1, r2, c1 = a + b, c + d, a + c
    n = r1 + r2

    def prob(k):
        return Fraction(math.comb(r1, k) * math.comb(r2, c1 - k), math.comb(n, c1))

    ks = range(max(0, c1 - r2), min(r1, c1) + 1)
    obs = prob(a)
    return sum((prob(k) for k in ks if prob(k) <= obs), Fraction(0))


def wilcoxon_oracle(a, b) -> float:
    pooled = np.concatenate([a, b]).astype(float)
    ranks = rankdata(pooled)
    n1, n = len(a), len(pooled)
    mean = n1 * (n + 1) / 2.0
    obs = abs(ranks[:n1].sum() - mean)
    hits = total = 0
    for idx in itertools.combinations(range(n), n1):
        total += 1
        hits += abs(ranks[list(idx)].sum() - mean) >= obs - 1e-9
    return hits / total


def check_fisher(max_n: int = 12) -> float:
    worst = 0.0
    for n in range(1, max_n + 1):
        for a, b, c in itertools.product(range(n + 1), repeat=3):
            d = n - a - b - c
            if d < 0 or min(a + b, c + d, a + c, b + d) == 0:
                continue
            t = [[a, b], [c, d]]
            worst = max(worst, abs(stats.fisher_exact_2x2(t) - float(fisher_oracle(t))))
    return worst


def check_wilcoxon(cases: int = 40, seed: int = 1) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        n1, n2 = rng.integers(1, 7, size=2)
        a, b = rng.integers(0, 6, size=n1), rng.integers(0, 6, size=n2)
        worst = max(worst, abs(stats.wilcoxon_rank_sum(a, b)[1] - wilcoxon_oracle(a, b)))
    return worst


def small_graph(n_nodes: int = 10, d_in: int = 4, seed: int = 0):
    rng = np.random.default_rng(seed)
    src, dst = [], []
    for u in range(n_nodes):
        for v in rng.choice(n_nodes, size=3, replace=False):
            if u != v:
                src.append(u)
                dst.append(int(v))
    edges = LayerEdges(np.array(src, dtype=np.int32), np.array(dst, dtype=np.int32),
                       np.ones(len(src), dtype=np.int32))
    X = rng.normal(size=(n_nodes, d_in))
    pairs = np.column_stack([edges.src, edges.dst]).astype(np.int64)
    y = (rng.random(len(pairs)) < 0.4).astype(float)
    return edges, X, pairs, y


def gradient_check(seed: int = 0, heads: int = 2, d_out: int = 3, eps: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients."""
    edges, X, pairs, y = small_graph(seed=seed)
    params = gnn.GatParams.init(X.shape[1], d_out, heads, seed)
    src, dst = edges.src.astype(np.int64), edges.dst.astype(np.int64)
    _, grad = gnn.loss_and_grad(params, X, src, dst, pairs, y, 1e-3)
    theta = params.flat()
    num = np.empty_like(theta)
    for i in range(len(theta)):
        step = np.zeros_like(theta)
        step[i] = eps
        lp, _ = gnn.loss_and_grad(params.with_flat(theta + step), X, src, dst, pairs, y, 1e-3)
        lm, _ = gnn.loss_and_grad(params.with_flat(theta - step), X, src, dst, pairs, y, 1e-3)
        num[i] = (lp - lm) / (2 * eps)
    scale = np.maximum(np.abs(grad) + np.abs(num), 1e-8)
    return float(np.max(np.abs(grad - num) / scale))


def brute_force_stump(x, y, min_leaf: int, reg_lambda: float = 1.0):
    """Best single split of log-loss gradients at base score logit(mean(y))."""
    p = y.mean()
    g = p - y
    h = np.full(len(y), p * (1 - p))
    G, H = g.sum(), h.sum()
    best = (-np.inf, None)
    for t in np.unique(x)[:-1]:
        left = x <= t
        if left.sum() < min_leaf or (~left).sum() < min_leaf:
            continue
        gl, hl = g[left].sum(), h[left].sum()
        gain = gl ** 2 / (hl + reg_lambda) + (G - gl) ** 2 / (H - hl + reg_lambda) - G ** 2 / (H + reg_lambda)
        if gain > best[0] + 1e-12:
            best = (gain, t)
    return best


def check_stumps(datasets: int = 10, rows: int = 200, seed: int = 3) -> int:
    """Number of datasets where the trained stump disagrees with brute force."""
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(datasets):
        x = rng.integers(0, 40, size=rows).astype(float)
        y = (rng.random(rows) < 1 / (1 + np.exp(-(x - 20) / 6))).astype(float)
        model = stacker.train_gbdt(x[:, None], y, stacker.GbdtHyper(rounds=1, max_depth=1, min_leaf=20))
        _, t = brute_force_stump(x, y, 20)
        tree = model.trees[0]
        lo = np.max(x[x <= t]) if t is not None else None
        ok = t is not None and tree.feature[0] == 0 and lo <= tree.threshold[0] < np.min(x[x > t])
        bad += not ok
    return bad


CHECKS = (
    ("fisher vs enumeration (N<=12)", check_fisher, lambda v: v < 1e-12),
    ("rank-sum vs permutation enumeration", check_wilcoxon, lambda v: v < 1e-12),
    ("GAT gradient vs central differences", gradient_check, lambda v: v < 1e-4),
    ("GBDT stump vs brute-force split", check_stumps, lambda v: v == 0),
)


def run(out=print) -> bool:
    ok_all = True
    for name, fn, ok in CHECKS:
        t = time.perf_counter()
        value = fn()
        good = bool(ok(value))
        ok_all &= good
        out(f"{'PASS' if good else 'FAIL'}  {name}: {value:.3g} ({time.perf_counter() - t:.1f}s)")
    return ok_all
