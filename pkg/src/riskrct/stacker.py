"""Stacking phase: per-pair rows from the weak learners and a boosted-tree metamodel."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .domain import LAYERS, N_FEATURES, N_LAYERS

try:
    import numba
except ImportError:  # pragma: no cover - numba ships with the environment
    numba = None

FORMAT = "riskrct-gbdt"
FORMAT_VERSION = 1
STACK_DIM = 2 * N_LAYERS + 2 * N_FEATURES
STACK_COLUMNS = (
    *(f"p_{layer.name}" for layer in LAYERS),
    *(f"in_{layer.name}" for layer in LAYERS),
    *(f"actor_f{i}" for i in range(N_FEATURES)),
    *(f"target_f{i}" for i in range(N_FEATURES)),
)


@dataclass(frozen=True)
class StackRow:
    probabilities: tuple[float, ...]
    present: tuple[int, ...]
    actor_features: tuple[float, ...]
    target_features: tuple[float, ...]
    label: bool = False

    def as_array(self) -> np.ndarray:
        return np.array([*self.probabilities, *self.present, *self.actor_features,
                         *self.target_features], dtype=np.float64)


def assemble_stack_features(pair, weak_outputs, features, label: bool = False) -> StackRow:
    """One stacking row for a directed pair.

    ``weak_outputs`` maps each layer to a ``{(actor, target): probability}``
    mapping; a layer without the pair contributes probability 0 and
    indicator 0.  ``features`` maps player id to a feature array.
    """
    u, v = int(pair[0]), int(pair[1])
    probs, present = [], []
    for layer in LAYERS:
        p = weak_outputs.get(layer, {}).get((u, v))
        probs.append(0.0 if p is None else float(p))
        present.append(0 if p is None else 1)
    return StackRow(tuple(probs), tuple(present),
                    tuple(np.asarray(features[u], float).tolist()),
                    tuple(np.asarray(features[v], float).tolist()), bool(label))


def stack_matrix(layer_probs: np.ndarray, present: np.ndarray, actor_features: np.ndarray,
                 target_features: np.ndarray) -> np.ndarray:
    """Vectorised rows: ``[p x5, indicator x5, actor features, target features]``."""
    layer_probs = np.where(present, layer_probs, 0.0)
    return np.column_stack([layer_probs, present.astype(np.float64), actor_features,
                            target_features])


# --- trees -------------------------------------------------------------------

@dataclass
class Tree:
    """Binary tree in preorder; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def depth(self) -> int:
        def rec(i):
            if self.feature[i] < 0:
                return 0
            return 1 + max(rec(self.left[i]), rec(self.right[i]))
        return rec(0)

    def predict_row(self, x) -> float:
        i = 0
        while self.feature[i] >= 0:
            i = self.left[i] if x[self.feature[i]] <= self.threshold[i] else self.right[i]
        return float(self.value[i])

    def scaled(self, factor: float) -> "Tree":
        return Tree(self.feature, self.threshold, self.left, self.right, self.value * factor)


@dataclass
class GbdtModel:
    trees: list[Tree]
    learning_rate: float
    base_score: float
    n_features: int
    max_depth: int
    train_loss: list[float] = field(default_factory=list)

    def raw_score(self, X) -> np.ndarray:
        X = _check_schema(X, self.n_features)
        out = np.full(X.shape[0], self.base_score)
        if self.trees:
            out += self.learning_rate * _sum_trees(self, X)
        return out

    def predict(self, X) -> np.ndarray:
        return _logistic(self.raw_score(X))


def _logistic(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


def _logloss(y, raw) -> float:
    return float(np.mean(np.logaddexp(0.0, raw) - y * raw))


def _check_schema(X, n_features):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != n_features:
        raise ValueError(f"row has {X.shape[1]} features, model expects {n_features}")
    return X


def _complete_layout(tree: Tree, depth: int):
    """Pad a tree to a complete binary tree of ``depth`` levels.

    Early leaves become always-left nodes (threshold +inf) whose subtree
    repeats the leaf value, so traversal takes exactly ``depth`` steps.
    """
    inner = (1 << depth) - 1
    feat = np.zeros(inner, dtype=np.int64)
    thr = np.full(inner, np.inf)
    leaves = np.zeros(1 << depth)

    def rec(node, slot, level):
        if level == depth:
            leaves[slot - inner] = tree.value[node]
            return
        if tree.feature[node] < 0:
            rec(node, 2 * slot + 1, level + 1)
            rec(node, 2 * slot + 2, level + 1)
            return
        feat[slot] = tree.feature[node]
        thr[slot] = tree.threshold[node]
        rec(tree.left[node], 2 * slot + 1, level + 1)
        rec(tree.right[node], 2 * slot + 2, level + 1)

    rec(0, 0, 0)
    return feat, thr, leaves


def _flatten(model: GbdtModel):
    depth = max(1, max(t.depth() for t in model.trees))
    parts = [_complete_layout(t, depth) for t in model.trees]
    return (np.stack([p[0] for p in parts]), np.stack([p[1] for p in parts]),
            np.stack([p[2] for p in parts]))


def _sum_trees_numpy(model, X):
    total = np.zeros(X.shape[0])
    rows = np.arange(X.shape[0])
    for t in model.trees:
        idx = np.zeros(X.shape[0], dtype=np.int64)
        for _ in range(model.max_depth + 1):
            f = t.feature[idx]
            inner = f >= 0
            if not inner.any():
                break
            go_left = X[rows, np.maximum(f, 0)] <= t.threshold[idx]
            idx = np.where(inner, np.where(go_left, t.left[idx], t.right[idx]), idx)
        total += t.value[idx]
    return total


if numba is not None:
    @numba.njit(cache=True)
    def _sum_trees_jit(X, feat, thr, leaves):  # pragma: no cover
        n = X.shape[0]
        n_trees, inner = feat.shape
        depth = 0
        while (1 << depth) - 1 < inner:
            depth += 1
        # eight rows advance through each tree together so the dependent
        # loads of one row overlap with the others
        out = np.zeros(n)
        block = 8
        idx = np.zeros(block, dtype=np.int64)
        acc = np.zeros(block)
        for r0 in range(0, n, block):
            nb = min(block, n - r0)
            acc[:] = 0.0
            for t in range(n_trees):
                idx[:] = 0
                for _ in range(depth):
                    for b in range(nb):
                        i = idx[b]
                        idx[b] = 2 * i + 1 + (X[r0 + b, feat[t, i]] > thr[t, i])
                for b in range(nb):
                    acc[b] += leaves[t, idx[b] - inner]
            for b in range(nb):
                out[r0 + b] = acc[b]
        return out


def _sum_trees(model, X):
    if numba is None or X.shape[0] < 256:
        return _sum_trees_numpy(model, X)
    return _sum_trees_jit(np.ascontiguousarray(X), *_flatten(model))


# --- training ----------------------------------------------------------------

@dataclass
class GbdtHyper:
    rounds: int = 200
    max_depth: int = 4
    learning_rate: float = 0.1
    min_leaf: int = 20
    reg_lambda: float = 1.0

    def __post_init__(self):
        if self.rounds < 0 or self.max_depth < 1 or self.min_leaf < 1:
            raise ValueError("rounds >= 0, max_depth >= 1 and min_leaf >= 1 required")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")


def best_split(x_sorted, g_sorted, h_sorted, min_leaf: int, reg_lambda: float):
    """Best threshold on one feature for rows already sorted by value.

    Returns ``(gain, threshold)``; ``gain`` is ``-inf`` without a valid split.
    Among equal gains the lowest threshold wins.
    """
    n = len(x_sorted)
    if n < 2 * min_leaf:
        return -np.inf, np.nan
    G, Hs = g_sorted.sum(), h_sorted.sum()
    gl = np.cumsum(g_sorted)[:-1]
    hl = np.cumsum(h_sorted)[:-1]
    pos = np.arange(1, n)
    valid = (x_sorted[1:] > x_sorted[:-1]) & (pos >= min_leaf) & (n - pos >= min_leaf)
    if not valid.any():
        return -np.inf, np.nan
    gain = gl ** 2 / (hl + reg_lambda) + (G - gl) ** 2 / (Hs - hl + reg_lambda) - G ** 2 / (Hs + reg_lambda)
    gain = np.where(valid, gain, -np.inf)
    k = int(np.argmax(gain))
    return float(gain[k]), float(0.5 * (x_sorted[k] + x_sorted[k + 1]))


def _grow_tree(X, order, g, h, hyper: GbdtHyper) -> Tree:
    n, m = X.shape
    feature, threshold, left, right, value = [], [], [], [], []

    def leaf(rows):
        value.append(-g[rows].sum() / (h[rows].sum() + hyper.reg_lambda))
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)

    # level-wise search; nodes are emitted in preorder afterwards
    splits = {}
    frontier = [((), np.ones(n, dtype=bool))]
    for depth in range(hyper.max_depth):
        nxt = []
        for path, mask in frontier:
            best = (0.0, -1, np.nan)
            for f in range(m):
                rows = order[f][mask[order[f]]]
                gain, thr = best_split(X[rows, f], g[rows], h[rows], hyper.min_leaf, hyper.reg_lambda)
                if gain > best[0] + 1e-12:
                    best = (gain, f, thr)
            if best[1] >= 0:
                splits[path] = (best[1], best[2])
                go = X[:, best[1]] <= best[2]
                nxt.append((path + (0,), mask & go))
                nxt.append((path + (1,), mask & ~go))
            else:
                splits[path] = None
        frontier = nxt
    for path, _ in frontier:
        splits[path] = None

    def emit(path, mask):
        idx = len(feature)
        s = splits.get(path)
        if s is None:
            leaf(np.flatnonzero(mask))
            return idx
        f, thr = s
        feature.append(f)
        threshold.append(thr)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        go = X[:, f] <= thr
        left[idx] = emit(path + (0,), mask & go)
        right[idx] = emit(path + (1,), mask & ~go)
        return idx

    emit((), np.ones(n, dtype=bool))
    return Tree(np.array(feature, dtype=np.int64), np.array(threshold, dtype=np.float64),
                np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                np.array(value, dtype=np.float64))


def train_gbdt(X, y, hyper: GbdtHyper | None = None) -> GbdtModel:
    """Newton-boosted trees on log-loss.

    Each round fits a depth-bounded tree to the gradient and hessian of the
    current log-loss.  A round that would raise the training loss has its
    leaf values halved until it does not (or is dropped), so the recorded
    training loss never increases.
    """
    hyper = hyper or GbdtHyper()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be 2-D with one label per row")
    if y.size == 0 or y.min() == y.max():
        raise ValueError("training labels must contain both classes")
    rate = y.mean()
    base = float(np.log(rate / (1 - rate)))
    order = [np.argsort(X[:, f], kind="stable") for f in range(X.shape[1])]
    raw = np.full(len(y), base)
    loss = _logloss(y, raw)
    model = GbdtModel([], hyper.learning_rate, base, X.shape[1], hyper.max_depth, [loss])
    for _ in range(hyper.rounds):
        p = _logistic(raw)
        tree = _grow_tree(X, order, p - y, p * (1 - p), hyper)
        step = np.array([tree.predict_row(x) for x in X]) if len(X) < 256 else _tree_values(tree, X)
        factor = 1.0
        for _ in range(40):
            new_raw = raw + hyper.learning_rate * factor * step
            new_loss = _logloss(y, new_raw)
            if new_loss <= loss:
                break
            factor *= 0.5
        else:
            factor, new_raw, new_loss = 0.0, raw, loss
        if factor != 1.0:
            tree = tree.scaled(factor)
        model.trees.append(tree)
        raw, loss = new_raw, new_loss
        model.train_loss.append(loss)
    return model


def _tree_values(tree: Tree, X):
    idx = np.zeros(len(X), dtype=np.int64)
    rows = np.arange(len(X))
    while True:
        f = tree.feature[idx]
        inner = f >= 0
        if not inner.any():
            return tree.value[idx]
        go = X[rows, np.maximum(f, 0)] <= tree.threshold[idx]
        idx = np.where(inner, np.where(go, tree.left[idx], tree.right[idx]), idx)


def predict_gbdt(model: GbdtModel, row) -> float | np.ndarray:
    """``logistic(base + lr * sum of tree outputs)`` for one row or a batch."""
    X = np.asarray(row, dtype=np.float64)
    p = model.predict(X)
    return float(p[0]) if X.ndim == 1 else p


def predict_row_reference(model: GbdtModel, row) -> float:
    x = _check_schema(row, model.n_features)[0]
    raw = model.base_score + model.learning_rate * sum(t.predict_row(x) for t in model.trees)
    return float(_logistic(raw))


def evaluate_auc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative (ties count 1/2)."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative")
    r = rankdata(s)
    return float((r[y].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


# --- persistence -------------------------------------------------------------

def _tree_to_list(t: Tree):
    return [[int(f), float(th), float(v)] for f, th, v in zip(t.feature, t.threshold, t.value)]


def _tree_from_list(nodes) -> Tree:
    feature = np.array([n[0] for n in nodes], dtype=np.int64)
    threshold = np.array([n[1] for n in nodes], dtype=np.float64)
    value = np.array([n[2] for n in nodes], dtype=np.float64)
    left = np.full(len(nodes), -1, dtype=np.int64)
    right = np.full(len(nodes), -1, dtype=np.int64)

    def rec(i):
        if feature[i] < 0:
            return i + 1
        left[i] = i + 1
        nxt = rec(i + 1)
        right[i] = nxt
        return rec(nxt)

    if rec(0) != len(nodes):
        raise ValueError("malformed preorder tree")
    return Tree(feature, threshold, left, right, value)


def model_to_dict(model: GbdtModel) -> dict:
    return {
        "n_features": model.n_features, "max_depth": model.max_depth,
        "learning_rate": model.learning_rate, "base_score": model.base_score,
        "trees": [_tree_to_list(t) for t in model.trees],
        "train_loss": list(model.train_loss),
    }


def model_from_dict(d: dict) -> GbdtModel:
    return GbdtModel([_tree_from_list(t) for t in d["trees"]], d["learning_rate"],
                     d["base_score"], d["n_features"], d["max_depth"], list(d["train_loss"]))


def save_gbdt(model: GbdtModel, path) -> None:
    doc = {"format": FORMAT, "version": FORMAT_VERSION, **model_to_dict(model)}
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_gbdt(path) -> GbdtModel:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != FORMAT or doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"{path}: not a {FORMAT} v{FORMAT_VERSION} file")
    return model_from_dict(doc)


def write_scored_edges(path, day: int, actor, target, prob, header: dict | None = None) -> None:
    lines = [f"# {k}={v}" for k, v in (header or {}).items()]
    lines.append("day,actor,target,probability")
    lines += [f"{day},{a},{t},{p!r}" for a, t, p in zip(np.asarray(actor).tolist(),
                                                       np.asarray(target).tolist(),
                                                       np.asarray(prob, dtype=float).tolist())]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
