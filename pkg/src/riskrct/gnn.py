"""Graph-attention weak learners, one per interaction layer.

A single multi-head GAT layer embeds every player from their own features
and their in-neighbours; a pairwise head turns (actor, target) embeddings
into a violation logit.  Gradients are derived by hand and trained full
batch, so training is deterministic for a given seed.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

FORMAT = "riskrct-gat"
FORMAT_VERSION = 1
ACTIVATIONS = ("elu", "tanh", "linear")


@dataclass
class GatParams:
    W: np.ndarray        # (heads, d_in, d_out)
    a: np.ndarray        # (heads, 2 * d_out): [receiver part | neighbour part]
    w_src: np.ndarray    # (heads * d_out,)
    w_dst: np.ndarray    # (heads * d_out,)
    w_prod: np.ndarray   # (heads * d_out,)
    bias: float = 0.0
    slope: float = 0.2
    activation: str = "elu"

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.a = np.asarray(self.a, dtype=np.float64)
        for name in ("w_src", "w_dst", "w_prod"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        self.bias = float(self.bias)
        if self.W.ndim != 3 or self.W.shape[0] < 1:
            raise ValueError("W must have shape (heads>=1, d_in, d_out)")
        h, _, d_out = self.W.shape
        if self.a.shape != (h, 2 * d_out):
            raise ValueError(f"a must have shape {(h, 2 * d_out)}, got {self.a.shape}")
        for name in ("w_src", "w_dst", "w_prod"):
            if getattr(self, name).shape != (h * d_out,):
                raise ValueError(f"{name} must have length {h * d_out}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not all(np.all(np.isfinite(v)) for v in self.arrays()):
            raise ValueError("non-finite parameter")

    @property
    def heads(self) -> int:
        return self.W.shape[0]

    @property
    def d_in(self) -> int:
        return self.W.shape[1]

    @property
    def d_out(self) -> int:
        return self.W.shape[2]

    def arrays(self) -> list[np.ndarray]:
        return [self.W, self.a, self.w_src, self.w_dst, self.w_prod, np.array([self.bias])]

    def flat(self) -> np.ndarray:
        return np.concatenate([x.ravel() for x in self.arrays()])

    def with_flat(self, theta: np.ndarray) -> "GatParams":
        parts, i = [], 0
        for x in self.arrays():
            parts.append(theta[i:i + x.size].reshape(x.shape))
            i += x.size
        return GatParams(*parts[:5], bias=float(parts[5][0]), slope=self.slope,
                         activation=self.activation)

    @classmethod
    def init(cls, d_in: int, d_out: int = 8, heads: int = 2, seed: int = 0,
             slope: float = 0.2, activation: str = "elu") -> "GatParams":
        rng = np.random.default_rng([seed, 0x6A7])
        lim = np.sqrt(6.0 / (d_in + d_out))
        W = rng.uniform(-lim, lim, size=(heads, d_in, d_out))
        a = rng.uniform(-lim, lim, size=(heads, 2 * d_out)) * 0.5
        k = heads * d_out
        s = 1.0 / np.sqrt(k)
        return cls(W, a, rng.normal(0, s, k), rng.normal(0, s, k), rng.normal(0, s, k),
                   0.0, slope, activation)


@dataclass
class TrainHyper:
    learning_rate: float = 0.01
    epochs: int = 150
    negative_ratio: int = 5
    weight_decay: float = 1e-4
    seed: int = 0
    heads: int = 2
    d_out: int = 8
    optimizer: str = "adam"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.negative_ratio < 1:
            raise ValueError("negative_ratio must be >= 1")
        if self.optimizer not in ("adam", "gd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


# --- forward -----------------------------------------------------------------

def _act(z, kind):
    if kind == "elu":
        return np.where(z > 0, z, np.expm1(np.minimum(z, 0)))
    if kind == "tanh":
        return np.tanh(z)
    return z


def _act_grad(z, kind):
    if kind == "elu":
        return np.where(z > 0, 1.0, np.exp(np.minimum(z, 0)))
    if kind == "tanh":
        return 1.0 - np.tanh(z) ** 2
    return np.ones_like(z)


def _edges_with_self_loops(src, dst, n, receivers=None):
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    keep = src != dst
    src, dst = src[keep], dst[keep]
    loops = np.arange(n, dtype=np.int64) if receivers is None else np.asarray(receivers, dtype=np.int64)
    if receivers is not None:
        mask = np.zeros(n, dtype=bool)
        mask[loops] = True
        sel = mask[dst]
        src, dst = src[sel], dst[sel]
    return np.concatenate([src, loops]), np.concatenate([dst, loops])


@dataclass
class _Cache:
    src: np.ndarray
    dst: np.ndarray
    n: int
    Z: list = field(default_factory=list)
    raw: list = field(default_factory=list)
    alpha: list = field(default_factory=list)
    agg: list = field(default_factory=list)


def _check_inputs(X, params):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.d_in:
        raise ValueError(f"features must have shape (n, {params.d_in}), got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite feature value")
    return X


def _forward(X, src, dst, params: GatParams, receivers=None):
    n = X.shape[0]
    s, d = _edges_with_self_loops(src, dst, n, receivers)
    cache = _Cache(s, d, n)
    heads = []
    do = params.d_out
    for h in range(params.heads):
        Z = X @ params.W[h]
        e = Z[d] @ params.a[h, :do] + Z[s] @ params.a[h, do:]
        cache.raw.append(e)
        lr = np.where(e > 0, e, params.slope * e)
        mx = np.full(n, -np.inf)
        np.maximum.at(mx, d, lr)
        ex = np.exp(lr - mx[d])
        den = np.bincount(d, weights=ex, minlength=n)
        alpha = ex / den[d]
        A = sparse.csr_matrix((alpha, (d, s)), shape=(n, n))
        agg = A @ Z
        cache.Z.append(Z)
        cache.alpha.append(alpha)
        cache.agg.append(agg)
        heads.append(_act(agg, params.activation))
    return np.concatenate(heads, axis=1), cache


def gat_forward(layer_edges, features, params: GatParams, return_attention: bool = False):
    """Node embeddings for one layer graph.

    ``layer_edges`` is ``(src, dst)`` (or an object with ``src``/``dst``)
    over node indices ``0..n-1`` matching the rows of ``features``; a self
    loop is added to every node.  Attention for node ``i`` is a softmax over
    its in-neighbours plus itself.
    """
    src, dst = (layer_edges.src, layer_edges.dst) if hasattr(layer_edges, "src") else layer_edges
    X = _check_inputs(features, params)
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    if len(src) and (max(src.max(), dst.max()) >= len(X) or min(src.min(), dst.min()) < 0):
        raise ValueError("edge endpoint outside the feature matrix")
    H, cache = _forward(X, src, dst, params)
    if return_attention:
        return H, (cache.src, cache.dst, cache.alpha)
    return H


def _logistic(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def pair_logits(embed_u, embed_v, params: GatParams):
    embed_u = np.atleast_2d(embed_u)
    embed_v = np.atleast_2d(embed_v)
    return (embed_u @ params.w_src + embed_v @ params.w_dst
            + (embed_u * embed_v) @ params.w_prod + params.bias)


def edge_probability(embed_u, embed_v, params: GatParams):
    """Logistic of the pairwise score; scalar in, scalar out."""
    scalar = np.ndim(embed_u) == 1
    p = _logistic(pair_logits(embed_u, embed_v, params))
    return float(p[0]) if scalar else p


# --- loss and gradient ---------------------------------------------------------

def _bce(logits, y):
    # log(1 + exp(z)) - y z, computed stably
    return float(np.mean(np.logaddexp(0.0, logits) - y * logits))


def loss_and_grad(params: GatParams, X, src, dst, pairs, y, weight_decay: float = 0.0):
    """Mean binary cross-entropy over ``pairs`` plus L2 penalty, and its gradient.

    The gradient is returned as a GatParams-shaped flat vector.
    """
    X = _check_inputs(X, params)
    pairs = np.asarray(pairs, dtype=np.int64)
    y = np.asarray(y, dtype=np.float64)
    receivers = np.unique(pairs)
    H, c = _forward(X, src, dst, params, receivers)
    Eu, Ev = H[pairs[:, 0]], H[pairs[:, 1]]
    z = pair_logits(Eu, Ev, params)
    theta = params.flat()
    loss = _bce(z, y) + 0.5 * weight_decay * float(theta @ theta)

    g = (_logistic(z) - y) / len(y)
    g_ws = Eu.T @ g
    g_wd = Ev.T @ g
    g_wp = (Eu * Ev).T @ g
    g_b = g.sum()
    dH = np.zeros_like(H)
    np.add.at(dH, pairs[:, 0], g[:, None] * (params.w_src + params.w_prod * Ev))
    np.add.at(dH, pairs[:, 1], g[:, None] * (params.w_dst + params.w_prod * Eu))

    do = params.d_out
    gW = np.zeros_like(params.W)
    ga = np.zeros_like(params.a)
    s, d, n = c.src, c.dst, c.n
    for h in range(params.heads):
        Z, alpha, agg, e = c.Z[h], c.alpha[h], c.agg[h], c.raw[h]
        dagg = dH[:, h * do:(h + 1) * do] * _act_grad(agg, params.activation)
        A = sparse.csr_matrix((alpha, (d, s)), shape=(n, n))
        dZ = A.T @ dagg
        dalpha = np.einsum("ij,ij->i", dagg[d], Z[s])
        tot = np.bincount(d, weights=alpha * dalpha, minlength=n)
        dl = alpha * (dalpha - tot[d])
        de = dl * np.where(e > 0, 1.0, params.slope)
        ds_recv = np.bincount(d, weights=de, minlength=n)
        ds_nbr = np.bincount(s, weights=de, minlength=n)
        dZ += np.outer(ds_recv, params.a[h, :do]) + np.outer(ds_nbr, params.a[h, do:])
        ga[h, :do] = Z.T @ ds_recv
        ga[h, do:] = Z.T @ ds_nbr
        gW[h] = X.T @ dZ
    grad = np.concatenate([gW.ravel(), ga.ravel(), g_ws, g_wd, g_wp, [g_b]])
    return loss, grad + weight_decay * theta


# --- training ----------------------------------------------------------------

def sample_training_pairs(layer_edges, positive_pairs, ratio: int, seed: int):
    """Positives present in the layer plus up to ``ratio`` negatives each.

    Negatives are drawn uniformly without replacement from the layer's
    edges that are not positive.
    """
    src = np.asarray(layer_edges.src, dtype=np.int64)
    dst = np.asarray(layer_edges.dst, dtype=np.int64)
    span = int(max(src.max(initial=0), dst.max(initial=0),
                   np.max(positive_pairs, initial=0))) + 1
    edge_keys = src * span + dst
    pos = np.asarray(positive_pairs, dtype=np.int64).reshape(-1, 2)
    pos_keys = np.intersect1d(pos[:, 0] * span + pos[:, 1], edge_keys)
    neg_pool = np.setdiff1d(edge_keys, pos_keys)
    rng = np.random.default_rng([seed, 0x5A])
    m = min(len(neg_pool), ratio * len(pos_keys))
    neg_keys = np.sort(rng.choice(neg_pool, size=m, replace=False)) if m else neg_pool[:0]
    keys = np.concatenate([pos_keys, neg_keys])
    pairs = np.column_stack([keys // span, keys % span])
    y = np.concatenate([np.ones(len(pos_keys)), np.zeros(len(neg_keys))])
    return pairs, y


def train_weak_learner(layer_edges, features, pairs, labels, hyper: TrainHyper | None = None,
                       activation: str = "elu"):
    """Fit one layer's GAT by full-batch gradient descent.

    Returns ``(params, loss_history)`` where the history holds the training
    loss before every epoch's update plus the final loss.
    """
    hyper = hyper or TrainHyper()
    y = np.asarray(labels, dtype=np.float64)
    if y.size == 0 or y.min() == y.max():
        raise ValueError("training labels must contain both classes")
    src, dst = (layer_edges.src, layer_edges.dst) if hasattr(layer_edges, "src") else layer_edges
    X = np.asarray(features, dtype=np.float64)
    params = GatParams.init(X.shape[1], hyper.d_out, hyper.heads, hyper.seed, activation=activation)
    theta = params.flat()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    b1, b2, eps = 0.9, 0.999, 1e-8
    history = []
    for t in range(1, hyper.epochs + 1):
        loss, g = loss_and_grad(params, X, src, dst, pairs, y, hyper.weight_decay)
        history.append(loss)
        if hyper.optimizer == "gd":
            theta = theta - hyper.learning_rate * g
        else:
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            theta = theta - hyper.learning_rate * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
        params = params.with_flat(theta)
    loss, _ = loss_and_grad(params, X, src, dst, pairs, y, hyper.weight_decay)
    history.append(loss)
    return params, history


def score_edges(layer_edges, features, params: GatParams) -> np.ndarray:
    """Probability for every edge of the layer, in edge order."""
    if len(layer_edges.src) == 0:
        return np.zeros(0)
    H = gat_forward(layer_edges, features, params)
    return _logistic(pair_logits(H[layer_edges.src], H[layer_edges.dst], params))


# --- persistence -------------------------------------------------------------

def params_to_dict(params: GatParams) -> dict:
    return {
        "heads": params.heads, "d_in": params.d_in, "d_out": params.d_out,
        "slope": params.slope, "activation": params.activation,
        "W": params.W.tolist(), "a": params.a.tolist(),
        "w_src": params.w_src.tolist(), "w_dst": params.w_dst.tolist(),
        "w_prod": params.w_prod.tolist(), "bias": params.bias,
    }


def params_from_dict(d: dict) -> GatParams:
    p = GatParams(d["W"], d["a"], d["w_src"], d["w_dst"], d["w_prod"], d["bias"],
                  d["slope"], d["activation"])
    if (p.heads, p.d_in, p.d_out) != (d["heads"], d["d_in"], d["d_out"]):
        raise ValueError("dimension header does not match stored arrays")
    return p


def save_params(params: GatParams, path) -> None:
    doc = {"format": FORMAT, "version": FORMAT_VERSION, **params_to_dict(params)}
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_params(path) -> GatParams:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != FORMAT or doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"{path}: not a {FORMAT} v{FORMAT_VERSION} file")
    return params_from_dict(doc)
