import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from riskrct import gnn
from riskrct.gnn import GatParams, TrainHyper
from riskrct.selftest import gradient_check, small_graph
from riskrct.stacker import evaluate_auc


def dense_gat(X, src, dst, p: GatParams):
    """Reference: explicit loops over receivers, neighbours and heads."""
    n = len(X)
    nbrs = {i: [i] for i in range(n)}
    for s, d in zip(src, dst):
        if s != d:
            nbrs[d].append(s)
    out = []
    for h in range(p.heads):
        Z = X @ p.W[h]
        do = p.d_out
        Hh = np.zeros((n, do))
        for i in range(n):
            e = np.array([Z[i] @ p.a[h, :do] + Z[j] @ p.a[h, do:] for j in nbrs[i]])
            e = np.where(e > 0, e, p.slope * e)
            w = np.exp(e - e.max())
            w /= w.sum()
            agg = sum(wk * Z[j] for wk, j in zip(w, nbrs[i]))
            Hh[i] = gnn._act(agg, p.activation)
        out.append(Hh)
    return np.concatenate(out, axis=1)


def identity_params(d, activation="linear"):
    return GatParams(np.eye(d)[None], np.zeros((1, 2 * d)), np.zeros(d), np.zeros(d), np.zeros(d),
                     activation=activation)


def test_isolated_node_keeps_its_features():
    X = np.array([[1.5, -2.0], [0.3, 0.7]])
    H = gnn.gat_forward((np.zeros(0, int), np.zeros(0, int)), X, identity_params(2))
    np.testing.assert_allclose(H, X)


def test_symmetric_pair_has_equal_embeddings():
    p = GatParams.init(3, 4, 2, seed=1)
    X = np.tile([[0.2, -1.0, 0.5]], (2, 1))
    H = gnn.gat_forward((np.array([0, 1]), np.array([1, 0])), X, p)
    np.testing.assert_allclose(H[0], H[1])


def test_two_node_hand_set_example():
    W = np.array([[[1.0, 2.0], [0.5, -1.0]]])
    a = np.array([[0.3, -0.2, 0.8, 0.1]])
    p = GatParams(W, a, np.zeros(2), np.zeros(2), np.zeros(2), activation="linear")
    X = np.array([[1.0, 0.0], [0.0, 1.0]])
    H = gnn.gat_forward((np.array([0]), np.array([1])), X, p)
    # node 1 attends to itself and node 0
    z0, z1 = X[0] @ W[0], X[1] @ W[0]
    e_self = z1 @ a[0, :2] + z1 @ a[0, 2:]
    e_nbr = z1 @ a[0, :2] + z0 @ a[0, 2:]
    lr = lambda v: v if v > 0 else 0.2 * v  # noqa: E731
    w = np.exp([lr(e_self), lr(e_nbr)])
    w /= w.sum()
    np.testing.assert_allclose(H[1], w[0] * z1 + w[1] * z0)
    np.testing.assert_allclose(H[0], z0)


@given(st.integers(2, 7), st.lists(st.tuples(st.integers(0, 6), st.integers(0, 6)), max_size=20),
       st.integers(0, 10 ** 6), st.sampled_from(gnn.ACTIVATIONS))
@settings(max_examples=100, deadline=None)
def test_forward_matches_dense_oracle(n, edges, seed, act):
    edges = [(s % n, d % n) for s, d in edges]
    src = np.array([e[0] for e in edges], dtype=int)
    dst = np.array([e[1] for e in edges], dtype=int)
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 3))
    p = GatParams.init(3, 2, 2, seed=seed % 97, activation=act)
    np.testing.assert_allclose(gnn.gat_forward((src, dst), X, p), dense_gat(X, src, dst, p),
                               rtol=1e-10, atol=1e-12)


def test_attention_sums_to_one():
    edges, X, _, _ = small_graph()
    p = GatParams.init(X.shape[1], 3, 2)
    _, (s, d, alpha) = gnn.gat_forward(edges, X, p, return_attention=True)
    for h in range(2):
        np.testing.assert_allclose(np.bincount(d, weights=alpha[h], minlength=len(X)), 1.0)


def test_input_errors():
    p = GatParams.init(3, 2, 1)
    with pytest.raises(ValueError):
        gnn.gat_forward((np.array([0]), np.array([1])), np.zeros((2, 4)), p)
    with pytest.raises(ValueError):
        gnn.gat_forward((np.array([0]), np.array([1])), np.array([[0, 0, np.nan], [0, 0, 0.0]]), p)
    with pytest.raises(ValueError):
        GatParams(np.zeros((1, 2, 2)), np.zeros((1, 3)), np.zeros(2), np.zeros(2), np.zeros(2))


def test_zero_weights_give_one_half():
    p = identity_params(2)
    assert gnn.edge_probability(np.ones(2), np.ones(2), p) == 0.5


def test_large_logit_saturates():
    p = identity_params(2)
    p.bias = 40.0
    assert gnn.edge_probability(np.ones(2), np.ones(2), p) > 0.999


def test_hand_set_scoring_weights():
    p = GatParams(np.zeros((1, 2, 2)), np.zeros((1, 4)), np.array([0.5, -1.0]), np.array([2.0, 0.0]),
                  np.array([1.0, 1.0]), bias=-0.25)
    u, v = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    z = 0.5 * 1 + 0.0 + 0.0 - 0.25
    assert gnn.edge_probability(u, v, p) == pytest.approx(1 / (1 + np.exp(-z)), abs=1e-15)


def test_gradient_matches_central_differences():
    for seed in range(3):
        assert gradient_check(seed=seed) < 1e-4


def test_loss_nonincreasing_at_small_step():
    edges, X, pairs, y = small_graph(seed=4)
    lr = 0.5
    while True:
        _, hist = gnn.train_weak_learner(edges, X, pairs, y,
                                         TrainHyper(learning_rate=lr, epochs=40, optimizer="gd",
                                                    weight_decay=0.0))
        if np.all(np.diff(hist) <= 1e-12) or lr < 1e-4:
            break
        lr /= 2
    assert np.all(np.diff(hist) <= 1e-12)
    assert hist[-1] < hist[0]


def separable_layer(n=200, seed=0):
    """Assortative layer: edges join nodes on the same side of the rule."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 4))
    cls = X[:, 0] > 0.5
    same = [np.flatnonzero(cls == c) for c in (False, True)]
    src = rng.integers(0, n, size=4 * n)
    dst = np.array([rng.choice(same[int(cls[s])]) for s in src])
    keep = src != dst
    src, dst = src[keep], dst[keep]
    return X, src, dst, cls[src].astype(float)


def test_learns_a_separable_rule():
    X, src, dst, y = separable_layer()
    pairs = np.column_stack([src, dst])
    tr = np.arange(len(y)) % 3 != 0
    params, _ = gnn.train_weak_learner((src, dst), X, pairs[tr], y[tr],
                                       TrainHyper(learning_rate=0.05, epochs=200))
    H = gnn.gat_forward((src, dst), X, params)
    p = gnn.edge_probability(H[src[~tr]], H[dst[~tr]], params)
    assert evaluate_auc(p, y[~tr]) > 0.95


def test_training_is_deterministic():
    edges, X, pairs, y = small_graph(seed=2)
    h = TrainHyper(epochs=15)
    p1, _ = gnn.train_weak_learner(edges, X, pairs, y, h)
    p2, _ = gnn.train_weak_learner(edges, X, pairs, y, h)
    np.testing.assert_array_equal(p1.flat(), p2.flat())


def test_single_class_labels_raise():
    edges, X, pairs, _ = small_graph()
    with pytest.raises(ValueError):
        gnn.train_weak_learner(edges, X, pairs, np.zeros(len(pairs)))


def test_params_roundtrip(tmp_path):
    p = GatParams.init(5, 3, 2, seed=9)
    gnn.save_params(p, tmp_path / "p.json")
    q = gnn.load_params(tmp_path / "p.json")
    np.testing.assert_array_equal(p.flat(), q.flat())


def test_negative_sampling_ratio():
    edges, X, pairs, y = small_graph(n_nodes=30)
    pos = np.column_stack([edges.src[:3], edges.dst[:3]])
    got, labels = gnn.sample_training_pairs(edges, pos, 2, seed=0)
    assert labels.sum() == 3 and len(labels) == 9
