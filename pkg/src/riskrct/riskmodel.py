"""Two-phase relationship risk model: per-layer GAT weak learners stacked by GBDT."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import gnn, stacker
from .domain import (FEATURE_WINDOW_DAYS, LAYERS, EventLog, Layer, Population,
                     build_multiplex_graph, feature_matrix, violating_pairs)

FORMAT = "riskrct-riskmodel"
FORMAT_VERSION = 1


@dataclass
class ScoredEdges:
    day: int
    actor: np.ndarray
    target: np.ndarray
    probability: np.ndarray
    layer_probs: np.ndarray | None = None   # (pairs, 5), 0 where absent
    present: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.actor)


@dataclass
class RiskModel:
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    weak: dict
    meta: stacker.GbdtModel
    window_days: int = FEATURE_WINDOW_DAYS
    info: dict = field(default_factory=dict)

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.log1p(np.maximum(X, 0.0)) - self.feature_mean) / self.feature_scale

    def score(self, population: Population, events: EventLog, day: int) -> ScoredEdges:
        """Score every directed pair seen in any layer over the window before ``day``."""
        window = (day - self.window_days, day - 1)
        layer_probs, present, actor, target, X = weak_outputs(self, population, events, window)
        rows = stacker.stack_matrix(layer_probs, present, X[actor], X[target])
        p = self.meta.predict(rows) if len(rows) else np.zeros(0)
        return ScoredEdges(day, actor, target, p, layer_probs, present)


def fit_scaler(X: np.ndarray):
    Z = np.log1p(np.maximum(X, 0.0))
    mean = Z.mean(axis=0)
    scale = Z.std(axis=0)
    return mean, np.where(scale > 0, scale, 1.0)


def _pair_universe(graph, n):
    keys = [e.src.astype(np.int64) * n + e.dst for e in graph.layers.values()]
    return np.unique(np.concatenate(keys)) if keys else np.zeros(0, dtype=np.int64)


def weak_outputs(model: RiskModel, population: Population, events: EventLog, window):
    """Per-layer probabilities for the pair universe of ``window``.

    Returns ``(layer_probs, present, actor, target, raw_features)``.
    """
    n = len(population)
    graph = build_multiplex_graph(events, window)
    X = feature_matrix(population, events, window)
    Xs = model.transform(X)
    keys = _pair_universe(graph, n)
    probs = np.zeros((len(keys), len(LAYERS)))
    present = np.zeros((len(keys), len(LAYERS)), dtype=bool)
    for layer in LAYERS:
        e = graph.layers[layer]
        if not len(e):
            continue
        pos = np.searchsorted(keys, e.src.astype(np.int64) * n + e.dst)
        probs[pos, layer] = gnn.score_edges(e, Xs, model.weak[layer])
        present[pos, layer] = True
    return probs, present, (keys // n).astype(np.int64), (keys % n).astype(np.int64), X


@dataclass
class TrainSettings:
    weak_day: int = 21
    stack_day: int = 28
    eval_day: int = 35
    stack_negative_ratio: int = 1
    gat: gnn.TrainHyper = field(default_factory=gnn.TrainHyper)
    gbdt: stacker.GbdtHyper = field(default_factory=stacker.GbdtHyper)


def _sample_rows(labels, ratio, seed):
    pos = np.flatnonzero(labels)
    neg = np.flatnonzero(~labels)
    rng = np.random.default_rng([seed, 0x57])
    m = min(len(neg), ratio * len(pos))
    return np.sort(np.concatenate([pos, rng.choice(neg, size=m, replace=False)]))


def pair_labels(actor, target, events: EventLog, inference_day: int, n: int) -> np.ndarray:
    vp = violating_pairs(events, inference_day)
    return np.isin(actor * n + target, vp[:, 0] * n + vp[:, 1])


def train_risk_model(population: Population, events: EventLog,
                     settings: TrainSettings | None = None) -> RiskModel:
    """Train the five weak learners, then the metamodel on a later day."""
    s = settings or TrainSettings()
    n = len(population)
    window = (s.weak_day - FEATURE_WINDOW_DAYS, s.weak_day - 1)
    graph = build_multiplex_graph(events, window)
    X = feature_matrix(population, events, window)
    mean, scale = fit_scaler(X[graph.nodes])
    Xs = (np.log1p(np.maximum(X, 0.0)) - mean) / scale
    positives = violating_pairs(events, s.weak_day)
    weak, info = {}, {"weak_loss": {}, "weak_pairs": {}}
    for layer in LAYERS:
        pairs, y = gnn.sample_training_pairs(graph.layers[layer], positives, s.gat.negative_ratio,
                                             s.gat.seed + int(layer))
        if not len(y) or y.min() == y.max():
            raise ValueError(f"layer {layer.name}: no violating pairs to train on at day {s.weak_day}")
        hyper = gnn.TrainHyper(**{**s.gat.__dict__, "seed": s.gat.seed + int(layer)})
        params, hist = gnn.train_weak_learner(graph.layers[layer], Xs, pairs, y, hyper)
        weak[layer] = params
        info["weak_loss"][layer.name] = [hist[0], hist[-1]]
        info["weak_pairs"][layer.name] = [int(y.sum()), int(len(y) - y.sum())]

    model = RiskModel(mean, scale, weak, stacker.GbdtModel([], 1.0, 0.0, stacker.STACK_DIM, 1))
    swin = (s.stack_day - FEATURE_WINDOW_DAYS, s.stack_day - 1)
    probs, present, actor, target, Xr = weak_outputs(model, population, events, swin)
    labels = pair_labels(actor, target, events, s.stack_day, n)
    rows = _sample_rows(labels, s.stack_negative_ratio, s.gat.seed)
    M = stacker.stack_matrix(probs[rows], present[rows], Xr[actor[rows]], Xr[target[rows]])
    model.meta = stacker.train_gbdt(M, labels[rows].astype(float), s.gbdt)
    info["stack_rows"] = [int(labels[rows].sum()), int(len(rows) - labels[rows].sum())]
    weak_train_auc = {}
    for layer in LAYERS:
        weak_train_auc[layer.name] = stacker.evaluate_auc(M[:, int(layer)], labels[rows])
    info["stack_train_auc"] = stacker.evaluate_auc(model.meta.predict(M), labels[rows])
    info["weak_train_auc"] = weak_train_auc
    model.info = info
    return model


def evaluate_risk_model(model: RiskModel, population: Population, events: EventLog, day: int) -> dict:
    """Held-out AUCs: per edge (stacked and each weak learner) and per player."""
    scored = model.score(population, events, day)
    n = len(population)
    labels = pair_labels(scored.actor, scored.target, events, day, n)
    out = {"day": day, "pairs": int(len(labels)), "positive_pairs": int(labels.sum()),
           "edge_auc": stacker.evaluate_auc(scored.probability, labels)}
    for layer in LAYERS:
        out[f"weak_auc_{layer.name}"] = stacker.evaluate_auc(scored.layer_probs[:, int(layer)], labels)
    out["best_weak_auc"] = max(out[f"weak_auc_{layer.name}"] for layer in LAYERS)
    # per player: summed outgoing probability against the player label
    active = np.unique(scored.actor)
    score = np.bincount(scored.actor, weights=scored.probability, minlength=n)[active]
    w = events.window(day - 7, day - 1)
    viol = np.zeros(n, dtype=bool)
    viol[w.actor[w.violation]] = True
    out["player_auc"] = stacker.evaluate_auc(score, viol[active])
    return out


# --- persistence -------------------------------------------------------------

def model_to_dict(model: RiskModel) -> dict:
    return {
        "format": FORMAT, "version": FORMAT_VERSION, "window_days": model.window_days,
        "feature_mean": model.feature_mean.tolist(), "feature_scale": model.feature_scale.tolist(),
        "weak": {layer.name: gnn.params_to_dict(model.weak[layer]) for layer in LAYERS},
        "meta": stacker.model_to_dict(model.meta), "info": model.info,
    }


def save_model(model: RiskModel, path, header: dict | None = None) -> None:
    """JSON document, optionally preceded by ``# key=value`` header lines."""
    lines = [f"# {k}={v}" for k, v in (header or {}).items()]
    lines.append(json.dumps(model_to_dict(model)))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_model(path) -> RiskModel:
    text = Path(path).read_text(encoding="utf-8")
    doc = json.loads("\n".join(ln for ln in text.splitlines() if not ln.startswith("#")))
    if doc.get("format") != FORMAT or doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"{path}: not a {FORMAT} v{FORMAT_VERSION} file")
    return RiskModel(
        np.asarray(doc["feature_mean"], dtype=np.float64),
        np.asarray(doc["feature_scale"], dtype=np.float64),
        {Layer[k]: gnn.params_from_dict(v) for k, v in doc["weak"].items()},
        stacker.model_from_dict(doc["meta"]), doc["window_days"], doc.get("info", {}),
    )
