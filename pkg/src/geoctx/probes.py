"""Frozen-encoder downstream adaptation.

A pretrained checkpoint stays fixed; each target entity is embedded from a
pseudo-window framing its fixed-radius neighborhood, and lightweight heads
(multinomial logistic / linear regression) are trained on the exported
embeddings with the shared optimizer machinery.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from . import relations
from .autodiff import Tape
from .encoders import SemanticCodebook, encode_geometry
from .geoentities import Dataset, Geometry
from .model import ModelConfig, ParamStore, forward_window
from .seeding import derive_seed
from .train import AdamW
from .windows import MEMBER_CAP, SpatialWindow

DEFAULT_CONTEXT_RADIUS_M = 100.0


@dataclass
class ContextualEmbedding:
    id: int
    h_fused: np.ndarray
    h_sem: np.ndarray
    radius: float


def codebook_from_checkpoint(doc: dict, config: ModelConfig) -> SemanticCodebook:
    return SemanticCodebook(dim=config.d_sem, seed=doc["seeds"]["codebook"])


def embed_entities(params: ParamStore, codebook: SemanticCodebook, dataset: Dataset,
                   ids: Sequence[int], radius: float = DEFAULT_CONTEXT_RADIUS_M,
                   mask_target: bool = False, window_size: float = 500.0,
                   cap: int = MEMBER_CAP, context: str = "spatial",
                   seed: int = 0) -> List[ContextualEmbedding]:
    """Contextual embeddings of the given targets from a frozen encoder.

    Context is every entity within ``radius`` of the target (the target
    included); ``context="random"`` swaps the true neighbors for a uniform
    sample of other entities of the same count, keeping the target fixed.
    ``mask_target`` hides the target's own semantics behind the mask token.
    """
    missing = [i for i in ids if i not in dataset.by_id]
    if missing:
        raise KeyError(f"unknown entity ids: {missing}")
    if context not in ("spatial", "random"):
        raise ValueError(f"context must be 'spatial' or 'random', got {context!r}")

    boxes = {e.id: e.geometry.bbox() for e in dataset.entities}
    out: List[ContextualEmbedding] = []
    for target_id in ids:
        target = dataset.by_id[target_id]
        tb = boxes[target_id]
        neighbors = [
            e.id for e in dataset.entities
            if e.id != target_id
            and relations.bbox_gap(tb, boxes[e.id]) <= radius
            and relations.min_distance(target.geometry, e.geometry) <= radius
        ]
        if context == "random":
            rng = np.random.default_rng(derive_seed(seed, "random-context", target_id))
            others = [e.id for e in dataset.entities if e.id != target_id]
            k = min(len(neighbors), len(others))
            neighbors = [others[i] for i in rng.choice(len(others), size=k, replace=False)]
        member_ids = sorted(neighbors + [target_id])

        cx, cy = relations.centroid(target.geometry)
        half = 0.5 * window_size
        window = SpatialWindow(index=-1, bounds=(cx - half, cy - half, cx + half, cy + half),
                               members=member_ids)
        if len(member_ids) > cap:
            center = Geometry("point", ((cx, cy),))
            ranked = sorted(member_ids, key=lambda eid: (
                relations.min_distance(dataset.by_id[eid].geometry, center), eid))
            kept = set(ranked[:cap])
            kept.add(target_id)
            member_ids = sorted(kept)
            window = SpatialWindow(index=-1, bounds=window.bounds, members=member_ids)

        entities = [dataset.by_id[eid] for eid in member_ids]
        e_sem = np.vstack([codebook.encode(e.tokens) for e in entities])
        e_geom = np.vstack([encode_geometry(e.geometry, window) for e in entities])
        row = member_ids.index(target_id)
        mask_rows = [row] if mask_target else []
        result = forward_window(params, e_sem, e_geom, mask_rows, mode="eval")
        out.append(ContextualEmbedding(
            id=target_id,
            h_fused=result.h_fused.data[row].copy(),
            h_sem=result.h_sem.data[row].copy(),
            radius=radius,
        ))
    return out


def save_embeddings(path, embeddings: Iterable[ContextualEmbedding]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in embeddings:
            fh.write(json.dumps({"id": e.id,
                                 "h_fused": e.h_fused.tolist(),
                                 "h_sem": e.h_sem.tolist()}) + "\n")


def load_embeddings(path) -> Dict[int, Tuple[np.ndarray, np.ndarray]]:
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            out[obj["id"]] = (np.array(obj["h_fused"]), np.array(obj["h_sem"]))
    return out


# ---------------------------------------------------------------------------
# metrics


def classification_metrics(y_true: np.ndarray, y_pred: np.ndarray) -> Dict[str, float]:
    """Accuracy plus macro / support-weighted F1 in percent, over the classes
    present in the true labels."""
    classes = np.unique(y_true)
    f1s, supports = [], []
    for c in classes:
        tp = int(np.sum((y_pred == c) & (y_true == c)))
        fp = int(np.sum((y_pred == c) & (y_true != c)))
        fn = int(np.sum((y_pred != c) & (y_true == c)))
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1s.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
        supports.append(int(np.sum(y_true == c)))
    supports = np.array(supports, dtype=float)
    return {
        "accuracy": 100.0 * float(np.mean(y_pred == y_true)),
        "macro_f1": 100.0 * float(np.mean(f1s)),
        "weighted_f1": 100.0 * float(np.dot(f1s, supports / supports.sum())),
    }


def regression_metrics(y_true: np.ndarray, y_pred: np.ndarray) -> Dict[str, float]:
    err = y_pred - y_true
    ss_res = float(np.sum(err ** 2))
    ss_tot = float(np.sum((y_true - y_true.mean()) ** 2))
    if ss_tot == 0.0:
        r2 = 1.0 if ss_res == 0.0 else 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    return {
        "rmse": float(np.sqrt(np.mean(err ** 2))),
        "mae": float(np.mean(np.abs(err))),
        "r2": r2,
        "mape": 100.0 * float(np.mean(np.abs(err) / np.maximum(np.abs(y_true), 1e-8))),
    }


# ---------------------------------------------------------------------------
# probe heads


def _split(n: int, fractions: Tuple[float, float], seed: int):
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    train, val, test = perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:]
    if len(train) == 0 or len(test) == 0:
        raise ValueError(f"too few samples to split: {n}")
    return train, val, test


def _standardize(train: np.ndarray, rest: Sequence[np.ndarray]):
    mu = train.mean(axis=0, keepdims=True)
    sd = np.maximum(train.std(axis=0, keepdims=True), 1e-12)
    return (train - mu) / sd, [(r - mu) / sd for r in rest]


def fit_logistic_head(x: np.ndarray, y_index: np.ndarray, n_classes: int,
                      lr: float = 1e-2, epochs: int = 200) -> Tuple[np.ndarray, np.ndarray]:
    """Multinomial logistic weights (w, b) by full-batch AdamW descent."""
    onehot = np.zeros((len(y_index), n_classes))
    onehot[np.arange(len(y_index)), y_index] = 1.0
    store = ParamStore(config=ModelConfig())
    store.tensors["head.w"] = ad.parameter(np.zeros((x.shape[1], n_classes)))
    store.tensors["head.b"] = ad.parameter(np.zeros((1, n_classes)))
    opt = AdamW(store, weight_decay=0.0)
    x_const = ad.constant(x)
    target = ad.constant(onehot)
    ones_k = ad.constant(np.ones((n_classes, 1)))
    for _ in range(epochs):
        store.zero_grads()
        tape = Tape()
        with tape:
            logits = ad.add_bias(ad.matmul(x_const, store["head.w"]), store["head.b"])
            picked = ad.matmul(ad.mul(logits, target), ones_k)
            loss = ad.mean_all(ad.sub(ad.logsumexp_rows(logits), picked))
        tape.backward(loss)
        opt.step(lr)
    return store["head.w"].data.copy(), store["head.b"].data.copy()


def fit_linear_head(x: np.ndarray, y: np.ndarray, lr: float = 1e-2,
                    epochs: int = 200) -> Tuple[np.ndarray, np.ndarray]:
    """Linear regression weights (w, b) by full-batch AdamW descent."""
    store = ParamStore(config=ModelConfig())
    store.tensors["head.w"] = ad.parameter(np.zeros((x.shape[1], 1)))
    store.tensors["head.b"] = ad.parameter(np.zeros((1, 1)))
    opt = AdamW(store, weight_decay=0.0)
    x_const = ad.constant(x)
    t_const = ad.constant(y.reshape(-1, 1))
    for _ in range(epochs):
        store.zero_grads()
        tape = Tape()
        with tape:
            pred = ad.add_bias(ad.matmul(x_const, store["head.w"]), store["head.b"])
            diff = ad.sub(pred, t_const)
            loss = ad.mean_all(ad.mul(diff, diff))
        tape.backward(loss)
        opt.step(lr)
    return store["head.w"].data.copy(), store["head.b"].data.copy()


def probe_classify(features: np.ndarray, labels: np.ndarray, split_seed: int,
                   lr: float = 1e-2, epochs: int = 200) -> Dict[str, float]:
    """Multinomial logistic probe on frozen embeddings, 50/25/25 split;
    metrics are reported on the held-out test quarter."""
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if classes.size < 2:
        raise ValueError("classification probe needs at least 2 classes")
    class_of = {c: k for k, c in enumerate(classes)}
    y = np.array([class_of[c] for c in labels])
    tr, va, te = _split(len(y), (0.50, 0.25), split_seed)
    x_train, (x_val, x_test) = _standardize(features[tr], [features[va], features[te]])
    w, b = fit_logistic_head(x_train, y[tr], classes.size, lr=lr, epochs=epochs)
    y_pred = classes[np.argmax(x_test @ w + b, axis=1)]
    return classification_metrics(labels[te], y_pred)


def probe_regress(features: np.ndarray, targets: np.ndarray, split_seed: int,
                  road_geoms: Optional[List[List[Geometry]]] = None,
                  neighbor_mean: bool = False, neighbor_radius: float = 100.0,
                  lr: float = 1e-2, epochs: int = 200) -> Dict[str, float]:
    """Linear regression probe, 60/20/20 split; with ``neighbor_mean`` the
    mean training-split speed of roads within ``neighbor_radius`` is appended
    as an extra feature (training labels only leak nowhere)."""
    y = np.asarray(targets, dtype=float)
    if len(y) < 10:
        raise ValueError("regression probe needs at least 10 labeled roads")
    tr, va, te = _split(len(y), (0.60, 0.20), split_seed)
    x = features
    if neighbor_mean:
        if road_geoms is None:
            raise ValueError("neighbor_mean requires road geometries")
        col = neighbor_mean_speeds(road_geoms, y, tr, radius=neighbor_radius)
        x = np.hstack([x, col.reshape(-1, 1)])
    x_train, (x_val, x_test) = _standardize(x[tr], [x[va], x[te]])
    y_mu = float(y[tr].mean())
    y_sd = max(float(y[tr].std()), 1e-12)
    w, b = fit_linear_head(x_train, (y[tr] - y_mu) / y_sd, lr=lr, epochs=epochs)
    pred_test = (x_test @ w + b).ravel() * y_sd + y_mu
    return regression_metrics(y[te], pred_test)


# ---------------------------------------------------------------------------
# road-level assembly for the speed probe


def pool_roads(dataset: Dataset, segment_embeddings: Dict[int, np.ndarray],
               segment_speeds: Dict[int, float]):
    """Average segment embeddings and speeds per parent road. Returns
    (road_ids, features, targets, road_geometries) in road-id order."""
    per_road: Dict[int, List[int]] = {}
    for eid, speed in segment_speeds.items():
        e = dataset.by_id[eid]
        per_road.setdefault(e.anchor_key(), []).append(eid)
    road_ids = sorted(per_road)
    feats, targets, geoms = [], [], []
    for rid in road_ids:
        segs = sorted(per_road[rid])
        feats.append(np.mean([segment_embeddings[s] for s in segs], axis=0))
        targets.append(float(np.mean([segment_speeds[s] for s in segs])))
        geoms.append([dataset.by_id[s].geometry for s in segs])
    return road_ids, np.vstack(feats), np.array(targets), geoms


def neighbor_mean_speeds(road_geoms: List[List[Geometry]], targets: np.ndarray,
                         train_rows: np.ndarray, radius: float = 100.0) -> np.ndarray:
    """Per road, the mean training-split speed of other roads within the
    radius; falls back to the training mean when no neighbor qualifies."""
    n = len(road_geoms)
    train_set = set(int(i) for i in train_rows)
    global_mean = float(targets[train_rows].mean())

    def road_dist(a: List[Geometry], b: List[Geometry]) -> float:
        return min(relations.min_distance(ga, gb) for ga in a for gb in b)

    out = np.zeros(n)
    for i in range(n):
        vals = [targets[j] for j in range(n)
                if j != i and j in train_set and road_dist(road_geoms[i], road_geoms[j]) <= radius]
        out[i] = float(np.mean(vals)) if vals else global_mean
    return out
