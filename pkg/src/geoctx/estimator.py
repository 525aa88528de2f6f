"""Scikit-learn style estimators wrapping pretraining, embedding export, and
the probe heads, so the pipeline composes with the wider ecosystem
(``get_params`` / ``set_params`` / ``clone`` all work)."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin, TransformerMixin
from sklearn.exceptions import NotFittedError

from .geoentities import Dataset, Geoentity, load_dataset
from .losses import LossConfig
from .model import ModelConfig
from .probes import embed_entities, fit_linear_head, fit_logistic_head
from .train import TrainConfig, train


def as_dataset(X) -> Dataset:
    """Accept a Dataset, a list of Geoentity, or a path to a line-delimited
    file."""
    if isinstance(X, Dataset):
        return X
    if isinstance(X, (str, bytes)) or hasattr(X, "__fspath__"):
        return load_dataset(X)
    if isinstance(X, (list, tuple)) and X and isinstance(X[0], Geoentity):
        boxes = [e.geometry.bbox() for e in X]
        extent = (min(b[0] for b in boxes), min(b[1] for b in boxes),
                  max(b[2] for b in boxes), max(b[3] for b in boxes))
        return Dataset(entities=list(X), extent=extent)
    raise TypeError(f"cannot interpret {type(X).__name__} as a geoentity dataset")


def check_2d_features(X) -> np.ndarray:
    arr = np.asarray(X, dtype=float)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError(f"expected a 2-D feature matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("feature matrix contains non-finite values")
    return arr


class GeoContextEncoder(BaseEstimator, TransformerMixin):
    """Self-supervised encoder for vector geoentities.

    ``fit`` pretrains the dual-stream transformer on spatial windows of the
    input dataset; ``transform`` returns frozen contextual embeddings
    ``[h_fused ; h_sem]`` per requested entity, each framed by its
    fixed-radius neighborhood.
    """

    def __init__(self, d=32, d_ff=64, n_layers=3, n_heads=4, dropout=0.1, d_sem=64,
                 learning_rate=2e-4, weight_decay=0.01, epochs=100, batch_windows=16,
                 grad_clip_norm=1.0, mask_ratio=0.40, window_size=500.0,
                 window_stride=250.0, n_random_pairs=32, n_hard_pairs=16,
                 n_global_pairs=64, tau_mgsm=0.15, tau_acc=0.3, distance_decay=20.0,
                 margin=0.4, alpha_mgsm=1.0, alpha_geo=1.0, alpha_acc=1.0,
                 alpha_rsr=50.0, alpha_topo=0.5, alpha_dist=100.0, seed=0):
        self.d = d
        self.d_ff = d_ff
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.dropout = dropout
        self.d_sem = d_sem
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.batch_windows = batch_windows
        self.grad_clip_norm = grad_clip_norm
        self.mask_ratio = mask_ratio
        self.window_size = window_size
        self.window_stride = window_stride
        self.n_random_pairs = n_random_pairs
        self.n_hard_pairs = n_hard_pairs
        self.n_global_pairs = n_global_pairs
        self.tau_mgsm = tau_mgsm
        self.tau_acc = tau_acc
        self.distance_decay = distance_decay
        self.margin = margin
        self.alpha_mgsm = alpha_mgsm
        self.alpha_geo = alpha_geo
        self.alpha_acc = alpha_acc
        self.alpha_rsr = alpha_rsr
        self.alpha_topo = alpha_topo
        self.alpha_dist = alpha_dist
        self.seed = seed

    def build_train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate, weight_decay=self.weight_decay,
            epochs=self.epochs, batch_windows=self.batch_windows,
            grad_clip_norm=self.grad_clip_norm, seed=self.seed,
            mask_ratio=self.mask_ratio, window_size=self.window_size,
            window_stride=self.window_stride, n_random_pairs=self.n_random_pairs,
            n_hard_pairs=self.n_hard_pairs, n_global_pairs=self.n_global_pairs,
            model=ModelConfig(d=self.d, d_ff=self.d_ff, n_layers=self.n_layers,
                              n_heads=self.n_heads, dropout=self.dropout,
                              d_sem=self.d_sem),
            loss=LossConfig(tau_mgsm=self.tau_mgsm, tau_acc=self.tau_acc,
                            distance_decay=self.distance_decay, margin=self.margin,
                            alpha_mgsm=self.alpha_mgsm, alpha_geo=self.alpha_geo,
                            alpha_acc=self.alpha_acc, alpha_rsr=self.alpha_rsr,
                            alpha_topo=self.alpha_topo, alpha_dist=self.alpha_dist),
        )

    def fit(self, X, y=None, out_dir: Optional[str] = None):
        dataset = as_dataset(X)
        config = self.build_train_config()
        result = train(dataset, config, out_dir=out_dir)
        self.params_ = result.params
        self.codebook_ = result.codebook
        self.log_ = result.log
        self.config_ = config
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("this GeoContextEncoder has not been fitted yet")

    def transform(self, X, ids: Optional[Sequence[int]] = None, radius: float = 100.0,
                  mask_target: bool = False, context: str = "spatial") -> np.ndarray:
        self._check_fitted()
        dataset = as_dataset(X)
        if ids is None:
            ids = [e.id for e in dataset.entities]
        embs = embed_entities(self.params_, self.codebook_, dataset, list(ids),
                              radius=radius, mask_target=mask_target,
                              window_size=self.window_size, context=context,
                              seed=self.seed)
        return np.vstack([np.concatenate([e.h_fused, e.h_sem]) for e in embs])


class MultinomialProbe(BaseEstimator, ClassifierMixin):
    """Multinomial logistic head on frozen features, trained by gradient
    descent with the shared optimizer machinery."""

    def __init__(self, lr=1e-2, epochs=200):
        self.lr = lr
        self.epochs = epochs

    def fit(self, X, y):
        X = check_2d_features(X)
        y = np.asarray(y)
        self.classes_ = np.unique(y)
        if self.classes_.size < 2:
            raise ValueError("classification probe needs at least 2 classes")
        class_of = {c: k for k, c in enumerate(self.classes_)}
        y_idx = np.array([class_of[c] for c in y])
        self.mu_ = X.mean(axis=0, keepdims=True)
        self.sd_ = np.maximum(X.std(axis=0, keepdims=True), 1e-12)
        self.w_, self.b_ = fit_logistic_head((X - self.mu_) / self.sd_, y_idx,
                                             self.classes_.size,
                                             lr=self.lr, epochs=self.epochs)
        return self

    def decision_function(self, X) -> np.ndarray:
        if not hasattr(self, "w_"):
            raise NotFittedError("this MultinomialProbe has not been fitted yet")
        X = check_2d_features(X)
        return (X - self.mu_) / self.sd_ @ self.w_ + self.b_

    def predict_proba(self, X) -> np.ndarray:
        logits = self.decision_function(X)
        z = np.exp(logits - logits.max(axis=1, keepdims=True))
        return z / z.sum(axis=1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]


class LinearProbe(BaseEstimator, RegressorMixin):
    """Linear regression head on frozen features, trained by gradient
    descent with the shared optimizer machinery."""

    def __init__(self, lr=1e-2, epochs=200):
        self.lr = lr
        self.epochs = epochs

    def fit(self, X, y):
        X = check_2d_features(X)
        y = np.asarray(y, dtype=float)
        self.mu_ = X.mean(axis=0, keepdims=True)
        self.sd_ = np.maximum(X.std(axis=0, keepdims=True), 1e-12)
        self.y_mu_ = float(y.mean())
        self.y_sd_ = max(float(y.std()), 1e-12)
        self.w_, self.b_ = fit_linear_head((X - self.mu_) / self.sd_,
                                           (y - self.y_mu_) / self.y_sd_,
                                           lr=self.lr, epochs=self.epochs)
        return self

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "w_"):
            raise NotFittedError("this LinearProbe has not been fitted yet")
        X = check_2d_features(X)
        z = (X - self.mu_) / self.sd_ @ self.w_ + self.b_
        return z.ravel() * self.y_sd_ + self.y_mu_
