"""Pretraining loop: batching, AdamW, cosine schedule, clipping, logging.

Training is bit-reproducible given (seed, config, data): every random draw
(mask selection, pair sampling, shuffling, dropout) uses a seed derived from
the root seed with a purpose label, and batches reduce in a fixed order.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .autodiff import NumericError, Tape
from .encoders import SemanticCodebook, encode_geometry
from .geoentities import Dataset
from .losses import LossConfig, LossReport, WindowSample, batch_loss
from .model import ModelConfig, ParamStore, init_params, is_decayed, save_checkpoint
from .seeding import derive_seed
from . import windows as win


@dataclass
class TrainConfig:
    learning_rate: float = 2e-4
    weight_decay: float = 0.01
    epochs: int = 100
    batch_windows: int = 16
    grad_clip_norm: float = 1.0
    seed: int = 0
    mask_ratio: float = 0.40
    window_size: float = 500.0
    window_stride: float = 250.0
    eval_every: int = 25
    n_random_pairs: int = 32
    n_hard_pairs: int = 16
    n_global_pairs: int = 64
    member_cap: int = win.MEMBER_CAP
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig(**self.model)
        if isinstance(self.loss, dict):
            if "bin_edges" in self.loss:
                self.loss["bin_edges"] = tuple(self.loss["bin_edges"])
            self.loss = LossConfig(**self.loss)
        if not (0.0 < self.mask_ratio < 1.0):
            raise ValueError(f"mask_ratio must lie in (0, 1), got {self.mask_ratio}")
        for name in ("learning_rate", "batch_windows", "grad_clip_norm",
                     "window_size", "window_stride"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 0 or self.weight_decay < 0:
            raise ValueError("epochs and weight_decay must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        return cls(**doc)


def lr_schedule(epoch: int, total_epochs: int, base_lr: float) -> float:
    """Cosine annealing from base_lr at epoch 0."""
    if not (0 <= epoch < total_epochs):
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs})")
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * epoch / total_epochs))


class AdamW:
    """Decoupled weight decay Adam; decay skips biases, the mask token, and
    normalization parameters."""

    def __init__(self, params: ParamStore, weight_decay: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in params.items()}

    def step(self, lr: float) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, tensor in self.params.items():
            g = tensor.grad
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient in parameter {name}")
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            update = m_hat / (np.sqrt(v_hat) + self.eps)
            if self.weight_decay > 0 and is_decayed(name):
                update = update + self.weight_decay * tensor.data
            tensor.data -= lr * update


def clip_gradients(params: ParamStore, max_norm: float) -> float:
    """Scale all gradients so the global norm is at most max_norm; returns
    the pre-clip global norm."""
    total = math.sqrt(sum(float((t.grad ** 2).sum()) for _, t in params.items()))
    if total > max_norm and total > 0:
        factor = max_norm / total
        for _, t in params.items():
            t.grad *= factor
    return total


# ---------------------------------------------------------------------------
# dataset -> window samples


def build_window_samples(dataset: Dataset, config: TrainConfig,
                         ) -> Tuple[List[WindowSample], SemanticCodebook, Dict[int, win.PairCache]]:
    """Static per-window inputs: members, frozen embeddings, sibling groups,
    and pair caches. Windows with fewer than 2 members are dropped."""
    codebook = SemanticCodebook(dim=config.model.d_sem,
                                seed=derive_seed(config.seed, "codebook"))
    bounds = win.build_windows(dataset.extent, config.window_size, config.window_stride)
    spatial = win.assign_members(dataset, bounds, cap=config.member_cap)
    samples: List[WindowSample] = []
    caches: Dict[int, win.PairCache] = {}
    for w in spatial:
        if len(w.members) < 2:
            continue
        cache = win.PairCache(dataset)
        entities = [dataset.by_id[eid] for eid in w.members]
        groups = win.build_sibling_groups(w, dataset)
        sibling_dists: Dict[Tuple[int, int], float] = {}
        for g in groups:
            ids = g.member_ids
            for a in range(len(ids)):
                for b in range(a + 1, len(ids)):
                    key = (ids[a], ids[b])
                    sibling_dists[key] = cache.distance(*key)
        samples.append(WindowSample(
            window=w,
            member_ids=list(w.members),
            e_sem=np.vstack([codebook.encode(e.tokens) for e in entities]),
            e_geom=np.vstack([encode_geometry(e.geometry, w) for e in entities]),
            token_keys=[e.token_key() for e in entities],
            kinds=[e.geometry.kind for e in entities],
            groups=groups,
            sibling_dists=sibling_dists,
        ))
        caches[w.index] = cache
    return samples, codebook, caches


def refresh_epoch(samples: List[WindowSample], caches: Dict[int, win.PairCache],
                  dataset: Dataset, config: TrainConfig, epoch: int) -> None:
    """Re-draw masks and sampled pairs for one epoch (deterministic)."""
    for sample in samples:
        w = sample.window
        cache = caches[w.index]
        sample.mask_ids = win.select_masks(
            w, config.mask_ratio, derive_seed(config.seed, "mask", epoch, w.index))
        sample.geo_pairs = win.sample_geo_pairs(
            w, dataset, config.n_random_pairs, config.n_hard_pairs,
            derive_seed(config.seed, "pairs", epoch, w.index), cache)
        sample.global_pairs = win.sample_global_pairs(
            w, dataset, sample.groups, config.n_global_pairs,
            derive_seed(config.seed, "global", epoch, w.index), cache)


@dataclass
class TrainResult:
    params: ParamStore
    log: List[dict]
    samples: List[WindowSample]
    codebook: SemanticCodebook


def _checkpoint_seeds(config: TrainConfig) -> dict:
    return {
        "root": config.seed,
        "codebook": derive_seed(config.seed, "codebook"),
        "init": derive_seed(config.seed, "init"),
    }


def train(dataset: Dataset, config: TrainConfig,
          out_dir: Optional[str] = None) -> TrainResult:
    """Full pretraining run; writes checkpoint.json and train_log.jsonl under
    out_dir when given. On a numeric failure the last good parameters are
    checkpointed before the error propagates."""
    samples, codebook, caches = build_window_samples(dataset, config)
    if not samples:
        raise ValueError("dataset yields no usable windows (need >= 2 members)")
    params = init_params(config.model, derive_seed(config.seed, "init"))
    opt = AdamW(params, weight_decay=config.weight_decay)
    log: List[dict] = []

    log_fh = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        log_fh = open(os.path.join(out_dir, "train_log.jsonl"), "w", encoding="utf-8")

    def emit(entry: dict) -> None:
        log.append(entry)
        if log_fh:
            log_fh.write(json.dumps(entry) + "\n")
            log_fh.flush()

    def save(name: str) -> None:
        if out_dir:
            save_checkpoint(os.path.join(out_dir, name), params,
                            config_echo=config.to_dict(), seeds=_checkpoint_seeds(config))

    try:
        for epoch in range(config.epochs):
            lr = lr_schedule(epoch, config.epochs, config.learning_rate)
            refresh_epoch(samples, caches, dataset, config, epoch)
            order = np.random.default_rng(
                derive_seed(config.seed, "shuffle", epoch)).permutation(len(samples))
            n_batches = math.ceil(len(order) / config.batch_windows)
            for b in range(n_batches):
                batch = [samples[i] for i in order[b * config.batch_windows:
                                                   (b + 1) * config.batch_windows]]
                drop_rng = np.random.default_rng(
                    derive_seed(config.seed, "dropout", epoch, b))
                params.zero_grads()
                tape = Tape()
                try:
                    with tape:
                        total, report = batch_loss(params, batch, config.loss,
                                                   mode="train", rng=drop_rng)
                    if report.l_total != 0.0:
                        tape.backward(total)
                        grad_norm = clip_gradients(params, config.grad_clip_norm)
                        opt.step(lr)
                    else:
                        grad_norm = 0.0
                except NumericError:
                    save("checkpoint_lastgood.json")
                    raise
                emit({"epoch": epoch, "batch": b,
                      "l_mgsm": report.l_mgsm, "l_geo": report.l_geo,
                      "l_acc": report.l_acc, "l_rsr": report.l_rsr,
                      "l_total": report.l_total, "lr": lr, "grad_norm": grad_norm})
            if config.eval_every and (epoch + 1) % config.eval_every == 0 \
                    and (epoch + 1) < config.epochs:
                save(f"checkpoint_epoch{epoch + 1}.json")
        save("checkpoint.json")
    finally:
        if log_fh:
            log_fh.close()
    return TrainResult(params=params, log=log, samples=samples, codebook=codebook)


def evaluate_loss(dataset: Dataset, config: TrainConfig, params: ParamStore,
                  epoch: int = 0) -> LossReport:
    """Deterministic loss evaluation (no dropout) on the configured windows."""
    samples, _, caches = build_window_samples(dataset, config)
    refresh_epoch(samples, caches, dataset, config, epoch)
    _, report = batch_loss(params, samples, config.loss, mode="eval")
    return report
