"""Verification harnesses: loss gradient checks and oracle agreement.

Gradient checking builds small random windows (6-12 entities with anchors,
contained POIs, and nearby same-type entities so every objective has
contributors), then compares tape gradients of each loss against central
finite differences on sampled parameter coordinates. Parameter tensors are
drawn from a shuffled cycle so repeated checks cover the whole store.
"""

from __future__ import annotations

import itertools
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import oracle
from .autodiff import grad_check
from .geoentities import Dataset, Geoentity, Geometry
from .losses import LossConfig, WindowSample, batch_components, loss_joint
from .model import ModelConfig, init_params
from .relations import classify_relation
from .seeding import derive_seed
from .train import TrainConfig, build_window_samples, refresh_epoch

_VOCAB = ("cafe", "shop", "school", "park", "bank", "road", "home", "office")


def _micro_entities(rng, n_extra: int) -> List[Geoentity]:
    """A road (two noded segments), a building with two POIs inside, one POI
    alongside, plus n_extra random points scattered within ~60 m."""
    def toks(k=1):
        return tuple(rng.choice(_VOCAB, size=k))

    entities = [
        Geoentity(1, 100, toks(), Geometry("polyline", ((0.0, 100.0), (100.0, 100.0)))),
        Geoentity(2, 100, toks(), Geometry("polyline", ((100.0, 100.0), (200.0, 100.0)))),
        Geoentity(3, None, toks(2), Geometry(
            "polygon", ((60.0, 110.0), (95.0, 110.0), (95.0, 140.0), (60.0, 140.0), (60.0, 110.0)))),
        Geoentity(4, None, toks(), Geometry("point", (
            (rng.uniform(65, 90), rng.uniform(115, 135)),))),
        Geoentity(5, None, toks(), Geometry("point", (
            (rng.uniform(65, 90), rng.uniform(115, 135)),))),
        Geoentity(6, None, toks(), Geometry("point", (
            (rng.uniform(100, 130), rng.uniform(105, 125)),))),
    ]
    next_id = 7
    for _ in range(n_extra):
        if rng.random() < 0.25:
            x0, y0 = rng.uniform(10, 150), rng.uniform(10, 60)
            geom = Geometry("polygon", ((x0, y0), (x0 + 20, y0), (x0 + 20, y0 + 15),
                                        (x0, y0 + 15), (x0, y0)))
        else:
            geom = Geometry("point", ((rng.uniform(5, 195), rng.uniform(60, 160)),))
        entities.append(Geoentity(next_id, None, toks(), geom))
        next_id += 1
    return entities


def make_micro_samples(seed: int, n_windows: int, loss_cfg: Optional[LossConfig] = None,
                       ) -> Tuple[List[WindowSample], TrainConfig]:
    """Independent single-window samples of 6-12 entities each."""
    cfg = TrainConfig(seed=seed, window_size=200.0, window_stride=200.0,
                      epochs=1, loss=loss_cfg or LossConfig())
    samples: List[WindowSample] = []
    for w in range(n_windows):
        rng = np.random.default_rng(derive_seed(seed, "micro", w))
        entities = _micro_entities(rng, n_extra=int(rng.integers(0, 7)))
        dataset = Dataset(entities=entities, extent=(0.0, 0.0, 200.0, 200.0))
        built, _, caches = build_window_samples(dataset, cfg)
        refresh_epoch(built, caches, dataset, cfg, epoch=w)
        samples.extend(built)
    return samples, cfg


LOSS_KEYS = ("mgsm", "geo", "acc", "rsr", "joint")


def gradcheck_losses(seed: int = 0, n_windows: int = 20, coords_per_tensor: int = 1,
                     tensors_per_check: int = 10, eps: float = 1e-5,
                     ) -> Dict[str, float]:
    """Max relative FD error per loss over random windows; parameter tensors
    cycle so all of them get checked across windows."""
    samples, cfg = make_micro_samples(seed, n_windows)
    params = init_params(ModelConfig(), derive_seed(seed, "gradcheck-init"))
    names = sorted(params.tensors)
    order = list(np.random.default_rng(derive_seed(seed, "gradcheck-order")).permutation(names))
    cycle = itertools.cycle(order)
    errors = {k: 0.0 for k in LOSS_KEYS}

    for w, sample in enumerate(samples):
        for key in LOSS_KEYS:
            def fn(key=key, sample=sample):
                comps, counts = batch_components(params, [sample], cfg.loss, mode="eval")
                if key == "joint":
                    total, _ = loss_joint(comps["mgsm"], comps["geo"], comps["acc"],
                                          comps["rsr"], cfg.loss, counts)
                    return total
                return comps[key]

            subset = [params[next(cycle)] for _ in range(tensors_per_check)]
            rng = np.random.default_rng(derive_seed(seed, "gradcheck-coords", w, key))
            err = grad_check(fn, subset, eps=eps,
                             coords_per_tensor=coords_per_tensor, rng=rng,
                             refine_eps=(eps / 4.0, eps / 16.0, 4.0 * eps))
            errors[key] = max(errors[key], err)
    return errors


def relation_agreement(n_pairs: int = 1000, seed: int = 0,
                       step: float = oracle.STEP) -> dict:
    """Compare the exact classifier against the rasterized oracle on random
    non-degenerate shape pairs; also verifies symmetry on every pair."""
    rng = np.random.default_rng(derive_seed(seed, "relcheck"))
    checked = degenerate = mismatches = symmetry_failures = 0
    attempts = 0
    examples = []
    while checked < n_pairs and attempts < 100 * n_pairs:
        attempts += 1
        g1, g2 = oracle.random_shape_pair(rng)
        code = classify_relation(g1, g2)
        if classify_relation(g2, g1) != code:
            symmetry_failures += 1
        expected = oracle.rasterized_relation(g1, g2, step)
        if expected is None:
            degenerate += 1
            continue
        checked += 1
        if code != expected:
            mismatches += 1
            if len(examples) < 5:
                examples.append({"g1": [g1.kind, list(g1.coords)],
                                 "g2": [g2.kind, list(g2.coords)],
                                 "classifier": code, "oracle": expected})
    return {
        "checked": checked,
        "degenerate": degenerate,
        "mismatches": mismatches,
        "symmetry_failures": symmetry_failures,
        "agreement": 1.0 - (mismatches / checked) if checked else 0.0,
        "examples": examples,
    }
