"""Self-supervised objectives over window forward passes.

Four terms are combined per batch:
  * masked-semantic reconstruction (InfoNCE against same-window entities
    with differing token multisets),
  * pairwise geometry supervision (distance regression + 4-way relation
    classification on sampled pairs, both orders),
  * anchor-conditioned contrastive attraction between siblings with
    exponential distance-decay weighting,
  * a semivariogram margin hinge forcing sibling pairs to stay more similar
    than type-matched global baseline pairs per distance bin.

Relational terms use only unmasked entities' contextual semantic rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from . import autodiff as ad
from . import model as model_mod
from .autodiff import Tensor
from .model import ParamStore
from .windows import PairSample, SiblingGroup, SpatialWindow

DEFAULT_BIN_EDGES = (0.0, 25.0, 50.0, 100.0, 200.0, 400.0, 800.0)


@dataclass
class LossConfig:
    tau_mgsm: float = 0.15
    tau_acc: float = 0.3
    distance_decay: float = 20.0
    margin: float = 0.4
    alpha_mgsm: float = 1.0
    alpha_geo: float = 1.0
    alpha_acc: float = 1.0
    alpha_rsr: float = 50.0
    alpha_topo: float = 0.5
    alpha_dist: float = 100.0
    bin_edges: Tuple[float, ...] = DEFAULT_BIN_EDGES

    def __post_init__(self):
        if self.tau_mgsm <= 0 or self.tau_acc <= 0:
            raise ValueError("temperatures must be positive")
        if not (0.0 < self.margin < 2.0):
            raise ValueError(f"margin must lie in (0, 2), got {self.margin}")
        for a in (self.alpha_mgsm, self.alpha_geo, self.alpha_acc, self.alpha_rsr,
                  self.alpha_topo, self.alpha_dist):
            if a < 0:
                raise ValueError("loss weights must be non-negative")
        edges = tuple(self.bin_edges)
        if edges[0] != 0.0 or any(b <= a for a, b in zip(edges, edges[1:])):
            raise ValueError(f"bin edges must increase strictly from 0, got {edges}")
        self.bin_edges = edges


@dataclass
class LossReport:
    l_mgsm: float
    l_geo: float
    l_acc: float
    l_rsr: float
    l_total: float
    counts: Dict[str, int]


@dataclass
class WindowSample:
    """Constant per-window inputs to the forward pass and losses."""
    window: SpatialWindow
    member_ids: List[int]
    e_sem: np.ndarray                    # n x d_sem, frozen
    e_geom: np.ndarray                   # n x d_geom, frozen
    token_keys: List[Tuple[str, ...]]
    kinds: List[str]
    groups: List[SiblingGroup]
    sibling_dists: Dict[Tuple[int, int], float]
    mask_ids: Set[int] = field(default_factory=set)
    geo_pairs: List[PairSample] = field(default_factory=list)
    global_pairs: List[PairSample] = field(default_factory=list)

    def __post_init__(self):
        self.row_of = {eid: r for r, eid in enumerate(self.member_ids)}

    @property
    def n(self) -> int:
        return len(self.member_ids)


def distance_bin(d: float, edges: Sequence[float]) -> Optional[int]:
    """Index of the half-open bin [edges[k], edges[k+1]) containing d, or
    None beyond the last edge."""
    if d < edges[0]:
        return None
    for k in range(len(edges) - 1):
        if edges[k] <= d < edges[k + 1]:
            return k
    return None


def _row_dot(a: Tensor, b: Tensor) -> Tensor:
    ones = ad.constant(np.ones((a.shape[1], 1)))
    return ad.matmul(ad.mul(a, b), ones)


def _masked_row_sum(m: Tensor, mask: np.ndarray) -> Tensor:
    ones = ad.constant(np.ones((m.shape[1], 1)))
    return ad.matmul(ad.mul(m, ad.constant(mask)), ones)


def empirical_semivariance(h: Tensor, pair_rows: Sequence[Tuple[int, int]]) -> Tensor:
    """Mean (1 - cosine similarity) over row pairs; rows are L2-normalized
    before the similarity."""
    if not pair_rows:
        raise ValueError("empirical semivariance of an empty pair set is undefined")
    hn = ad.l2_normalize_rows(h)
    sims = _row_dot(ad.gather_rows(hn, [p[0] for p in pair_rows]),
                    ad.gather_rows(hn, [p[1] for p in pair_rows]))
    ones = ad.constant(np.ones(sims.shape))
    return ad.mean_all(ad.sub(ones, sims))


# ---------------------------------------------------------------------------
# per-window terms


def mgsm_window_term(params: ParamStore, sample: WindowSample, h_sem: Tensor,
                     tau: float) -> Tuple[Optional[Tensor], int]:
    """Sum of per-entity InfoNCE losses for masked entities whose candidate
    set (entities with a different token multiset, plus the target) has at
    least two members."""
    rows, cand_mask, target_mask = [], [], []
    n = sample.n
    for eid in sorted(sample.mask_ids):
        r = sample.row_of[eid]
        mask = np.zeros(n)
        for j in range(n):
            if sample.token_keys[j] != sample.token_keys[r]:
                mask[j] = 1.0
        mask[r] = 1.0
        if mask.sum() < 2:
            continue
        rows.append(r)
        cand_mask.append(mask)
        onehot = np.zeros(n)
        onehot[r] = 1.0
        target_mask.append(onehot)
    if not rows:
        return None, 0
    e_hat = model_mod.reconstruct(params, ad.gather_rows(h_sem, rows))
    sims = ad.matmul(ad.l2_normalize_rows(e_hat),
                     ad.transpose(ad.l2_normalize_rows(ad.constant(sample.e_sem))))
    logits = ad.scale(sims, 1.0 / tau)
    pos = _masked_row_sum(logits, np.array(target_mask))
    denom = ad.log(_masked_row_sum(ad.exp(logits), np.array(cand_mask)))
    return ad.sum_all(ad.sub(denom, pos)), len(rows)


def geo_window_term(params: ParamStore, sample: WindowSample, h_fused: Tensor,
                    alpha_topo: float, alpha_dist: float) -> Tuple[Optional[Tensor], int]:
    """Sum over pair examples (each sampled pair in both orders) of
    alpha_topo * cross-entropy + alpha_dist * squared distance error."""
    pairs = sample.geo_pairs
    if not pairs:
        return None, 0
    w = sample.window.size
    idx_i = [sample.row_of[p.i] for p in pairs] + [sample.row_of[p.j] for p in pairs]
    idx_j = [sample.row_of[p.j] for p in pairs] + [sample.row_of[p.i] for p in pairs]
    d_targets = np.array([[p.d / w] for p in pairs] * 2)
    r_targets = [p.r for p in pairs] * 2

    d_hat, logits = model_mod.predict_pair(params, h_fused, idx_i, idx_j)
    diff = ad.sub(d_hat, ad.constant(d_targets))
    mse = ad.mul(diff, diff)

    onehot = np.zeros((len(r_targets), 4))
    for k, r in enumerate(r_targets):
        onehot[k, r] = 1.0
    ce = ad.sub(ad.logsumexp_rows(logits), _masked_row_sum(logits, onehot))
    per_example = ad.add(ad.scale(ce, alpha_topo), ad.scale(mse, alpha_dist))
    return ad.sum_all(per_example), len(r_targets)


def _unmasked_sibling_rows(sample: WindowSample) -> Dict[int, Set[int]]:
    """Per-row sets of sibling rows, both endpoints unmasked."""
    sib: Dict[int, Set[int]] = {}
    for g in sample.groups:
        ids = [i for i in g.member_ids if i not in sample.mask_ids]
        for a in range(len(ids)):
            for b in range(a + 1, len(ids)):
                ra, rb = sample.row_of[ids[a]], sample.row_of[ids[b]]
                sib.setdefault(ra, set()).add(rb)
                sib.setdefault(rb, set()).add(ra)
    return sib


def acc_window_term(params: ParamStore, sample: WindowSample, h_sem: Tensor,
                    tau: float, decay: float) -> Tuple[Optional[Tensor], int]:
    """Anchor-conditioned contrastive term for one window: per contributing
    entity, the distance-weighted mean InfoNCE over its siblings against all
    same-type unmasked entities."""
    n = sample.n
    sib = _unmasked_sibling_rows(sample)
    masked_rows = {sample.row_of[eid] for eid in sample.mask_ids}

    q_rows, weight_rows, contrast_rows = [], [], []
    for r in range(n):
        if r in masked_rows or not sib.get(r):
            continue
        weights = np.zeros(n)
        for s in sib[r]:
            i, j = sample.member_ids[r], sample.member_ids[s]
            key = (i, j) if i < j else (j, i)
            weights[s] = math.exp(-sample.sibling_dists[key] / decay)
        weights /= weights.sum()
        contrast = np.zeros(n)
        for j in range(n):
            if j != r and j not in masked_rows and sample.kinds[j] == sample.kinds[r]:
                contrast[j] = 1.0
        q_rows.append(r)
        weight_rows.append(weights)
        contrast_rows.append(contrast)
    if not q_rows:
        return None, 0

    hn = ad.l2_normalize_rows(h_sem)
    sims = ad.matmul(ad.gather_rows(hn, q_rows), ad.transpose(hn))
    logits = ad.scale(sims, 1.0 / tau)
    # sibling weights sum to 1 per entity, so the log-denominator factors out
    pos = _masked_row_sum(logits, np.array(weight_rows))
    denom = ad.log(_masked_row_sum(ad.exp(logits), np.array(contrast_rows)))
    per_entity = ad.sub(denom, pos)
    return ad.scale(ad.sum_all(per_entity), 1.0 / len(q_rows)), len(q_rows)


def rsr_window_term(params: ParamStore, sample: WindowSample, h_sem: Tensor,
                    edges: Sequence[float], margin: float) -> Tuple[Optional[Tensor], int]:
    """Semivariogram hinge for one window: per sibling group, bin-weighted
    max(0, gamma_rel - gamma_glob + margin) against the type-matched global
    baseline; bins without a baseline estimate are skipped without
    re-normalizing the bin weights."""
    hn = ad.l2_normalize_rows(h_sem)

    def pair_gamma(rows: List[Tuple[int, int]]) -> Tensor:
        sims = _row_dot(ad.gather_rows(hn, [p[0] for p in rows]),
                        ad.gather_rows(hn, [p[1] for p in rows]))
        ones = ad.constant(np.ones(sims.shape))
        return ad.mean_all(ad.sub(ones, sims))

    glob_pairs: Dict[Tuple[str, int], List[Tuple[int, int]]] = {}
    for p in sample.global_pairs:
        if p.i in sample.mask_ids or p.j in sample.mask_ids:
            continue
        b = distance_bin(p.d, edges)
        if b is None:
            continue
        t = sample.kinds[sample.row_of[p.i]]
        glob_pairs.setdefault((t, b), []).append((sample.row_of[p.i], sample.row_of[p.j]))
    gamma_glob = {key: pair_gamma(rows) for key, rows in glob_pairs.items()}

    terms: List[Tensor] = []
    n_groups = 0
    for g in sample.groups:
        ids = [i for i in g.member_ids if i not in sample.mask_ids]
        binned: Dict[int, List[Tuple[int, int]]] = {}
        total = 0
        for a in range(len(ids)):
            for b_idx in range(a + 1, len(ids)):
                i, j = ids[a], ids[b_idx]
                key = (i, j) if i < j else (j, i)
                bin_k = distance_bin(sample.sibling_dists[key], edges)
                if bin_k is None:
                    continue
                binned.setdefault(bin_k, []).append((sample.row_of[i], sample.row_of[j]))
                total += 1
        if total == 0:
            continue
        n_groups += 1
        for bin_k, rows in sorted(binned.items()):
            baseline = gamma_glob.get((g.member_type, bin_k))
            if baseline is None:
                continue
            gamma_rel = pair_gamma(rows)
            gap = ad.sub(gamma_rel, baseline)
            hinge = ad.relu(ad.add(gap, ad.constant([[margin]])))
            terms.append(ad.scale(hinge, len(rows) / total))
    if n_groups == 0:
        return None, 0
    if not terms:
        return ad.constant([[0.0]]), n_groups
    acc = terms[0]
    for t in terms[1:]:
        acc = ad.add(acc, t)
    return ad.scale(acc, 1.0 / n_groups), n_groups


# ---------------------------------------------------------------------------
# batch aggregation


def _ratio(parts: List[Tensor], count: int) -> Tensor:
    if count == 0 or not parts:
        return ad.constant([[0.0]])
    acc = parts[0]
    for p in parts[1:]:
        acc = ad.add(acc, p)
    return ad.scale(acc, 1.0 / count)


def batch_components(params: ParamStore, samples: Sequence[WindowSample], cfg: LossConfig,
                     mode: str = "train", rng: Optional[np.random.Generator] = None,
                     ) -> Tuple[Dict[str, Tensor], Dict[str, int]]:
    """Forward every window and reduce the four objectives over the batch.
    Pooling: masked-semantic and pair terms average over their contributing
    entities/examples across the batch; the relational terms average per
    window then over all batch windows."""
    mgsm_parts, geo_parts, acc_parts, rsr_parts = [], [], [], []
    counts = {"mgsm": 0, "geo": 0, "acc": 0, "rsr": 0, "windows": len(samples)}

    for sample in samples:
        mask_rows = sorted(sample.row_of[eid] for eid in sample.mask_ids)
        out = model_mod.forward_window(params, sample.e_sem, sample.e_geom,
                                       mask_rows, mode=mode, rng=rng)
        term, c = mgsm_window_term(params, sample, out.h_sem, cfg.tau_mgsm)
        if term is not None:
            mgsm_parts.append(term)
            counts["mgsm"] += c
        term, c = geo_window_term(params, sample, out.h_fused, cfg.alpha_topo, cfg.alpha_dist)
        if term is not None:
            geo_parts.append(term)
            counts["geo"] += c
        term, c = acc_window_term(params, sample, out.h_sem, cfg.tau_acc, cfg.distance_decay)
        if term is not None:
            acc_parts.append(term)
            counts["acc"] += c
        term, c = rsr_window_term(params, sample, out.h_sem, cfg.bin_edges, cfg.margin)
        if term is not None:
            rsr_parts.append(term)
            counts["rsr"] += c

    comps = {
        "mgsm": _ratio(mgsm_parts, counts["mgsm"]),
        "geo": _ratio(geo_parts, counts["geo"]),
        "acc": _ratio(acc_parts, len(samples)),
        "rsr": _ratio(rsr_parts, len(samples)),
    }
    return comps, counts


def batch_loss(params: ParamStore, samples: Sequence[WindowSample], cfg: LossConfig,
               mode: str = "train", rng: Optional[np.random.Generator] = None,
               ) -> Tuple[Tensor, LossReport]:
    comps, counts = batch_components(params, samples, cfg, mode=mode, rng=rng)
    return loss_joint(comps["mgsm"], comps["geo"], comps["acc"], comps["rsr"], cfg, counts)


def loss_joint(l_mgsm: Tensor, l_geo: Tensor, l_acc: Tensor, l_rsr: Tensor,
               cfg: LossConfig, counts: Dict[str, int]) -> Tuple[Tensor, LossReport]:
    total = ad.add(ad.add(ad.scale(l_mgsm, cfg.alpha_mgsm), ad.scale(l_geo, cfg.alpha_geo)),
                   ad.add(ad.scale(l_acc, cfg.alpha_acc), ad.scale(l_rsr, cfg.alpha_rsr)))
    report = LossReport(
        l_mgsm=l_mgsm.item(), l_geo=l_geo.item(), l_acc=l_acc.item(),
        l_rsr=l_rsr.item(), l_total=total.item(), counts=dict(counts),
    )
    return total, report
