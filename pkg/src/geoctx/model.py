"""Dual-stream spatial transformer over window members.

Queries and keys come from gated fused embeddings; the resulting attention
map is applied to two value streams: a semantic stream whose masked rows
only ever see the learned mask token (so masked semantics cannot leak), and
a fused stream used for pairwise geometry supervision and downstream tasks.
Both streams share the identical attention tensors per layer and head.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoders import GEOM_DIM


class WindowSkipped(Exception):
    """Raised when a window has no members to run the forward pass on."""


@dataclass
class ModelConfig:
    d: int = 32
    d_ff: int = 64
    n_layers: int = 3
    n_heads: int = 4
    dropout: float = 0.1
    d_sem: int = 64
    d_geom: int = GEOM_DIM

    def __post_init__(self):
        if self.d % self.n_heads != 0:
            raise ValueError(f"d={self.d} not divisible by n_heads={self.n_heads}")


@dataclass
class ParamStore:
    config: ModelConfig
    tensors: Dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def items(self):
        return self.tensors.items()

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        return list(self.tensors.items())

    def zero_grads(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()


def is_decayed(name: str) -> bool:
    """Weight decay applies to weight matrices only, never to biases, the
    mask token, or normalization gains."""
    return name.split(".")[-1].startswith("w")


def init_params(config: ModelConfig, seed: int) -> ParamStore:
    rng = np.random.default_rng(seed)
    store = ParamStore(config=config)

    def uniform(name: str, rows: int, cols: int, fan_in: int) -> None:
        bound = 1.0 / math.sqrt(fan_in)
        store.tensors[name] = ad.parameter(rng.uniform(-bound, bound, size=(rows, cols)))

    def linear(prefix: str, n_in: int, n_out: int, w: str = "w", b: str = "b") -> None:
        uniform(f"{prefix}.{w}", n_in, n_out, n_in)
        uniform(f"{prefix}.{b}", 1, n_out, n_in)

    d, d_ff = config.d, config.d_ff
    linear("proj_sem", config.d_sem, d)
    linear("proj_geom", config.d_geom, d)
    linear("gate", 2 * d, d, w="w1", b="b1")
    linear("gate", d, 1, w="w2", b="b2")
    store.tensors["gate.b2"] = ad.parameter(np.full((1, 1), -2.0))
    store.tensors["mask_token"] = ad.parameter(np.zeros((1, d)))

    for layer in range(config.n_layers):
        p = f"layer{layer}"
        for w in ("wq", "wk", "wv_sem", "wv_fused"):
            uniform(f"{p}.{w}", d, d, d)
        for stream in ("sem", "fused"):
            linear(f"{p}.{stream}.out", d, d)
            linear(f"{p}.{stream}.ffn", d, d_ff, w="w1", b="b1")
            linear(f"{p}.{stream}.ffn", d_ff, d, w="w2", b="b2")
            for ln in ("ln1", "ln2"):
                store.tensors[f"{p}.{stream}.{ln}.gain"] = ad.parameter(np.ones((1, d)))
                store.tensors[f"{p}.{stream}.{ln}.bias"] = ad.parameter(np.zeros((1, d)))

    linear("rec", d, d, w="w1", b="b1")
    linear("rec", d, config.d_sem, w="w2", b="b2")
    linear("dist", 2 * d, d, w="w1", b="b1")
    linear("dist", d, 1, w="w2", b="b2")
    linear("topo", 2 * d, d, w="w1", b="b1")
    linear("topo", d, 4, w="w2", b="b2")
    return store


@dataclass
class DualStreamOutput:
    h_sem: Tensor
    h_fused: Tensor
    attention: List[List[Tensor]]  # [layer][head], rows sum to 1
    alpha: Tensor                  # gate values per entity


def _mlp2(params: ParamStore, prefix: str, x: Tensor) -> Tensor:
    h = ad.relu(ad.add_bias(ad.matmul(x, params[f"{prefix}.w1"]), params[f"{prefix}.b1"]))
    return ad.add_bias(ad.matmul(h, params[f"{prefix}.w2"]), params[f"{prefix}.b2"])


def fuse(params: ParamStore, sem_rows: Tensor, geom_rows: Tensor) -> Tuple[Tensor, Tensor]:
    """Adaptive gate over projected embeddings: alpha weighs geometry,
    (1 - alpha) semantics. Masked rows must already carry the mask token."""
    gate_in = ad.concat_cols([sem_rows, geom_rows])
    alpha = ad.sigmoid(_mlp2(params, "gate", gate_in))
    ones = ad.constant(np.ones((sem_rows.shape[0], 1)))
    fused = ad.add(ad.scale_rows(sem_rows, ad.sub(ones, alpha)),
                   ad.scale_rows(geom_rows, alpha))
    return fused, alpha


def _sublayer(params: ParamStore, prefix: str, x: Tensor, update: Tensor,
              ln: str, rate: float, rng) -> Tensor:
    if rng is not None and rate > 0.0:
        update = ad.dropout(update, rate, rng)
    summed = ad.add(x, update)
    return ad.layer_norm_rows(summed, params[f"{prefix}.{ln}.gain"],
                              params[f"{prefix}.{ln}.bias"])


def forward_window(params: ParamStore, e_sem: np.ndarray, e_geom: np.ndarray,
                   mask_positions: Sequence[int], mode: str = "eval",
                   rng: Optional[np.random.Generator] = None) -> DualStreamOutput:
    """Run the dual-stream encoder over one window.

    ``e_sem`` (n x d_sem) and ``e_geom`` (n x d_geom) are the frozen input
    embeddings; ``mask_positions`` index rows whose semantic component is
    replaced by the mask token. ``mode="train"`` enables dropout (rng
    required); evaluation is deterministic.
    """
    cfg = params.config
    n = e_sem.shape[0]
    if n < 1:
        raise WindowSkipped("empty window")
    if mode == "train" and rng is None:
        raise ValueError("training mode requires an rng for dropout")
    drop_rng = rng if mode == "train" else None

    proj_sem = ad.add_bias(ad.matmul(ad.constant(e_sem), params["proj_sem.w"]),
                           params["proj_sem.b"])
    proj_geom = ad.add_bias(ad.matmul(ad.constant(e_geom), params["proj_geom.w"]),
                            params["proj_geom.b"])

    keep = np.ones((n, cfg.d))
    flag = np.zeros((n, 1))
    for pos in mask_positions:
        keep[pos, :] = 0.0
        flag[pos, 0] = 1.0
    masked_sem = ad.add(ad.mul(proj_sem, ad.constant(keep)),
                        ad.matmul(ad.constant(flag), params["mask_token"]))

    fused, alpha = fuse(params, masked_sem, proj_geom)

    x_sem, x_fused, qk_src = masked_sem, fused, fused
    d_h = cfg.d // cfg.n_heads
    inv_sqrt = 1.0 / math.sqrt(d_h)
    attention: List[List[Tensor]] = []

    for layer in range(cfg.n_layers):
        p = f"layer{layer}"
        q = ad.matmul(qk_src, params[f"{p}.wq"])
        k = ad.matmul(qk_src, params[f"{p}.wk"])
        v_sem = ad.matmul(x_sem, params[f"{p}.wv_sem"])
        v_fused = ad.matmul(x_fused, params[f"{p}.wv_fused"])

        heads_sem, heads_fused, maps = [], [], []
        for h in range(cfg.n_heads):
            lo, hi = h * d_h, (h + 1) * d_h
            scores = ad.scale(ad.matmul(ad.slice_cols(q, lo, hi),
                                        ad.transpose(ad.slice_cols(k, lo, hi))), inv_sqrt)
            attn = ad.softmax_rows(scores)
            maps.append(attn)
            heads_sem.append(ad.matmul(attn, ad.slice_cols(v_sem, lo, hi)))
            heads_fused.append(ad.matmul(attn, ad.slice_cols(v_fused, lo, hi)))
        attention.append(maps)

        out_sem = ad.add_bias(ad.matmul(ad.concat_cols(heads_sem), params[f"{p}.sem.out.w"]),
                              params[f"{p}.sem.out.b"])
        out_fused = ad.add_bias(ad.matmul(ad.concat_cols(heads_fused), params[f"{p}.fused.out.w"]),
                                params[f"{p}.fused.out.b"])
        x_sem = _sublayer(params, f"{p}.sem", x_sem, out_sem, "ln1", cfg.dropout, drop_rng)
        x_fused = _sublayer(params, f"{p}.fused", x_fused, out_fused, "ln1", cfg.dropout, drop_rng)

        x_sem = _sublayer(params, f"{p}.sem", x_sem, _mlp2(params, f"{p}.sem.ffn", x_sem),
                          "ln2", cfg.dropout, drop_rng)
        x_fused = _sublayer(params, f"{p}.fused", x_fused, _mlp2(params, f"{p}.fused.ffn", x_fused),
                            "ln2", cfg.dropout, drop_rng)
        qk_src = x_fused

    return DualStreamOutput(h_sem=x_sem, h_fused=x_fused, attention=attention, alpha=alpha)


def reconstruct(params: ParamStore, h_sem_rows: Tensor) -> Tensor:
    """Predict raw semantic embeddings from contextual semantic rows."""
    return _mlp2(params, "rec", h_sem_rows)


def predict_pair(params: ParamStore, h_fused: Tensor, idx_i: Sequence[int],
                 idx_j: Sequence[int]) -> Tuple[Tensor, Tensor]:
    """Distance estimate (normalized by window size) and 4-way relation
    logits for row pairs of the fused stream."""
    pair = ad.concat_cols([ad.gather_rows(h_fused, idx_i), ad.gather_rows(h_fused, idx_j)])
    d_hat = _mlp2(params, "dist", pair)
    logits = _mlp2(params, "topo", pair)
    return d_hat, logits


# ---------------------------------------------------------------------------
# checkpoint format: one JSON document, parameter path -> {shape, data}


def save_checkpoint(path, params: ParamStore, config_echo: Optional[dict] = None,
                    seeds: Optional[dict] = None) -> None:
    doc = {
        "format": "geoctx-checkpoint-v1",
        "model": asdict(params.config),
        "config": config_echo or {},
        "seeds": seeds or {},
        "params": {
            name: {"shape": list(t.shape), "data": t.data.reshape(-1).tolist()}
            for name, t in params.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_checkpoint(path) -> Tuple[ParamStore, dict]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    config = ModelConfig(**doc["model"])
    store = ParamStore(config=config)
    for name, entry in doc["params"].items():
        rows, cols = entry["shape"]
        arr = np.array(entry["data"], dtype=np.float64).reshape(rows, cols)
        store.tensors[name] = ad.parameter(arr)
    return store, doc
