"""Deterministic, non-learned embedders for semantics and geometry.

Semantic embeddings hash each token (64-bit FNV-1a) into a fixed codebook of
pseudo-random Gaussian rows, sum, and L2-normalize; the result depends only
on the token multiset and the codebook seed. Geometry embeddings combine
Fourier features of window-local coordinates with a type one-hot and
log-scaled length/area.
"""

from __future__ import annotations

import functools
import math
from typing import Iterable, List, Tuple

import numpy as np

from .geoentities import Geometry
from .relations import geometry_descriptors
from .windows import SpatialWindow

FNV_OFFSET = 14695981039346656037
FNV_PRIME = 1099511628211
FNV_MASK = (1 << 64) - 1

CODEBOOK_ROWS = 4096
EMPTY_TOKEN = "<empty>"

GEOM_SAMPLES = 16
GEOM_FREQS = (1.0, 2.0, 4.0, 8.0)  # 2**k, k = 0..3
GEOM_DIM = 4 * len(GEOM_FREQS) + 3 + 2  # fourier + type one-hot + log length/area

_KIND_INDEX = {"point": 0, "polyline": 1, "polygon": 2}


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & FNV_MASK
    return h


class SemanticCodebook:
    """Fixed codebook of unit-variance Gaussian rows indexed by token hash."""

    def __init__(self, dim: int = 64, rows: int = CODEBOOK_ROWS, seed: int = 0):
        self.dim = dim
        self.rows = rows
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.table = rng.standard_normal((rows, dim))

    def _row(self, token: str) -> np.ndarray:
        return self.table[fnv1a64(token.encode("utf-8")) % self.rows]

    def encode(self, tokens: Iterable[str]) -> np.ndarray:
        toks = list(tokens)
        if not toks:
            toks = [EMPTY_TOKEN]
        vec = np.zeros(self.dim)
        for t in toks:
            vec += self._row(t)
        norm = float(np.linalg.norm(vec))
        if norm < 1e-12:
            raise ValueError("token multiset hashed to a zero vector")
        return vec / norm


@functools.lru_cache(maxsize=8)
def _codebook(dim: int, seed: int) -> SemanticCodebook:
    return SemanticCodebook(dim=dim, seed=seed)


def encode_semantic(tokens: Iterable[str], codebook_seed: int, dim: int = 64) -> np.ndarray:
    """One-shot semantic embedding; caches the codebook per (dim, seed)."""
    return _codebook(dim, codebook_seed).encode(tokens)


def _sample_points(g: Geometry, m: int = GEOM_SAMPLES) -> List[Tuple[float, float]]:
    """m points spread uniformly by arc length (boundary for polygons); a
    point is repeated m times."""
    if g.kind == "point":
        return [g.coords[0]] * m
    segs = list(zip(g.coords[:-1], g.coords[1:]))
    lengths = [math.dist(a, b) for a, b in segs]
    total = sum(lengths)
    targets = [(k + 0.5) / m * total for k in range(m)]
    pts = []
    seg_idx = 0
    walked = 0.0
    for s in targets:
        while seg_idx < len(segs) - 1 and walked + lengths[seg_idx] < s:
            walked += lengths[seg_idx]
            seg_idx += 1
        a, b = segs[seg_idx]
        t = (s - walked) / lengths[seg_idx] if lengths[seg_idx] > 0 else 0.0
        pts.append((a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])))
    return pts


def encode_geometry(g: Geometry, window: SpatialWindow) -> np.ndarray:
    """Window-frame geometry embedding of dimension GEOM_DIM."""
    cx, cy = window.center
    half = 0.5 * window.size
    pts = _sample_points(g)
    xs = np.array([(p[0] - cx) / half for p in pts])
    ys = np.array([(p[1] - cy) / half for p in pts])
    feats = []
    for f in GEOM_FREQS:
        feats.append(np.mean(np.sin(math.pi * f * xs)))
        feats.append(np.mean(np.cos(math.pi * f * xs)))
        feats.append(np.mean(np.sin(math.pi * f * ys)))
        feats.append(np.mean(np.cos(math.pi * f * ys)))
    one_hot = [0.0, 0.0, 0.0]
    one_hot[_KIND_INDEX[g.kind]] = 1.0
    _, length, area = geometry_descriptors(g)
    vec = np.array(feats + one_hot + [math.log1p(length), math.log1p(area)])
    if not np.all(np.isfinite(vec)):
        raise ValueError("non-finite geometry embedding")
    return vec
