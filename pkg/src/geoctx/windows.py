"""Spatial windowing and relational context construction.

Square windows tile the dataset extent with a stride; each window collects
the entities that intersect it, the anchor/sibling groups used by the
relational objectives, and the sampled pairs used by the pairwise heads.
All sampling is deterministic given a seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from .geoentities import Dataset, Geoentity, Geometry
from . import relations
from .relations import TOUCH_EPS, bbox_gap

POLYLINE_BUFFER_M = 30.0
POLYGON_BUFFER_M = 5.0
GLOBAL_PAIR_RADIUS_M = 100.0
MEMBER_CAP = 128

RANDOM, HARD, GLOBAL_BASELINE = "random", "hard", "global_baseline"


@dataclass
class SpatialWindow:
    index: int
    bounds: Tuple[float, float, float, float]  # (x0, y0, x1, y1), square
    members: List[int]                         # entity ids, ascending

    @property
    def size(self) -> float:
        return self.bounds[2] - self.bounds[0]

    @property
    def center(self) -> Tuple[float, float]:
        x0, y0, x1, y1 = self.bounds
        return (0.5 * (x0 + x1), 0.5 * (y0 + y1))


@dataclass(frozen=True)
class SiblingGroup:
    anchor_key: int
    relation: int
    member_type: str                # "point" | "polygon"
    member_ids: Tuple[int, ...]     # ascending


@dataclass(frozen=True)
class PairSample:
    i: int
    j: int
    d: float
    r: int
    kind: str


def _axis_origins(lo: float, hi: float, size: float, stride: float) -> List[float]:
    span = hi - lo
    if span < size:
        return [lo]
    k_max = int(math.floor((span - size) / stride))
    return [lo + k * stride for k in range(k_max + 1)]


def build_windows(extent: Tuple[float, float, float, float], size: float,
                  stride: float) -> List[Tuple[float, float, float, float]]:
    """Window bounds tiling the extent; a single window covers extents
    smaller than the window size."""
    if size <= 0 or stride <= 0 or stride > size:
        raise ValueError(f"need size > 0 and 0 < stride <= size, got {size}, {stride}")
    x_min, y_min, x_max, y_max = extent
    bounds = []
    for y0 in _axis_origins(y_min, y_max, size, stride):
        for x0 in _axis_origins(x_min, x_max, size, stride):
            bounds.append((x0, y0, x0 + size, y0 + size))
    return bounds


def _rect_geometry(bounds) -> Geometry:
    x0, y0, x1, y1 = bounds
    return Geometry("polygon", ((x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0)))


def _intersects_rect(g: Geometry, bounds) -> bool:
    x0, y0, x1, y1 = bounds
    bx0, by0, bx1, by1 = g.bbox()
    if bx0 > x1 or bx1 < x0 or by0 > y1 or by1 < y0:
        return False
    if bx0 >= x0 and bx1 <= x1 and by0 >= y0 and by1 <= y1:
        return True
    return relations.min_distance(g, _rect_geometry(bounds)) == 0.0


def assign_members(dataset: Dataset, bounds_list, cap: int = MEMBER_CAP) -> List[SpatialWindow]:
    """Resolve window membership (inclusive of boundary contact). Windows
    over the cap keep the entities nearest the window center."""
    windows = []
    for idx, bounds in enumerate(bounds_list):
        member_ids = [e.id for e in dataset.entities if _intersects_rect(e.geometry, bounds)]
        if len(member_ids) > cap:
            cx, cy = (0.5 * (bounds[0] + bounds[2]), 0.5 * (bounds[1] + bounds[3]))
            center = Geometry("point", ((cx, cy),))
            ranked = sorted(
                member_ids,
                key=lambda eid: (relations.min_distance(dataset.by_id[eid].geometry, center), eid),
            )
            member_ids = ranked[:cap]
        windows.append(SpatialWindow(index=idx, bounds=bounds, members=sorted(member_ids)))
    return windows


def select_masks(window: SpatialWindow, ratio: float, seed: int) -> Set[int]:
    """Uniform mask set over window members: max(1, floor(ratio * n)) ids
    for n >= 2, empty otherwise."""
    if not (0.0 < ratio < 1.0):
        raise ValueError(f"mask ratio must lie in (0, 1), got {ratio}")
    n = len(window.members)
    if n < 2:
        return set()
    k = max(1, int(math.floor(ratio * n)))
    rng = np.random.default_rng(seed)
    picks = rng.choice(n, size=k, replace=False)
    return {window.members[i] for i in picks}


class PairCache:
    """Memoized pairwise distance/relation lookups within one window."""

    def __init__(self, dataset: Dataset):
        self._by_id = dataset.by_id
        self._dist: Dict[Tuple[int, int], float] = {}
        self._rel: Dict[Tuple[int, int], int] = {}

    def distance(self, i: int, j: int) -> float:
        key = (i, j) if i < j else (j, i)
        if key not in self._dist:
            self._dist[key] = relations.min_distance(
                self._by_id[key[0]].geometry, self._by_id[key[1]].geometry)
        return self._dist[key]

    def relation(self, i: int, j: int) -> int:
        key = (i, j) if i < j else (j, i)
        if key not in self._rel:
            if self.distance(*key) > TOUCH_EPS:
                self._rel[key] = relations.DISJOINT
            else:
                self._rel[key] = relations.classify_relation(
                    self._by_id[key[0]].geometry, self._by_id[key[1]].geometry)
        return self._rel[key]


def build_sibling_groups(window: SpatialWindow, dataset: Dataset) -> List[SiblingGroup]:
    """Anchor/sibling groups within one window.

    Polyline anchors (noded segments grouped by parent way) collect point and
    polygon members within 30 m; polygon anchors collect point members within
    5 m. Group key is (anchor, relation, member type); polylines never appear
    as members. The anchor itself must intersect the window.
    """
    members = [dataset.by_id[eid] for eid in window.members]
    points = [e for e in members if e.geometry.kind == "point"]
    polygons = [e for e in members if e.geometry.kind == "polygon"]

    line_anchors: Dict[int, List[Geoentity]] = {}
    for e in members:
        if e.geometry.kind == "polyline":
            line_anchors.setdefault(e.anchor_key(), []).append(e)

    grouped: Dict[Tuple[int, int, str], List[int]] = {}

    def consider(anchor_key: int, parts: List[Geometry], candidates: List[Geoentity],
                 radius: float, member_type: str) -> None:
        part_boxes = [p.bbox() for p in parts]
        for cand in candidates:
            cb = cand.geometry.bbox()
            if min(bbox_gap(cb, pb) for pb in part_boxes) > radius + TOUCH_EPS:
                continue
            if relations.min_distance_multi(cand.geometry, parts) > radius:
                continue
            rel = relations.classify_relation_multi(cand.geometry, parts)
            grouped.setdefault((anchor_key, rel, member_type), []).append(cand.id)

    for key, segs in sorted(line_anchors.items()):
        parts = [s.geometry for s in segs]
        consider(key, parts, points, POLYLINE_BUFFER_M, "point")
        consider(key, parts, polygons, POLYLINE_BUFFER_M, "polygon")
    for anchor in polygons:
        consider(anchor.id, [anchor.geometry], points, POLYGON_BUFFER_M, "point")

    groups = [
        SiblingGroup(anchor_key=k[0], relation=k[1], member_type=k[2],
                     member_ids=tuple(sorted(ids)))
        for k, ids in sorted(grouped.items())
        if len(ids) >= 1
    ]
    return groups


def sibling_pair_set(groups: Sequence[SiblingGroup]) -> Set[Tuple[int, int]]:
    pairs: Set[Tuple[int, int]] = set()
    for g in groups:
        ids = g.member_ids
        for a in range(len(ids)):
            for b in range(a + 1, len(ids)):
                pairs.add((ids[a], ids[b]))
    return pairs


def _all_pairs(member_ids: Sequence[int]) -> List[Tuple[int, int]]:
    return [(member_ids[a], member_ids[b])
            for a in range(len(member_ids)) for b in range(a + 1, len(member_ids))]


def sample_geo_pairs(window: SpatialWindow, dataset: Dataset, n_random: int,
                     n_hard: int, seed: int,
                     cache: Optional[PairCache] = None) -> List[PairSample]:
    """Up to n_hard non-disjoint pairs, then up to n_random pairs from the
    remainder, each annotated with distance and relation."""
    if len(window.members) < 2:
        raise ValueError("pair sampling needs a window with >= 2 members")
    cache = cache or PairCache(dataset)
    rng = np.random.default_rng(seed)
    pairs = _all_pairs(window.members)

    boxes = {eid: dataset.by_id[eid].geometry.bbox() for eid in window.members}
    hard_pool = [p for p in pairs
                 if bbox_gap(boxes[p[0]], boxes[p[1]]) <= TOUCH_EPS
                 and cache.relation(*p) != relations.DISJOINT]
    out: List[PairSample] = []
    taken: Set[Tuple[int, int]] = set()
    if hard_pool and n_hard > 0:
        picks = rng.choice(len(hard_pool), size=min(n_hard, len(hard_pool)), replace=False)
        for k in picks:
            i, j = hard_pool[k]
            taken.add((i, j))
            out.append(PairSample(i=i, j=j, d=cache.distance(i, j),
                                  r=cache.relation(i, j), kind=HARD))
    rest = [p for p in pairs if p not in taken]
    if rest and n_random > 0:
        picks = rng.choice(len(rest), size=min(n_random, len(rest)), replace=False)
        for k in picks:
            i, j = rest[k]
            out.append(PairSample(i=i, j=j, d=cache.distance(i, j),
                                  r=cache.relation(i, j), kind=RANDOM))
    return out


def sample_global_pairs(window: SpatialWindow, dataset: Dataset,
                        groups: Sequence[SiblingGroup], n_global: int, seed: int,
                        cache: Optional[PairCache] = None) -> List[PairSample]:
    """Same-type baseline pairs within 100 m, purified of sibling pairs."""
    if len(window.members) < 2:
        raise ValueError("pair sampling needs a window with >= 2 members")
    cache = cache or PairCache(dataset)
    rng = np.random.default_rng(seed)
    sibling_pairs = sibling_pair_set(groups)
    boxes = {eid: dataset.by_id[eid].geometry.bbox() for eid in window.members}
    kinds = {eid: dataset.by_id[eid].geometry.kind for eid in window.members}

    pool = []
    for i, j in _all_pairs(window.members):
        if kinds[i] != kinds[j] or kinds[i] == "polyline":
            continue
        if (i, j) in sibling_pairs:
            continue
        if bbox_gap(boxes[i], boxes[j]) > GLOBAL_PAIR_RADIUS_M:
            continue
        if cache.distance(i, j) > GLOBAL_PAIR_RADIUS_M:
            continue
        pool.append((i, j))
    out = []
    if pool and n_global > 0:
        picks = rng.choice(len(pool), size=min(n_global, len(pool)), replace=False)
        for k in picks:
            i, j = pool[k]
            out.append(PairSample(i=i, j=j, d=cache.distance(i, j),
                                  r=cache.relation(i, j), kind=GLOBAL_BASELINE))
    return out
