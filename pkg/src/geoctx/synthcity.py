"""Deterministic synthetic city with relational semantic structure.

A grid of noded road polylines bounds square blocks; each block gets a zone
drawn from an imbalanced 8-class palette with spatial coherence. Buildings
sit near block-edge roads, tokens correlated with the block zone; POIs sit
inside buildings (sharing a per-building category distribution) and along
roads. A held-out fraction of entities carries no tokens at all, so their
identity is only recoverable from spatial context. Road segments carry a
latent speed driven by road class and nearby POI density.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from .geoentities import Dataset, Geoentity, Geometry, tokenize
from .relations import min_distance
from .seeding import derive_seed

ZONE_NAMES = ("residential", "industrial", "commercial", "mixeduse",
              "educational", "civic", "sports", "transport")

BUILDING_VOCAB = (
    ("home", "apartment", "terrace"),
    ("factory", "warehouse", "depot"),
    ("shop", "office", "mall"),
    ("mixed", "livework", "studio"),
    ("school", "college", "library"),
    ("hall", "clinic", "court"),
    ("gym", "stadium", "pool"),
    ("station", "garage", "terminal"),
)

POI_VOCAB = (
    ("grocery", "laundry", "daycare"),
    ("toolshop", "canteen", "freight"),
    ("cafe", "boutique", "bank"),
    ("bakery", "barber", "pharmacy"),
    ("bookstore", "tutoring", "copyshop"),
    ("postoffice", "notary", "charity"),
    ("juicebar", "sportshop", "physio"),
    ("ticketing", "kiosk", "carrental"),
)

ROAD_CLASSES = ("artery", "avenue", "street")
ROAD_BASE_SPEED = {"artery": 45.0, "avenue": 32.0, "street": 22.0}

# (hosting probability, POI count) per zone: commercial-ish blocks are dense
# with POIs, residential ones sparse, so POI context separates zones and
# drives the speed drag
ZONE_POI_PROFILE = (
    (0.35, 1),  # residential
    (0.45, 2),  # industrial
    (0.90, 3),  # commercial
    (0.80, 2),  # mixeduse
    (0.60, 2),  # educational
    (0.50, 2),  # civic
    (0.40, 1),  # sports
    (0.60, 2),  # transport
)


@dataclass
class CityParams:
    extent: float = 1000.0
    road_spacing: float = 100.0
    buildings_per_block: int = 2
    extra_building_prob: float = 0.0
    poi_building_prob: float = 1.0   # scales the per-zone hosting profile
    pois_per_building: int = 3       # cap on the per-zone POI count
    roadside_poi_prob: float = 0.10
    zone_centers: int = 16
    building_zone_word_prob: float = 0.15
    token_noise: float = 0.1
    empty_token_fraction: float = 0.45
    poi_empty_fraction: float = 0.05
    poi_speed_coeff: float = 2.0
    poi_speed_radius: float = 60.0
    speed_noise: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.road_spacing >= self.extent:
            raise ValueError("road spacing must be smaller than the extent")


@dataclass
class LatentLabels:
    zones: Dict[int, int] = field(default_factory=dict)    # polygon id -> class
    speeds: Dict[int, float] = field(default_factory=dict)  # segment id -> mph-like


def _road_class(line_index: int) -> str:
    if line_index % 5 == 0:
        return "artery"
    if line_index % 2 == 0:
        return "avenue"
    return "street"


# building slots per block side: (axis, near_low_edge); lateral span keeps
# corner regions free so slots never overlap
_SLOTS = (("y", True), ("y", False), ("x", True), ("x", False))


def _slot_rect(rng, block_x: float, block_y: float, spacing: float, slot) -> Tuple[float, float, float, float]:
    w = rng.uniform(12.0, 22.0)
    h = rng.uniform(12.0, 22.0)
    off = rng.uniform(4.0, 6.0)
    axis, near_low = slot
    if axis == "y":
        lat = block_x + rng.uniform(30.0, spacing - 30.0 - w)
        y0 = block_y + off if near_low else block_y + spacing - off - h
        return (lat, y0, lat + w, y0 + h)
    lat = block_y + rng.uniform(30.0, spacing - 30.0 - h)
    x0 = block_x + off if near_low else block_x + spacing - off - w
    return (x0, lat, x0 + w, lat + h)


def _rect_polygon(rect) -> Geometry:
    x0, y0, x1, y1 = rect
    return Geometry("polygon", ((x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0)))


def generate_city(params: CityParams) -> Tuple[Dataset, LatentLabels]:
    rng = np.random.default_rng(derive_seed(params.seed, "city"))
    spacing = params.road_spacing
    extent = params.extent
    n_lines = int(round(extent / spacing)) + 1
    ticks = [k * spacing for k in range(n_lines)]

    entities: List[Geoentity] = []
    labels = LatentLabels()
    next_id = 1

    def take_id() -> int:
        nonlocal next_id
        eid = next_id
        next_id += 1
        return eid

    # --- roads: grid lines noded at crossings, segments share the line id
    line_meta = []  # (parent_id, road_class, token_flag)
    segments: List[Geoentity] = []
    for axis in ("v", "h"):
        for k in range(n_lines):
            parent = take_id()
            cls = _road_class(k)
            with_tokens = rng.random() >= 0.1
            line_meta.append((parent, cls, with_tokens))
            toks = tokenize(["road", cls]) if with_tokens else ()
            for a, b in zip(ticks[:-1], ticks[1:]):
                coords = ((ticks[k], a), (ticks[k], b)) if axis == "v" \
                    else ((a, ticks[k]), (b, ticks[k]))
                seg = Geoentity(id=take_id(), parent_id=parent, tokens=toks,
                                geometry=Geometry("polyline", coords))
                segments.append(seg)
    entities.extend(segments)

    # --- zones: imbalanced labels on coherent patches
    n_blocks = n_lines - 1
    center_pos = rng.uniform(0.0, extent, size=(params.zone_centers, 2))
    center_label = np.zeros(params.zone_centers, dtype=int)
    center_label[:8] = rng.permutation(8)  # every class owns at least one patch
    center_label[8:] = 0                   # remaining patches feed the dominant class
    block_zone = np.zeros((n_blocks, n_blocks), dtype=int)
    for bi in range(n_blocks):
        for bj in range(n_blocks):
            cx = (bi + 0.5) * spacing
            cy = (bj + 0.5) * spacing
            d2 = (center_pos[:, 0] - cx) ** 2 + (center_pos[:, 1] - cy) ** 2
            block_zone[bi, bj] = center_label[int(np.argmin(d2))]

    # --- buildings and POIs
    pois: List[Geoentity] = []
    buildings: List[Geoentity] = []
    for bi in range(n_blocks):
        for bj in range(n_blocks):
            zone = int(block_zone[bi, bj])
            bx, by = ticks[bi], ticks[bj]
            n_b = params.buildings_per_block
            if rng.random() < params.extra_building_prob:
                n_b += 1
            slot_order = rng.permutation(len(_SLOTS))[:n_b]
            for s in slot_order:
                rect = _slot_rect(rng, bx, by, spacing, _SLOTS[int(s)])
                # buildings mostly look generic; their function shows in the
                # POIs around them, so zone recovery needs spatial context
                words = ["building"]
                if rng.random() < params.building_zone_word_prob:
                    src = zone
                    if rng.random() < params.token_noise:
                        src = int(rng.integers(0, 8))
                    words.append(BUILDING_VOCAB[src][int(rng.integers(0, 3))])
                toks = () if rng.random() < params.empty_token_fraction \
                    else tokenize(words)
                b = Geoentity(id=take_id(), parent_id=None, tokens=toks,
                              geometry=_rect_polygon(rect))
                buildings.append(b)
                labels.zones[b.id] = zone

                host_prob, n_pois = ZONE_POI_PROFILE[zone]
                host_prob = min(1.0, host_prob * params.poi_building_prob)
                if rng.random() < host_prob:
                    # pois in one building share a category distribution
                    cat_pool = [POI_VOCAB[zone][int(rng.integers(0, 3))] for _ in range(2)]
                    for _ in range(min(n_pois, params.pois_per_building)):
                        px = rng.uniform(rect[0] + 2.0, rect[2] - 2.0)
                        py = rng.uniform(rect[1] + 2.0, rect[3] - 2.0)
                        src = zone
                        if rng.random() < params.token_noise:
                            src = int(rng.integers(0, 8))
                        word = cat_pool[int(rng.integers(0, len(cat_pool)))] if src == zone \
                            else POI_VOCAB[src][int(rng.integers(0, 3))]
                        ptoks = () if rng.random() < params.poi_empty_fraction \
                            else tokenize(["poi", word])
                        pois.append(Geoentity(id=take_id(), parent_id=None, tokens=ptoks,
                                              geometry=Geometry("point", ((px, py),))))
            if rng.random() < params.roadside_poi_prob:
                px = bx + rng.uniform(10.0, spacing - 10.0)
                py = by + rng.uniform(3.0, 25.0)
                word = POI_VOCAB[zone][int(rng.integers(0, 3))]
                ptoks = () if rng.random() < params.poi_empty_fraction \
                    else tokenize(["poi", word])
                pois.append(Geoentity(id=take_id(), parent_id=None, tokens=ptoks,
                                      geometry=Geometry("point", ((px, py),))))
    entities.extend(buildings)
    entities.extend(pois)

    # --- latent speeds: class base minus local POI pressure
    meta_by_parent = {m[0]: m for m in line_meta}
    poi_boxes = [(p, p.geometry.bbox()) for p in pois]
    for seg in segments:
        cls = meta_by_parent[seg.parent_id][1]
        (x0, y0, x1, y1) = seg.geometry.bbox()
        near = 0
        for p, (px0, py0, px1, py1) in poi_boxes:
            if px0 > x1 + params.poi_speed_radius or px1 < x0 - params.poi_speed_radius \
                    or py0 > y1 + params.poi_speed_radius or py1 < y0 - params.poi_speed_radius:
                continue
            if min_distance(seg.geometry, p.geometry) <= params.poi_speed_radius:
                near += 1
        speed = ROAD_BASE_SPEED[cls] - params.poi_speed_coeff * near \
            + rng.normal(0.0, params.speed_noise)
        labels.speeds[seg.id] = max(2.0, float(speed))

    dataset = Dataset(entities=entities, extent=(0.0, 0.0, extent, extent))
    return dataset, labels


def save_labels(path, labels: LatentLabels) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for eid in sorted(set(labels.zones) | set(labels.speeds)):
            fh.write(json.dumps({
                "id": eid,
                "zone": labels.zones.get(eid),
                "speed": labels.speeds.get(eid),
            }) + "\n")


def load_labels(path) -> LatentLabels:
    labels = LatentLabels()
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if obj.get("zone") is not None:
                labels.zones[obj["id"]] = int(obj["zone"])
            if obj.get("speed") is not None:
                labels.speeds[obj["id"]] = float(obj["speed"])
    return labels
