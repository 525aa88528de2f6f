"""Domain types for vector geoentities and line-delimited ingestion.

A geoentity couples an id, a multiset of lowercase text tokens, and a typed
geometry (point, polyline, or polygon exterior ring) in planar meters.
Records arrive as one JSON object per line:

    {"id": 7, "parent_id": null, "kind": "point",
     "coords": [[10.0, 20.0]], "tags": ["Cafe", "amenity=cafe"]}

Longitude/latitude inputs must be projected to meters first (``project_lonlat``).
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

EARTH_RADIUS_M = 6_371_000.0

_TOKEN_SPLIT = re.compile(r"[^0-9a-z]+")


class ParseError(ValueError):
    """Malformed ingestion record."""


class ValidationError(ValueError):
    """Geometry or dataset invariant violation."""


@dataclass(frozen=True)
class Geometry:
    kind: str  # "point" | "polyline" | "polygon"
    coords: Tuple[Tuple[float, float], ...]

    def __post_init__(self):
        validate_geometry(self.kind, self.coords)

    def bbox(self) -> Tuple[float, float, float, float]:
        xs = [p[0] for p in self.coords]
        ys = [p[1] for p in self.coords]
        return (min(xs), min(ys), max(xs), max(ys))


@dataclass(frozen=True)
class Geoentity:
    id: int
    parent_id: Optional[int]
    tokens: Tuple[str, ...]
    geometry: Geometry

    def token_key(self) -> Tuple[str, ...]:
        """Canonical multiset key; two entities have equal token multisets
        iff their keys compare equal."""
        return tuple(sorted(self.tokens))

    def anchor_key(self) -> int:
        """Identity used when the entity acts as an anchor; noded polyline
        segments of one parent way share a single identity."""
        if self.geometry.kind == "polyline" and self.parent_id is not None:
            return self.parent_id
        return self.id


@dataclass
class Dataset:
    entities: List[Geoentity]
    extent: Tuple[float, float, float, float]
    by_id: Dict[int, Geoentity] = field(init=False, repr=False)

    def __post_init__(self):
        x0, y0, x1, y1 = self.extent
        if not (x1 > x0 and y1 > y0):
            raise ValidationError(f"extent has non-positive width or height: {self.extent}")
        self.by_id = {}
        for e in self.entities:
            if e.id in self.by_id:
                raise ValidationError(f"duplicate entity id {e.id}")
            bx0, by0, bx1, by1 = e.geometry.bbox()
            if bx0 < x0 or by0 < y0 or bx1 > x1 or by1 > y1:
                raise ValidationError(f"entity {e.id} lies outside dataset extent")
            self.by_id[e.id] = e


def _segments(coords) -> Iterable[Tuple[Tuple[float, float], Tuple[float, float]]]:
    for a, b in zip(coords[:-1], coords[1:]):
        yield a, b


def _orient(a, b, c) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _on_segment(a, b, p) -> bool:
    # p assumed collinear with a-b
    return (min(a[0], b[0]) <= p[0] <= max(a[0], b[0])
            and min(a[1], b[1]) <= p[1] <= max(a[1], b[1]))


def _segments_touch(a1, a2, b1, b2) -> bool:
    """True when closed segments a and b share at least one point."""
    d1 = _orient(b1, b2, a1)
    d2 = _orient(b1, b2, a2)
    d3 = _orient(a1, a2, b1)
    d4 = _orient(a1, a2, b2)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 != 0 and d2 != 0 and d3 != 0 and d4 != 0:
        return True
    if d1 == 0 and _on_segment(b1, b2, a1):
        return True
    if d2 == 0 and _on_segment(b1, b2, a2):
        return True
    if d3 == 0 and _on_segment(a1, a2, b1):
        return True
    if d4 == 0 and _on_segment(a1, a2, b2):
        return True
    return False


def _ring_is_simple(coords) -> bool:
    """Closed ring free of self-intersections; consecutive edges may only
    share their common vertex."""
    n = len(coords) - 1  # edges
    edges = list(_segments(coords))
    for i in range(n):
        for j in range(i + 1, n):
            a1, a2 = edges[i]
            b1, b2 = edges[j]
            adjacent = (j == i + 1) or (i == 0 and j == n - 1)
            if adjacent:
                shared = a2 if j == i + 1 else a1
                # beyond the shared vertex, adjacent edges must be disjoint
                if _orient(a1, a2, b1) == 0 and _orient(a1, a2, b2) == 0:
                    # collinear neighbours: reject spikes that fold back
                    other = b2 if j == i + 1 else b1
                    if _on_segment(a1, a2, other) and other != shared:
                        return False
                continue
            if _segments_touch(a1, a2, b1, b2):
                return False
    return True


def shoelace_area(coords) -> float:
    """Signed area of a closed ring."""
    s = 0.0
    for (x0, y0), (x1, y1) in _segments(coords):
        s += x0 * y1 - x1 * y0
    return 0.5 * s


def validate_geometry(kind: str, coords: Sequence[Tuple[float, float]]) -> None:
    for p in coords:
        if len(p) != 2 or not all(math.isfinite(c) for c in p):
            raise ValidationError(f"non-finite or malformed coordinate {p!r}")
    if kind == "point":
        if len(coords) != 1:
            raise ValidationError(f"point must have exactly 1 vertex, got {len(coords)}")
    elif kind == "polyline":
        if len(coords) < 2:
            raise ValidationError(f"polyline must have >=2 vertices, got {len(coords)}")
        length = sum(math.dist(a, b) for a, b in _segments(coords))
        if length <= 0.0:
            raise ValidationError("polyline has zero total length")
    elif kind == "polygon":
        if len(coords) < 4:
            raise ValidationError(f"polygon ring must have >=4 vertices, got {len(coords)}")
        if coords[0] != coords[-1]:
            raise ValidationError("polygon not closed")
        interior = coords[:-1]
        if len(set(interior)) != len(interior):
            raise ValidationError("polygon has repeated vertices")
        if abs(shoelace_area(coords)) <= 0.0:
            raise ValidationError("polygon has zero area")
        if not _ring_is_simple(coords):
            raise ValidationError("polygon is self-intersecting")
    else:
        raise ValidationError(f"unknown geometry kind {kind!r}")


def tokenize(tags: Iterable[str]) -> Tuple[str, ...]:
    """Lowercase, split on non-alphanumerics, keep duplicates."""
    out: List[str] = []
    for tag in tags:
        out.extend(t for t in _TOKEN_SPLIT.split(tag.lower()) if t)
    return tuple(out)


def parse_geoentity_record(line: str) -> Geoentity:
    """Parse one line of the ingestion format into a validated Geoentity."""
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON record: {exc}: {line[:80]!r}") from exc
    if not isinstance(obj, dict):
        raise ParseError(f"record is not an object: {line[:80]!r}")
    try:
        eid = obj["id"]
        kind = obj["kind"]
        coords = obj["coords"]
        tags = obj["tags"]
    except KeyError as exc:
        raise ParseError(f"record missing field {exc}: {line[:80]!r}") from exc
    parent = obj.get("parent_id")
    if not isinstance(eid, int):
        raise ParseError(f"id must be an integer, got {eid!r}")
    if parent is not None and not isinstance(parent, int):
        raise ParseError(f"parent_id must be an integer or null, got {parent!r}")
    if not isinstance(tags, list) or not all(isinstance(t, str) for t in tags):
        raise ParseError(f"tags must be a list of strings: {line[:80]!r}")
    if not isinstance(coords, list):
        raise ParseError(f"coords must be a list of [x, y] pairs: {line[:80]!r}")
    try:
        pts = tuple((float(x), float(y)) for x, y in coords)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"coords must be [x, y] number pairs: {line[:80]!r}") from exc
    geom = Geometry(kind=kind, coords=pts)
    return Geoentity(id=eid, parent_id=parent, tokens=tokenize(tags), geometry=geom)


def serialize_geoentity(e: Geoentity) -> str:
    """Inverse of parsing, modulo tag normalization: tokens are emitted as
    tags, so parse(serialize(parse(x))) == parse(x)."""
    return json.dumps({
        "id": e.id,
        "parent_id": e.parent_id,
        "kind": e.geometry.kind,
        "coords": [[x, y] for x, y in e.geometry.coords],
        "tags": list(e.tokens),
    })


def project_lonlat(records: List[dict], origin: Tuple[float, float]) -> List[dict]:
    """Equirectangular local projection of raw record dicts.

    Input coords are (lon, lat) in degrees; output coords are planar meters
    relative to ``origin`` (lon0, lat0). Requires |lat| < 85 degrees.
    """
    lon0, lat0 = origin
    if abs(lat0) >= 85.0:
        raise ValidationError(f"origin latitude out of range: {lat0}")
    cos_lat0 = math.cos(math.radians(lat0))
    out = []
    for rec in records:
        coords = []
        for lon, lat in rec["coords"]:
            if abs(lat) >= 85.0:
                raise ValidationError(f"latitude out of range: {lat}")
            x = EARTH_RADIUS_M * math.radians(lon - lon0) * cos_lat0
            y = EARTH_RADIUS_M * math.radians(lat - lat0)
            coords.append([x, y])
        new = dict(rec)
        new["coords"] = coords
        out.append(new)
    return out


def load_dataset(path, extent: Optional[Tuple[float, float, float, float]] = None) -> Dataset:
    """Read a line-delimited file into a Dataset. The extent defaults to the
    tight bounding box of all geometries."""
    entities = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                entities.append(parse_geoentity_record(line))
            except (ParseError, ValidationError) as exc:
                raise type(exc)(f"{path}:{lineno}: {exc}") from exc
    if not entities:
        raise ValidationError(f"{path}: no records")
    if extent is None:
        boxes = [e.geometry.bbox() for e in entities]
        x0 = min(b[0] for b in boxes)
        y0 = min(b[1] for b in boxes)
        x1 = max(b[2] for b in boxes)
        y1 = max(b[3] for b in boxes)
        if x1 <= x0:
            x1 = x0 + 1.0
        if y1 <= y0:
            y1 = y0 + 1.0
        extent = (x0, y0, x1, y1)
    return Dataset(entities=entities, extent=extent)


def save_dataset(path, dataset: Dataset) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in dataset.entities:
            fh.write(serialize_geoentity(e) + "\n")
