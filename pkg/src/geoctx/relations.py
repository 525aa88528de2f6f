"""Metric and topological primitives over point / polyline / polygon geometries.

The point set of a polygon is its filled closed region; a polyline is its
curve; a point is itself. Relations collapse onto four symmetric codes with
precedence contains/within > adjacent > intersects > disjoint:

    0  disjoint    no shared point
    1  intersects  interiors meet (crossings, overlaps)
    2  adjacent    shared points but disjoint interiors (boundary contact)
    3  contains    one geometry lies entirely inside the other's closed region

Touching is decided up to TOUCH_EPS meters for floating-point robustness.
"""

from __future__ import annotations

import math
from typing import List, Sequence, Tuple

from .geoentities import Geometry

TOUCH_EPS = 1e-6

DISJOINT, INTERSECTS, ADJACENT, CONTAINS = 0, 1, 2, 3

_OUT, _ON, _IN = 0, 1, 2

Point = Tuple[float, float]


# ---------------------------------------------------------------------------
# low-level primitives


def _segs(g: Geometry) -> List[Tuple[Point, Point]]:
    if g.kind == "point":
        return []
    return list(zip(g.coords[:-1], g.coords[1:]))


def _orient(a: Point, b: Point, c: Point) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def point_seg_dist(p: Point, a: Point, b: Point) -> float:
    ax, ay = a
    bx, by = b
    px, py = p
    dx, dy = bx - ax, by - ay
    den = dx * dx + dy * dy
    if den == 0.0:
        return math.hypot(px - ax, py - ay)
    t = ((px - ax) * dx + (py - ay) * dy) / den
    t = min(1.0, max(0.0, t))
    return math.hypot(px - (ax + t * dx), py - (ay + t * dy))


def _segments_touch(a1: Point, a2: Point, b1: Point, b2: Point) -> bool:
    d1 = _orient(b1, b2, a1)
    d2 = _orient(b1, b2, a2)
    d3 = _orient(a1, a2, b1)
    d4 = _orient(a1, a2, b2)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) \
            and d1 != 0 and d2 != 0 and d3 != 0 and d4 != 0:
        return True
    def on(a, b, p):
        return (min(a[0], b[0]) <= p[0] <= max(a[0], b[0])
                and min(a[1], b[1]) <= p[1] <= max(a[1], b[1]))
    if d1 == 0 and on(b1, b2, a1):
        return True
    if d2 == 0 and on(b1, b2, a2):
        return True
    if d3 == 0 and on(a1, a2, b1):
        return True
    if d4 == 0 and on(a1, a2, b2):
        return True
    return False


def seg_seg_dist(a1: Point, a2: Point, b1: Point, b2: Point) -> float:
    if _segments_touch(a1, a2, b1, b2):
        return 0.0
    return min(
        point_seg_dist(a1, b1, b2),
        point_seg_dist(a2, b1, b2),
        point_seg_dist(b1, a1, a2),
        point_seg_dist(b2, a1, a2),
    )


def _proper_cross(a1: Point, a2: Point, b1: Point, b2: Point) -> bool:
    d1 = _orient(b1, b2, a1)
    d2 = _orient(b1, b2, a2)
    d3 = _orient(a1, a2, b1)
    d4 = _orient(a1, a2, b2)
    return (((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0))
            and d1 != 0 and d2 != 0 and d3 != 0 and d4 != 0)


def _point_in_ring(p: Point, ring: Sequence[Point], eps: float = TOUCH_EPS) -> int:
    """Locate p relative to a closed ring: _IN, _ON (within eps of the
    boundary), or _OUT. The boundary test runs first, so the ray cast never
    sees a near-degenerate edge hit."""
    edges = list(zip(ring[:-1], ring[1:]))
    for a, b in edges:
        if point_seg_dist(p, a, b) <= eps:
            return _ON
    x, y = p
    inside = False
    for (x0, y0), (x1, y1) in edges:
        if (y0 > y) != (y1 > y):
            xint = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
            if xint > x:
                inside = not inside
    return _IN if inside else _OUT


def _boundary_dist(g1: Geometry, g2: Geometry) -> float:
    """Min distance between the 1-D skeletons (curves / rings / points)."""
    if g1.kind == "point" and g2.kind == "point":
        return math.dist(g1.coords[0], g2.coords[0])
    if g1.kind == "point":
        return min(point_seg_dist(g1.coords[0], a, b) for a, b in _segs(g2))
    if g2.kind == "point":
        return min(point_seg_dist(g2.coords[0], a, b) for a, b in _segs(g1))
    return min(seg_seg_dist(a1, a2, b1, b2)
               for a1, a2 in _segs(g1) for b1, b2 in _segs(g2))


def _rep_point(g: Geometry) -> Point:
    return g.coords[0]


# ---------------------------------------------------------------------------
# public metric operations


def min_distance(g1: Geometry, g2: Geometry) -> float:
    """Minimum Euclidean distance between the two point sets; exactly 0 when
    the geometries intersect or touch."""
    d = _boundary_dist(g1, g2)
    if d == 0.0:
        return 0.0
    # boundaries apart: one geometry may still sit inside the other's region
    if g1.kind == "polygon" and _point_in_ring(_rep_point(g2), g1.coords, 0.0) == _IN:
        return 0.0
    if g2.kind == "polygon" and _point_in_ring(_rep_point(g1), g2.coords, 0.0) == _IN:
        return 0.0
    return d


def within_buffer(anchor: Geometry, member: Geometry, radius: float) -> bool:
    if radius < 0:
        raise ValueError(f"negative buffer radius: {radius}")
    return min_distance(anchor, member) <= radius


def diameter(g: Geometry) -> float:
    pts = g.coords
    return max((math.dist(p, q) for p in pts for q in pts), default=0.0)


def geometry_descriptors(g: Geometry) -> Tuple[Point, float, float]:
    """(centroid, length, area): points carry (self, 0, 0); polylines an
    arc-length weighted centroid and total length; polygons the shoelace
    area centroid, perimeter, and unsigned area."""
    if g.kind == "point":
        return g.coords[0], 0.0, 0.0
    if g.kind == "polyline":
        total = 0.0
        cx = cy = 0.0
        for a, b in _segs(g):
            w = math.dist(a, b)
            total += w
            cx += w * 0.5 * (a[0] + b[0])
            cy += w * 0.5 * (a[1] + b[1])
        return (cx / total, cy / total), total, 0.0
    signed = 0.0
    cx = cy = 0.0
    perim = 0.0
    for (x0, y0), (x1, y1) in _segs(g):
        cross = x0 * y1 - x1 * y0
        signed += cross
        cx += (x0 + x1) * cross
        cy += (y0 + y1) * cross
        perim += math.hypot(x1 - x0, y1 - y0)
    signed *= 0.5
    return (cx / (6.0 * signed), cy / (6.0 * signed)), perim, abs(signed)


def centroid(g: Geometry) -> Point:
    return geometry_descriptors(g)[0]


# ---------------------------------------------------------------------------
# relation classification


def _seg_split_params(a: Point, b: Point, ring: Sequence[Point], eps: float) -> List[float]:
    """Parameters in [0, 1] where segment a-b meets ring edges, used to cut
    the segment into sub-intervals that are each fully inside or outside."""
    ax, ay = a
    dx, dy = b[0] - ax, b[1] - ay
    den_ab = dx * dx + dy * dy
    params = [0.0, 1.0]
    for p1, p2 in zip(ring[:-1], ring[1:]):
        if not _segments_touch(a, b, p1, p2):
            continue
        d1 = _orient(a, b, p1)
        d2 = _orient(a, b, p2)
        if d1 == 0.0 and d2 == 0.0:
            # collinear edge: both projections bound an overlap interval
            for q in (p1, p2):
                t = ((q[0] - ax) * dx + (q[1] - ay) * dy) / den_ab
                params.append(min(1.0, max(0.0, t)))
            continue
        d3 = _orient(p1, p2, a)
        d4 = _orient(p1, p2, b)
        if d3 != d4:
            params.append(d3 / (d3 - d4))
        else:
            # touch at an endpoint of a-b
            for q, t in ((a, 0.0), (b, 1.0)):
                if point_seg_dist(q, p1, p2) <= eps:
                    params.append(t)
    return sorted(set(params))


def _seg_in_region(a: Point, b: Point, ring: Sequence[Point], eps: float) -> bool:
    """Whole closed segment inside the closed polygon region."""
    for loc in (_point_in_ring(a, ring, eps), _point_in_ring(b, ring, eps)):
        if loc == _OUT:
            return False
    ts = _seg_split_params(a, b, ring, eps)
    for t0, t1 in zip(ts[:-1], ts[1:]):
        tm = 0.5 * (t0 + t1)
        mid = (a[0] + tm * (b[0] - a[0]), a[1] + tm * (b[1] - a[1]))
        if _point_in_ring(mid, ring, eps) == _OUT:
            return False
    return True


def _seg_interior_probe(a: Point, b: Point, ring: Sequence[Point], eps: float) -> bool:
    """Some sub-interval midpoint of segment a-b lies strictly inside."""
    ts = _seg_split_params(a, b, ring, eps)
    for t0, t1 in zip(ts[:-1], ts[1:]):
        tm = 0.5 * (t0 + t1)
        mid = (a[0] + tm * (b[0] - a[0]), a[1] + tm * (b[1] - a[1]))
        if _point_in_ring(mid, ring, eps) == _IN:
            return True
    return False


def _contained(container: Geometry, inner: Geometry, eps: float) -> bool:
    """inner lies entirely within container's closed region."""
    if container.kind == "point":
        return inner.kind == "point" and math.dist(container.coords[0], inner.coords[0]) <= eps
    if container.kind == "polyline":
        return False
    ring = container.coords
    if inner.kind == "point":
        return _point_in_ring(inner.coords[0], ring, eps) != _OUT
    return all(_seg_in_region(a, b, ring, eps) for a, b in _segs(inner))


def _curve_interior_contact(p: Point, g: Geometry, eps: float) -> bool:
    """p touches g at an interior point of g (not at a curve endpoint)."""
    if g.kind == "point":
        return math.dist(p, g.coords[0]) <= eps
    if min(point_seg_dist(p, a, b) for a, b in _segs(g)) > eps:
        return False
    if g.kind == "polygon":
        return True  # ring has no endpoints
    ends = (g.coords[0], g.coords[-1])
    return all(math.dist(p, e) > eps for e in ends)


def _collinear_overlap(a1, a2, b1, b2, eps: float) -> bool:
    """Segments overlap along a common line over positive length."""
    if point_seg_dist(b1, a1, a2) > eps and point_seg_dist(b2, a1, a2) > eps:
        return False
    dx, dy = a2[0] - a1[0], a2[1] - a1[1]
    den = dx * dx + dy * dy
    if den == 0.0:
        return False
    if abs(_orient(a1, a2, b1)) > eps * math.sqrt(den) or \
            abs(_orient(a1, a2, b2)) > eps * math.sqrt(den):
        return False
    t1 = ((b1[0] - a1[0]) * dx + (b1[1] - a1[1]) * dy) / den
    t2 = ((b2[0] - a1[0]) * dx + (b2[1] - a1[1]) * dy) / den
    lo, hi = max(0.0, min(t1, t2)), min(1.0, max(t1, t2))
    return (hi - lo) * math.sqrt(den) > eps


def _line_line_interiors(g1: Geometry, g2: Geometry, eps: float) -> bool:
    s1, s2 = _segs(g1), _segs(g2)
    for a1, a2 in s1:
        for b1, b2 in s2:
            if _proper_cross(a1, a2, b1, b2):
                return True
            if _collinear_overlap(a1, a2, b1, b2, eps):
                return True
    # remaining contacts happen at vertices: count them only when the touch
    # point is interior to BOTH curves
    for p in g1.coords:
        if _curve_interior_contact(p, g2, eps) and _curve_interior_contact(p, g1, eps):
            return True
    for p in g2.coords:
        if _curve_interior_contact(p, g1, eps) and _curve_interior_contact(p, g2, eps):
            return True
    return False


def _interiors_intersect(g1: Geometry, g2: Geometry, eps: float) -> bool:
    k1, k2 = g1.kind, g2.kind
    if (k1, k2) in (("polyline", "point"), ("polygon", "point"), ("polygon", "polyline")):
        g1, g2 = g2, g1
        k1, k2 = k2, k1
    if k1 == "point" and k2 == "point":
        return math.dist(g1.coords[0], g2.coords[0]) <= eps
    if k1 == "point" and k2 == "polyline":
        return _curve_interior_contact(g1.coords[0], g2, eps)
    if k1 == "point" and k2 == "polygon":
        return _point_in_ring(g1.coords[0], g2.coords, eps) == _IN
    if k1 == "polyline" and k2 == "polyline":
        return _line_line_interiors(g1, g2, eps)
    if k1 == "polyline" and k2 == "polygon":
        return any(_seg_interior_probe(a, b, g2.coords, eps) for a, b in _segs(g1))
    # polygon x polygon
    if any(_point_in_ring(p, g2.coords, eps) == _IN for p in g1.coords[:-1]):
        return True
    if any(_point_in_ring(p, g1.coords, eps) == _IN for p in g2.coords[:-1]):
        return True
    if any(_seg_interior_probe(a, b, g2.coords, eps) for a, b in _segs(g1)):
        return True
    return any(_seg_interior_probe(a, b, g1.coords, eps) for a, b in _segs(g2))


def classify_relation(g1: Geometry, g2: Geometry, eps: float = TOUCH_EPS) -> int:
    """Symmetric 4-class relation with precedence contains > adjacent >
    intersects > disjoint. Coincident points classify as contains."""
    if min_distance(g1, g2) > eps:
        return DISJOINT
    if _contained(g1, g2, eps) or _contained(g2, g1, eps):
        return CONTAINS
    if _interiors_intersect(g1, g2, eps):
        return INTERSECTS
    return ADJACENT


def min_distance_multi(member: Geometry, parts: Sequence[Geometry]) -> float:
    return min(min_distance(member, p) for p in parts)


def classify_relation_multi(member: Geometry, parts: Sequence[Geometry],
                            eps: float = TOUCH_EPS) -> int:
    """Relation of a member to the union of anchor parts (noded segments of
    one parent way act as a single anchor)."""
    if len(parts) == 1:
        return classify_relation(member, parts[0], eps)
    if min_distance_multi(member, parts) > eps:
        return DISJOINT
    if any(_contained(p, member, eps) for p in parts):
        return CONTAINS
    if all(_contained(member, p, eps) for p in parts):
        return CONTAINS
    if any(_interiors_intersect(member, p, eps) for p in parts):
        return INTERSECTS
    # nodes shared by two parts are interior points of the union, so a point
    # member sitting on one touches the union's interior
    if member.kind == "point":
        p = member.coords[0]
        hits = 0
        for part in parts:
            for end in (part.coords[0], part.coords[-1]):
                if math.dist(p, end) <= eps:
                    hits += 1
        if hits >= 2:
            return INTERSECTS
    return ADJACENT


def bbox_gap(b1, b2) -> float:
    """Lower bound on the distance between geometries from their boxes."""
    dx = max(b1[0] - b2[2], b2[0] - b1[2], 0.0)
    dy = max(b1[1] - b2[3], b2[1] - b1[3], 0.0)
    return math.hypot(dx, dy)
