"""Brute-force rasterized relation oracle.

Independent cross-check for the geometric relation classifier: geometries
are densely sampled along their skeletons (curves, rings, points) and all
decisions are made from sampled point sets -- nearest-neighbor distances
between samples, and signed depths relative to polygon regions computed
with matplotlib's point-in-polygon test. Every decision requires a clear
numeric margin; configurations inside the gray zones return None
(degenerate) instead of a guess.

This module deliberately shares no code with the exact classifier.
"""

from __future__ import annotations

import math
from typing import List, Optional, Tuple

import numpy as np
from matplotlib.path import Path
from scipy.spatial import cKDTree

from .geoentities import Geometry, ValidationError

STEP = 0.01              # sample spacing along skeletons
CONTACT = 1.5 * STEP     # sampled distance below this means touching
APART = 5.0 * STEP       # sampled distance above this means separated
DEPTH_NO = 1.5 * STEP    # penetration below this means interiors never meet
DEPTH_YES = 4.0 * STEP   # penetration above this means interiors meet
END_NEAR = 5.0 * STEP    # contact this close to a curve endpoint is boundary contact
END_FAR = 10.0 * STEP    # contact this far from endpoints is interior contact

DISJOINT, INTERSECTS, ADJACENT, CONTAINS = 0, 1, 2, 3


def _skeleton(g: Geometry, step: float = STEP) -> np.ndarray:
    """Dense samples along the geometry's curve / ring / point."""
    if g.kind == "point":
        return np.array([g.coords[0]])
    pts: List[Tuple[float, float]] = []
    for (x0, y0), (x1, y1) in zip(g.coords[:-1], g.coords[1:]):
        length = math.hypot(x1 - x0, y1 - y0)
        n = max(1, int(math.ceil(length / step)))
        for i in range(n):
            t = i / n
            pts.append((x0 + t * (x1 - x0), y0 + t * (y1 - y0)))
    pts.append(g.coords[-1])
    return np.array(pts)


class _Sampled:
    def __init__(self, g: Geometry, step: float = STEP):
        self.geom = g
        self.kind = g.kind
        self.skeleton = _skeleton(g, step)
        self.tree = cKDTree(self.skeleton)
        self.path = Path(np.array(g.coords)) if g.kind == "polygon" else None
        if g.kind == "polyline":
            self.endpoints = np.array([g.coords[0], g.coords[-1]])
        else:
            self.endpoints = None

    def depths(self, pts: np.ndarray) -> np.ndarray:
        """Signed distance to the region: positive inside, negative outside
        (polygons only)."""
        inside = self.path.contains_points(pts)
        dist, _ = self.tree.query(pts)
        return np.where(inside, dist, -dist)


def _tri(value: float, low: float, high: float) -> Optional[bool]:
    """Three-way decision: False below low, True above high, None between."""
    if value <= low:
        return False
    if value >= high:
        return True
    return None


def _contained_in_polygon(inner: _Sampled, outer: _Sampled) -> Optional[bool]:
    depth_min = float(outer.depths(inner.skeleton).min())
    # closed region: samples hugging the boundary still count as inside
    if depth_min >= -DEPTH_NO:
        return True
    if depth_min <= -DEPTH_YES:
        return False
    return None


def _interiors_poly(other: _Sampled, poly: _Sampled) -> Optional[bool]:
    reach = float(poly.depths(other.skeleton).max())
    return _tri(reach, DEPTH_NO, DEPTH_YES)


def _end_dist(pts: np.ndarray, endpoints: Optional[np.ndarray]) -> np.ndarray:
    if endpoints is None:  # a point has no curve endpoints: all interior
        return np.full(len(pts), np.inf)
    return np.min(np.linalg.norm(pts[:, None, :] - endpoints[None, :, :], axis=2), axis=1)


def _interiors_lines_directed(a: _Sampled, b: _Sampled, step: float) -> Optional[bool]:
    """Classify the contact locus by its distance to either curve's
    endpoints: mid-curve contact on both sides means the interiors meet.
    Only samples near the minimum distance count, so shallow-angle grazes do
    not smear the contact zone along the curves."""
    d, idx = b.tree.query(a.skeleton)
    d_min = float(d.min())
    if d_min > CONTACT:
        return False
    touching = d <= d_min + 0.5 * step
    pa = a.skeleton[touching]
    pb = b.skeleton[idx[touching]]
    ea = _end_dist(pa, a.endpoints)
    eb = _end_dist(pb, b.endpoints)
    if np.any((ea >= END_FAR) & (eb >= END_FAR)):
        return True
    if np.all((ea <= END_NEAR) | (eb <= END_NEAR)):
        return False
    return None


def _interiors_lines(a: _Sampled, b: _Sampled, step: float) -> Optional[bool]:
    r_ab = _interiors_lines_directed(a, b, step)
    r_ba = _interiors_lines_directed(b, a, step)
    if r_ab is True or r_ba is True:
        return True
    if r_ab is False and r_ba is False:
        return False
    return None


def rasterized_relation(g1: Geometry, g2: Geometry, step: float = STEP) -> Optional[int]:
    """Relation code by dense sampling, or None when the configuration is
    too close to a decision boundary for the sampling to resolve."""
    s1, s2 = _Sampled(g1, step), _Sampled(g2, step)
    d_skel = float(s1.tree.query(s2.skeleton)[0].min())

    contained_1in2 = _contained_in_polygon(s1, s2) if s2.kind == "polygon" else \
        (d_skel <= CONTACT if (s1.kind == "point" and s2.kind == "point") else False)
    contained_2in1 = _contained_in_polygon(s2, s1) if s1.kind == "polygon" else \
        (d_skel <= CONTACT if (s1.kind == "point" and s2.kind == "point") else False)
    if contained_1in2 is None or contained_2in1 is None:
        return None

    touch = _tri(-d_skel, -APART, -CONTACT)  # True=touch, False=apart, None=gray
    if touch is None:
        return None
    if not touch:
        if contained_1in2 or contained_2in1:
            return CONTAINS
        return DISJOINT
    if contained_1in2 or contained_2in1:
        return CONTAINS

    if s1.kind == "polygon" or s2.kind == "polygon":
        poly, other = (s1, s2) if s1.kind == "polygon" else (s2, s1)
        if other.kind == "polygon":
            r1 = _interiors_poly(other, poly)
            r2 = _interiors_poly(poly, other)
            if r1 is None or r2 is None:
                return None
            meet = r1 or r2
        else:
            meet = _interiors_poly(other, poly)
    else:
        meet = _interiors_lines(s1, s2, step)
    if meet is None:
        return None
    return INTERSECTS if meet else ADJACENT


# ---------------------------------------------------------------------------
# random integer-grid shape pairs


def _random_point(rng) -> Geometry:
    return Geometry("point", ((float(rng.integers(0, 13)), float(rng.integers(0, 13))),))


def _random_polyline(rng) -> Geometry:
    n = int(rng.integers(2, 4))
    while True:
        pts = [(float(rng.integers(0, 13)), float(rng.integers(0, 13))) for _ in range(n)]
        if all(a != b for a, b in zip(pts[:-1], pts[1:])):
            return Geometry("polyline", tuple(pts))


def _random_polygon(rng) -> Geometry:
    x0 = float(rng.integers(0, 9))
    y0 = float(rng.integers(0, 9))
    w = float(rng.integers(2, 5))
    h = float(rng.integers(2, 5))
    shape = int(rng.integers(0, 3))
    if shape == 0:
        ring = ((x0, y0), (x0 + w, y0), (x0 + w, y0 + h), (x0, y0 + h), (x0, y0))
    elif shape == 1:
        ring = ((x0, y0), (x0 + w, y0), (x0, y0 + h), (x0, y0))
    else:
        ring = ((x0, y0), (x0 + w, y0), (x0 + w, y0 + h), (x0, y0))
    return Geometry("polygon", ring)


def random_shape_pair(rng) -> Tuple[Geometry, Geometry]:
    makers = (_random_point, _random_polyline, _random_polygon)
    while True:
        try:
            a = makers[int(rng.integers(0, 3))](rng)
            b = makers[int(rng.integers(0, 3))](rng)
            return a, b
        except ValidationError:
            continue
