# geometry.py: edge curve evaluation and panel outline helpers
from __future__ import annotations

import math
from typing import List, Sequence, Tuple

import numpy as np
from scipy.special import comb
from shapely.geometry import LinearRing, Polygon

from errors import PreprocessingError
from pattern_io import CurvatureKind, CurvatureSpec, Panel

Point = Tuple[float, float]

# Tangent vectors shorter than this are treated as degenerate.
_TINY = 1e-12


# ---------- Edge-local frame ----------
# A point (u, v) in the frame of edge s→e sits at s + u·(e−s) + v·perp(e−s),
# perp rotating 90° anticlockwise, so v > 0 is left of the travel direction.
def _perp(d: np.ndarray) -> np.ndarray:
    return np.array([-d[1], d[0]])


def to_world(s: Sequence[float], e: Sequence[float], uv: np.ndarray) -> np.ndarray:
    s, e = np.asarray(s, float), np.asarray(e, float)
    d = e - s
    uv = np.atleast_2d(np.asarray(uv, float))
    return s + uv[:, :1] * d + uv[:, 1:2] * _perp(d)


def to_local(s: Sequence[float], e: Sequence[float], pts: np.ndarray) -> np.ndarray:
    s, e = np.asarray(s, float), np.asarray(e, float)
    d = e - s
    dd = float(d @ d)
    if dd < _TINY:
        raise PreprocessingError(f"Edge-local frame undefined for a zero-length chord at {s.tolist()}")
    rel = np.atleast_2d(np.asarray(pts, float)) - s
    return np.stack([rel @ d / dd, rel @ _perp(d) / dd], axis=1)


# ---------- Bézier / B-spline ----------
def bernstein(n: int, t: np.ndarray) -> np.ndarray:
    """Bernstein basis of degree n at parameters t, shape (len(t), n+1)."""
    t = np.atleast_1d(np.asarray(t, float))[:, None]
    i = np.arange(n + 1)[None, :]
    return comb(n, i) * t**i * (1.0 - t) ** (n - i)


def bezier_points(ctrl: np.ndarray, t: np.ndarray) -> np.ndarray:
    ctrl = np.asarray(ctrl, float)
    return bernstein(len(ctrl) - 1, t) @ ctrl


def elevate_quadratic(q: Point) -> Tuple[Point, Point]:
    """Cubic control points equivalent to the local quadratic (0,0)-q-(1,0)."""
    qx, qy = q
    return (2.0 * qx / 3.0, 2.0 * qy / 3.0), ((2.0 * qx + 1.0) / 3.0, 2.0 * qy / 3.0)


def local_segments(c: CurvatureSpec) -> List[np.ndarray]:
    """Local-frame Bézier control polygons making up a curved edge."""
    p0, p1 = (0.0, 0.0), (1.0, 0.0)
    pts = c.control_points()
    if c.kind == CurvatureKind.STRAIGHT:
        return [np.array([p0, p1])]
    if c.kind == CurvatureKind.QUAD_BEZIER:
        return [np.array([p0, pts[0], p1])]
    if c.kind == CurvatureKind.CUBIC_BEZIER:
        return [np.array([p0, pts[0], pts[1], p1])]
    if c.kind == CurvatureKind.BSPLINE:
        q1, q2, j, q3, q4 = pts
        return [np.array([p0, q1, q2, j]), np.array([j, q3, q4, p1])]
    raise ValueError(f"{c.kind.label} has no Bézier segments")


# ---------- Circular arcs ----------
def _arc_frame(s: np.ndarray, e: np.ndarray, c: CurvatureSpec) -> Tuple[np.ndarray, float, float, float]:
    """Centre, effective radius, start angle and signed sweep of an arc edge.

    The radius is recomputed from the chord so the arc always meets both
    endpoints exactly.
    """
    _, d, theta = c.params[:3]
    chord = e - s
    length = float(np.hypot(*chord))
    r = length / (2.0 * math.sin(theta / 2.0))
    n_left = _perp(chord) / length
    centre = (s + e) / 2.0 + n_left * d * r * math.cos(theta / 2.0)
    phi0 = math.atan2(s[1] - centre[1], s[0] - centre[0])
    return centre, r, phi0, d * theta


def arc_points(s: Sequence[float], e: Sequence[float], c: CurvatureSpec, t: np.ndarray) -> np.ndarray:
    s, e = np.asarray(s, float), np.asarray(e, float)
    centre, r, phi0, sweep = _arc_frame(s, e, c)
    phi = phi0 + sweep * np.atleast_1d(np.asarray(t, float))
    return centre + r * np.stack([np.cos(phi), np.sin(phi)], axis=1)


def _rotate(v: np.ndarray, angle: float) -> np.ndarray:
    ca, sa = math.cos(angle), math.sin(angle)
    return np.array([ca * v[0] - sa * v[1], sa * v[0] + ca * v[1]])


# ---------- Whole edges ----------
def edge_points(s: Sequence[float], e: Sequence[float], c: CurvatureSpec, n: int = 16) -> np.ndarray:
    """n+1 world points along the edge from s to e, endpoints included."""
    t = np.linspace(0.0, 1.0, n + 1)
    if c.kind == CurvatureKind.CIRCULAR_ARC:
        return arc_points(s, e, c, t)
    segs = local_segments(c)
    if len(segs) == 1:
        local = bezier_points(segs[0], t)
    else:
        first, second = t[t <= 0.5], t[t > 0.5]
        local = np.vstack([bezier_points(segs[0], 2 * first), bezier_points(segs[1], 2 * second - 1)])
    return to_world(s, e, local)


def _first_nonzero(vectors: List[np.ndarray], fallback: np.ndarray) -> np.ndarray:
    for v in vectors:
        if np.hypot(*v) > _TINY:
            return v
    return fallback


def end_tangents(s: Sequence[float], e: Sequence[float], c: CurvatureSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Unit tangents at the start and at the end, both in travel direction."""
    s, e = np.asarray(s, float), np.asarray(e, float)
    chord = e - s
    if c.kind == CurvatureKind.CIRCULAR_ARC:
        _, d, theta = c.params[:3]
        t0, t1 = _rotate(chord, -d * theta / 2.0), _rotate(chord, d * theta / 2.0)
    elif c.kind == CurvatureKind.STRAIGHT:
        t0 = t1 = chord
    else:
        segs = local_segments(c)
        world = [to_world(s, e, seg) for seg in segs]
        head, tail = world[0], world[-1]
        t0 = _first_nonzero([head[i] - head[0] for i in range(1, len(head))], chord)
        t1 = _first_nonzero([tail[-1] - tail[-1 - i] for i in range(1, len(tail))], chord)
    return t0 / np.hypot(*t0), t1 / np.hypot(*t1)


def interior_angle(t_in: np.ndarray, t_out: np.ndarray) -> float:
    """Interior angle at a vertex of an anticlockwise loop, in [0, 2π]."""
    cross = t_in[0] * t_out[1] - t_in[1] * t_out[0]
    turn = math.atan2(cross, float(t_in @ t_out))
    return math.pi - turn


# ---------- Curvature transforms ----------
def reverse_curvature(c: CurvatureSpec) -> CurvatureSpec:
    """Same curve traversed end→start."""
    if c.kind == CurvatureKind.STRAIGHT:
        return c
    if c.kind == CurvatureKind.CIRCULAR_ARC:
        r, d, theta = c.params[:3]
        return CurvatureSpec.arc(r, -d, theta)
    pts = [(1.0 - u, -v) for u, v in reversed(c.control_points())]
    return CurvatureSpec(kind=c.kind, params=_flat(pts))


def reflect_curvature(c: CurvatureSpec) -> CurvatureSpec:
    """Curve mirrored in the plane, traversal direction kept."""
    if c.kind == CurvatureKind.STRAIGHT:
        return c
    if c.kind == CurvatureKind.CIRCULAR_ARC:
        r, d, theta = c.params[:3]
        return CurvatureSpec.arc(r, -d, theta)
    return CurvatureSpec(kind=c.kind, params=_flat([(u, -v) for u, v in c.control_points()]))


def _flat(pts: Sequence[Point]) -> Tuple[float, ...]:
    vals = [float(x) for p in pts for x in p]
    return tuple(vals + [0.0] * (10 - len(vals)))


# ---------- Panels ----------
def vertex_array(p: Panel) -> np.ndarray:
    return np.array([[v.x, v.y] for v in p.vertices], dtype=float)


def chord_length(p: Panel, k: int) -> float:
    a, b = p.edge_points(k)
    return math.hypot(b.x - a.x, b.y - a.y)


def panel_outline(p: Panel, per_edge: int = 16) -> np.ndarray:
    """Closed polyline through all edge curves (first point not repeated)."""
    chunks = []
    for k, e in enumerate(p.edges):
        a, b = p.edge_points(k)
        n = 1 if e.curvature.kind == CurvatureKind.STRAIGHT else per_edge
        chunks.append(edge_points((a.x, a.y), (b.x, b.y), e.curvature, n)[:-1])
    return np.vstack(chunks)


def panel_area(p: Panel) -> float:
    return Polygon(panel_outline(p)).area


def panel_is_ccw(p: Panel) -> bool:
    return LinearRing(panel_outline(p)).is_ccw


def panel_is_simple(p: Panel) -> bool:
    outline = panel_outline(p)
    return len(outline) >= 3 and LinearRing(outline).is_simple and Polygon(outline).area > 0


def rigid_map(src_a: np.ndarray, src_b: np.ndarray, dst_a: np.ndarray, dst_b: np.ndarray):
    """Rotation + translation taking segment src_a→src_b onto dst_a→dst_b."""
    vs, vd = src_b - src_a, dst_b - dst_a
    angle = math.atan2(vd[1], vd[0]) - math.atan2(vs[1], vs[0])
    ca, sa = math.cos(angle), math.sin(angle)
    rot = np.array([[ca, -sa], [sa, ca]])

    def apply(pts: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(pts) - src_a) @ rot.T + dst_a

    return apply
