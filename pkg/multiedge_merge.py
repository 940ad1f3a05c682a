# multiedge_merge.py: turn mirrored half-panels into whole panels with multi-edge stitches
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np
from pydantic import BaseModel, Field

from errors import MergeError, TransformError
from geometry import (
    chord_length,
    elevate_quadratic,
    end_tangents,
    interior_angle,
    panel_is_ccw,
    panel_is_simple,
    reflect_curvature,
    reverse_curvature,
    rigid_map,
    to_local,
    to_world,
    vertex_array,
)
from pattern_io import CurvatureKind, CurvatureSpec, EdgeRef, Panel, PanelEdge, Pattern, StitchPair, Vertex2, validate_pattern

logger = logging.getLogger(__name__)

# (slot, edge) -> new edge index, or None when the edge disappeared; slot 0 is panel a, slot 1 panel b.
EdgeRemap = Dict[Tuple[int, int], Optional[int]]

_BEZIER_KINDS = (CurvatureKind.QUAD_BEZIER, CurvatureKind.CUBIC_BEZIER)


class MirrorAxis(str, Enum):
    HORIZONTAL = "horizontal"
    VERTICAL = "vertical"


class MergeConfig(BaseModel):
    model_config = {"extra": "forbid"}

    sleeve_id_pattern: str = Field("sleeve", description="Substring marking sleeve halves")
    cuff_id_pattern: str = Field("cuff", description="Substring marking cuff halves")
    torso_id_patterns: Tuple[str, str] = Field(("ftorso", "btorso"), description="Front and back torso markers")
    torso_merged_name: str = Field("torso", description="Replaces the front torso marker in the merged id")
    front_suffix: str = Field("_f", description="Id suffix of the front sleeve/cuff half")
    back_suffix: str = Field("_b", description="Id suffix of the back sleeve/cuff half")
    tol: float = Field(1e-3, gt=0.0, description="Length and curvature-parameter tolerance [cm]")
    angle_tol: float = Field(1e-4, gt=0.0, description="Collinearity tolerance [rad]")


@dataclass(frozen=True)
class RunMatch:
    """Edges a[i..i+k-1] coincide with b[j, j-1, .., j-k+1] traversed the other way."""

    a_start: int
    b_start: int
    length: int
    pairs: Tuple[Tuple[int, int], ...] = field(default=())


# ---------- Mirroring ----------
def mirror_edge_order(p: Panel) -> List[int]:
    """New index of every edge of ``p`` once mirrored."""
    n = len(p.edges)
    # reflection flips orientation, so only an anticlockwise loop has to be reversed
    return [n - 1 - k for k in range(n)] if panel_is_ccw(p) else list(range(n))


def mirror_panel(p: Panel, axis: MirrorAxis) -> Panel:
    """Reflect about the bbox centre line; the result is anticlockwise, see ``mirror_edge_order``."""
    pts = vertex_array(p)
    centre = (pts.min(axis=0) + pts.max(axis=0)) / 2.0
    if axis == MirrorAxis.HORIZONTAL:
        verts = [Vertex2(x=x, y=2 * centre[1] - y) for x, y in pts]
    else:
        verts = [Vertex2(x=2 * centre[0] - x, y=y) for x, y in pts]
    edges = [e.model_copy(update={"curvature": reflect_curvature(e.curvature)}) for e in p.edges]
    if panel_is_ccw(p):
        edges = [PanelEdge(start=e.end, end=e.start, curvature=reverse_curvature(e.curvature)) for e in reversed(edges)]
    return p.model_copy(update={"vertices": verts, "edges": edges})


# ---------- Mergeability ----------
def _edges_coincide(a: Panel, ka: int, b: Panel, kb: int, tol: float) -> bool:
    ca, cb = a.edges[ka].curvature, reverse_curvature(b.edges[kb].curvature)
    if ca.kind != cb.kind:
        return False
    if abs(chord_length(a, ka) - chord_length(b, kb)) > tol:
        return False
    return all(abs(x - y) <= tol for x, y in zip(ca.params, cb.params))


def _tangents(p: Panel) -> List[Tuple[np.ndarray, np.ndarray]]:
    out = []
    for k, e in enumerate(p.edges):
        s, t = p.edge_points(k)
        out.append(end_tangents((s.x, s.y), (t.x, t.y), e.curvature))
    return out


def _angle_at_end(tangents, k: int) -> float:
    n = len(tangents)
    return interior_angle(tangents[k][1], tangents[(k + 1) % n][0])


def _grow_run(a: Panel, b: Panel, i: int, j: int, ta, tb, tol: float, angle_tol: float) -> int:
    na, nb = len(a.edges), len(b.edges)
    k = 1
    while k < min(na, nb):
        ka, kb = (i + k) % na, (j - k) % nb
        if not _edges_coincide(a, ka, b, kb, tol):
            break
        # the joint vertex becomes interior, so the two panels must close around it
        joint = _angle_at_end(ta, (ka - 1) % na) + _angle_at_end(tb, kb)
        if abs(joint - 2 * math.pi) > angle_tol:
            break
        k += 1
    return k


def _smooth_ends(ta, tb, i: int, j: int, k: int, angle_tol: float) -> int:
    """How many of the run's two end vertices the merged outline passes straight through."""
    na, nb = len(ta), len(tb)
    head = _angle_at_end(ta, (i - 1) % na) + _angle_at_end(tb, j)
    tail = _angle_at_end(ta, (i + k - 1) % na) + _angle_at_end(tb, (j - k) % nb)
    return sum(abs(x - math.pi) <= angle_tol for x in (head, tail))


def panels_mergeable(
    a: Panel,
    b: Panel,
    tol: float = 1e-3,
    angle_tol: float = 1e-4,
    hints: Iterable[Tuple[int, int]] = (),
) -> Optional[RunMatch]:
    """Longest run of edges a and b share, or None.

    Ties go to runs whose outline continues smoothly across both ends (a cut
    line), then to the longer run. ``hints`` are (a_edge, b_edge) pairs already
    known to be stitched; when given, only runs containing one of them count.
    """
    ta, tb = _tangents(a), _tangents(b)
    na, nb = len(a.edges), len(b.edges)
    hints = set(hints)
    best: Optional[RunMatch] = None
    best_key = None
    for i in range(na):
        for j in range(nb):
            if not _edges_coincide(a, i, b, j, tol):
                continue
            k = _grow_run(a, b, i, j, ta, tb, tol, angle_tol)
            pairs = tuple(((i + t) % na, (j - t) % nb) for t in range(k))
            if hints and not hints.intersection(pairs):
                continue
            total = sum(chord_length(a, ka) for ka, _ in pairs)
            key = (-k, -_smooth_ends(ta, tb, i, j, k, angle_tol), -total, i, j)
            if best_key is None or key < best_key:
                best, best_key = RunMatch(a_start=i, b_start=j, length=k, pairs=pairs), key
    return best


# ---------- Merging ----------
def _xy(v: Vertex2) -> np.ndarray:
    return np.array([v.x, v.y])


def merge_panels(a: Panel, b: Panel, match: RunMatch, merged_id: Optional[str] = None) -> Tuple[Panel, EdgeRemap]:
    """Glue b onto a along the matched run; the run's edges disappear."""
    na, nb, k = len(a.edges), len(b.edges), match.length
    if k >= na or k >= nb:
        raise MergeError(f"Merging '{a.panel_id}' and '{b.panel_id}' would consume a whole panel ({k} shared edges)")
    i, j = match.a_start, match.b_start

    a_run_start = _xy(a.vertices[a.edges[i].start])
    a_run_end = _xy(a.vertices[a.edges[(i + k - 1) % na].end])
    b_run_end = _xy(b.vertices[b.edges[j].end])
    b_run_start = _xy(b.vertices[b.edges[(j - k + 1) % nb].start])
    place = rigid_map(b_run_end, b_run_start, a_run_start, a_run_end)
    b_pts = place(vertex_array(b))

    starts: List[np.ndarray] = []
    curves: List[CurvatureSpec] = []
    remap: EdgeRemap = {}
    for t in range(na - k):
        ka = (i + k + t) % na
        remap[(0, ka)] = len(curves)
        starts.append(_xy(a.vertices[a.edges[ka].start]))
        curves.append(a.edges[ka].curvature)
    for t in range(nb - k):
        kb = (j + 1 + t) % nb
        remap[(1, kb)] = len(curves)
        starts.append(a_run_start if t == 0 else b_pts[b.edges[kb].start])
        curves.append(b.edges[kb].curvature)
    for ka, kb in match.pairs:
        remap[(0, ka)] = None
        remap[(1, kb)] = None

    merged = _panel_from_loop(merged_id or a.panel_id, starts, curves)
    if not panel_is_simple(merged):
        raise MergeError(f"Merging '{a.panel_id}' and '{b.panel_id}' does not give a simple closed outline")
    return merged, remap


def _panel_from_loop(panel_id: str, starts: Sequence[np.ndarray], curves: Sequence[CurvatureSpec]) -> Panel:
    n = len(starts)
    return Panel(
        panel_id=panel_id,
        vertices=[Vertex2(x=float(s[0]), y=float(s[1])) for s in starts],
        edges=[PanelEdge(start=q, end=(q + 1) % n, curvature=c) for q, c in enumerate(curves)],
    )


# ---------- Collapsing ----------
def _straight_joins(p: Panel, angle_tol: float) -> List[bool]:
    """joins[k]: edge k and edge k+1 are collinear straight edges."""
    n = len(p.edges)
    dirs = []
    for k in range(n):
        s, t = p.edge_points(k)
        dirs.append(np.array([t.x - s.x, t.y - s.y]))
    out = []
    for k in range(n):
        e0, e1 = p.edges[k], p.edges[(k + 1) % n]
        if e0.curvature.kind != CurvatureKind.STRAIGHT or e1.curvature.kind != CurvatureKind.STRAIGHT:
            out.append(False)
            continue
        d0, d1 = dirs[k], dirs[(k + 1) % n]
        turn = math.atan2(d0[0] * d1[1] - d0[1] * d1[0], float(d0 @ d1))
        out.append(abs(turn) < angle_tol)
    return out


def _world_cubic(p: Panel, k: int) -> np.ndarray:
    s, t = p.edge_points(k)
    c = p.edges[k].curvature
    ctrl = c.control_points()
    if c.kind == CurvatureKind.QUAD_BEZIER:
        ctrl = list(elevate_quadratic(ctrl[0]))
    local = np.array([(0.0, 0.0), *ctrl, (1.0, 0.0)])
    return to_world((s.x, s.y), (t.x, t.y), local)


def _spline_from(p: Panel, k0: int, k1: int) -> CurvatureSpec:
    first, second = _world_cubic(p, k0), _world_cubic(p, k1)
    local = to_local(first[0], second[-1], np.array([first[1], first[2], first[3], second[1], second[2]]))
    return CurvatureSpec.bspline(local.ravel())


def collapse_edges(p: Panel, remap: Optional[EdgeRemap] = None, angle_tol: float = 1e-4) -> Tuple[Panel, EdgeRemap]:
    """Fuse collinear straight runs, then consecutive Bézier pairs into B-splines."""
    n = len(p.edges)
    if remap is None:
        remap = {(0, k): k for k in range(n)}

    joins = _straight_joins(p, angle_tol)
    if all(joins):
        return p, dict(remap)
    first = min(k for k in range(n) if not joins[(k - 1) % n])
    groups: List[List[int]] = []
    for t in range(n):
        k = (first + t) % n
        if groups and joins[(k - 1) % n]:
            groups[-1].append(k)
        else:
            groups.append([k])

    def is_bezier(g: List[int]) -> bool:
        return len(g) == 1 and p.edges[g[0]].curvature.kind in _BEZIER_KINDS

    items: List[List[int]] = []
    q = 0
    while q < len(groups):
        if q + 1 < len(groups) and is_bezier(groups[q]) and is_bezier(groups[q + 1]):
            items.append(groups[q] + groups[q + 1])
            q += 2
        else:
            items.append(groups[q])
            q += 1
    if len(items) > 2 and is_bezier(items[-1]) and is_bezier(items[0]):
        items[-1] = items[-1] + items.pop(0)

    starts, curves = [], []
    index_of: Dict[int, int] = {}
    for new, item in enumerate(items):
        for k in item:
            index_of[k] = new
        starts.append(_xy(p.vertices[p.edges[item[0]].start]))
        kinds = {p.edges[k].curvature.kind for k in item}
        if len(item) == 1:
            curves.append(p.edges[item[0]].curvature)
        elif kinds == {CurvatureKind.STRAIGHT}:
            curves.append(CurvatureSpec.straight())
        else:
            curves.append(_spline_from(p, item[0], item[1]))

    out = _panel_from_loop(p.panel_id, starts, curves)
    composed = {key: (None if v is None else index_of[v]) for key, v in remap.items()}
    return out, composed


# ---------- Whole-pattern transform ----------
@dataclass(frozen=True)
class HalfPair:
    front: int
    back: int
    axis: Optional[MirrorAxis]
    merged_id: str


def find_half_pairs(p: Pattern, cfg: MergeConfig) -> List[HalfPair]:
    ids = {panel.panel_id: i for i, panel in enumerate(p.panels)}
    out: List[HalfPair] = []
    front_torso, back_torso = cfg.torso_id_patterns
    for i, panel in enumerate(p.panels):
        pid = panel.panel_id
        if cfg.cuff_id_pattern in pid and pid.endswith(cfg.front_suffix):
            base, axis = pid[: -len(cfg.front_suffix)], MirrorAxis.VERTICAL
            partner = base + cfg.back_suffix
        elif cfg.sleeve_id_pattern in pid and pid.endswith(cfg.front_suffix):
            base, axis = pid[: -len(cfg.front_suffix)], MirrorAxis.HORIZONTAL
            partner = base + cfg.back_suffix
        elif front_torso in pid:
            base, axis = pid.replace(front_torso, cfg.torso_merged_name), None
            partner = pid.replace(front_torso, back_torso)
        else:
            continue
        if partner in ids:
            out.append(HalfPair(front=i, back=ids[partner], axis=axis, merged_id=base))
        else:
            logger.debug("Panel '%s' has no partner '%s'; left as is", pid, partner)
    return out


def transform_pattern(p: Pattern, cfg: Optional[MergeConfig] = None) -> Pattern:
    """Merge every identified half-pair and re-address the stitches."""
    cfg = cfg or MergeConfig()
    halves = find_half_pairs(p, cfg)
    if not halves:
        return p

    merged_at: Dict[int, Panel] = {}
    dropped: Set[int] = set()
    # (old panel, old edge) -> (old front panel index, new edge index) or None
    route: Dict[Tuple[int, int], Optional[Tuple[int, int]]] = {}

    for h in halves:
        a, b = p.panels[h.front], p.panels[h.back]
        nb = len(b.edges)
        b_placed = mirror_panel(b, h.axis) if h.axis else b
        b_order = mirror_edge_order(b) if h.axis else list(range(nb))

        hints = []
        for s in p.stitches:
            for x, y in ((s.a, s.b), (s.b, s.a)):
                if x.panel == h.front and y.panel == h.back:
                    hints.append((x.edge, b_order[y.edge]))

        match = panels_mergeable(a, b_placed, cfg.tol, cfg.angle_tol, hints)
        if match is None and hints:
            match = panels_mergeable(a, b_placed, cfg.tol, cfg.angle_tol)
        if match is None:
            raise TransformError(f"Panels '{a.panel_id}' and '{b.panel_id}' are not mergeable")
        try:
            merged, remap = merge_panels(a, b_placed, match, h.merged_id)
        except MergeError as e:
            raise TransformError(f"Merging '{a.panel_id}' and '{b.panel_id}' failed: {e}") from e
        merged, remap = collapse_edges(merged, remap, cfg.angle_tol)
        logger.info("Merged '%s' + '%s' -> '%s' (%d edges)", a.panel_id, b.panel_id, merged.panel_id, len(merged.edges))

        merged_at[h.front] = merged
        dropped.add(h.back)
        for k in range(len(a.edges)):
            v = remap[(0, k)]
            route[(h.front, k)] = None if v is None else (h.front, v)
        for k in range(nb):
            v = remap[(1, b_order[k])]
            route[(h.back, k)] = None if v is None else (h.front, v)

    new_index: Dict[int, int] = {}
    panels: List[Panel] = []
    for i, panel in enumerate(p.panels):
        if i in dropped:
            continue
        new_index[i] = len(panels)
        panels.append(merged_at.get(i, panel))

    def move(ref: EdgeRef) -> Optional[EdgeRef]:
        target = route.get(ref.key(), ref.key())
        if target is None:
            return None
        return EdgeRef(panel=new_index[target[0]], edge=target[1])

    stitches: Set[StitchPair] = set()
    for s in p.stitches:
        na, nb_ = move(s.a), move(s.b)
        if na is None and nb_ is None:
            continue
        if na is None or nb_ is None:
            logger.warning("Dropping stitch %s in '%s': one side vanished in a merge", s, p.name)
            continue
        if na == nb_:
            logger.warning("Dropping stitch %s in '%s': both sides became one edge", s, p.name)
            continue
        stitches.add(StitchPair.of(na, nb_))

    out = Pattern(name=p.name, panels=panels, stitches=sorted(stitches))
    violations = validate_pattern(out)
    if violations:
        raise TransformError(f"Transformed pattern '{p.name}' is invalid: {violations[0]}")
    return out
