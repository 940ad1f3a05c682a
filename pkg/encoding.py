# encoding.py: per-edge features and the stitch graph
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Set, Tuple

import numpy as np
from pydantic import BaseModel, Field

from errors import PreprocessingError
from geometry import chord_length, end_tangents, interior_angle, panel_area, panel_is_ccw, reverse_curvature, vertex_array
from pattern_io import CurvatureKind, EdgeRef, Panel, PanelEdge, Pattern, StitchPair, Vertex2

logger = logging.getLogger(__name__)

FEATURE_DIM = 24
# Slot order is frozen: checkpoints record this tag and refuse to load under another.
LAYOUT_TAG = "edge24/v1:x0,y0,x1,y1,l,ox,oy,kt,k1..k10,sin_al,cos_al,sin_ar,cos_ar,n_norm,u"

GEOMETRY_SCALE = 0.01
SLOT_ANGLES = slice(18, 22)
SLOT_EDGE_COUNT = 22
SLOT_PANEL_ID = 23


class FeatureConfig(BaseModel):
    model_config = {"extra": "forbid"}

    drop_panel_id: bool = Field(False, description="Zero the panel-id slot")
    drop_topology: bool = Field(False, description="Zero the interior-angle and edge-count slots")


@dataclass(frozen=True)
class RawEdgeFeatures:
    start: Tuple[float, float]
    end: Tuple[float, float]
    length: float
    orientation: Tuple[float, float]
    curvature_type: int
    curvature_params: Tuple[float, ...]
    angle_left: float
    angle_right: float
    edge_count: int
    panel_index: int


@dataclass
class StitchGraph:
    """One node per contour edge, linked to its contour predecessor and successor."""

    node_count: int
    refs: List[EdgeRef]
    neighbors: np.ndarray  # (M, 2) int: [predecessor, successor]
    node_for: Dict[EdgeRef, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.node_for:
            self.node_for = {r: i for i, r in enumerate(self.refs)}


@dataclass
class PreparedPattern:
    """A canonicalised pattern plus the caller's address of every node."""

    pattern: Pattern
    source_refs: List[EdgeRef]  # node id -> EdgeRef in the input pattern


# ---------- Preprocessing ----------
def preprocess_panel(p: Panel) -> Tuple[Panel, List[int]]:
    """Move the bbox lower-left corner to the origin and make the loop anticlockwise.

    Returns the new panel and ``remap[old_edge] = new_edge``.
    """
    pts = vertex_array(p)
    lo = pts.min(axis=0)
    moved = p.model_copy(update={"vertices": [Vertex2(x=x - lo[0], y=y - lo[1]) for x, y in pts]})

    if panel_area(moved) <= 1e-12:
        raise PreprocessingError(f"Panel '{p.panel_id}' has zero area")
    if panel_is_ccw(moved):
        return moved, list(range(len(p.edges)))

    n = len(p.edges)
    edges = [
        PanelEdge(start=e.end, end=e.start, curvature=reverse_curvature(e.curvature))
        for e in reversed(moved.edges)
    ]
    return moved.model_copy(update={"edges": edges}), [n - 1 - k for k in range(n)]


def _rotate_to_min_vertex(p: Panel) -> Tuple[Panel, List[int]]:
    n = len(p.edges)
    keys = [(round(p.vertices[e.start].x, 9), round(p.vertices[e.start].y, 9)) for e in p.edges]
    first = min(range(n), key=lambda k: (keys[k], k))
    order = [(first + i) % n for i in range(n)]
    verts = [p.vertices[p.edges[k].start] for k in order]
    edges = [PanelEdge(start=i, end=(i + 1) % n, curvature=p.edges[k].curvature) for i, k in enumerate(order)]
    remap = [0] * n
    for new, old in enumerate(order):
        remap[old] = new
    return p.model_copy(update={"vertices": verts, "edges": edges}), remap


def prepare_pattern(p: Pattern) -> PreparedPattern:
    """Canonical form independent of panel order and edge-loop rotation."""
    staged = []
    for pi, panel in enumerate(p.panels):
        pre, r1 = preprocess_panel(panel)
        canon, r2 = _rotate_to_min_vertex(pre)
        staged.append((pi, canon, [r2[r1[k]] for k in range(len(panel.edges))]))

    staged.sort(key=lambda t: (-round(panel_area(t[1]), 6), t[1].panel_id))
    new_panel_of = {old: new for new, (old, _, _) in enumerate(staged)}

    source_refs: List[EdgeRef] = []
    for old, canon, remap in staged:
        inverse = {new: k for k, new in enumerate(remap)}
        source_refs.extend(EdgeRef(panel=old, edge=inverse[k]) for k in range(len(canon.edges)))

    def move(ref: EdgeRef) -> EdgeRef:
        old, _, remap = staged[new_panel_of[ref.panel]]
        return EdgeRef(panel=new_panel_of[ref.panel], edge=remap[ref.edge])

    stitches = sorted(StitchPair.of(move(s.a), move(s.b)) for s in p.stitches)
    canon_pattern = Pattern(name=p.name, panels=[c for _, c, _ in staged], stitches=stitches)
    return PreparedPattern(pattern=canon_pattern, source_refs=source_refs)


# ---------- Raw features ----------
def extract_raw(p: Pattern) -> List[RawEdgeFeatures]:
    out: List[RawEdgeFeatures] = []
    for pi, panel in enumerate(p.panels):
        n = len(panel.edges)
        tangents = []
        for k in range(n):
            a, b = panel.edge_points(k)
            tangents.append(end_tangents((a.x, a.y), (b.x, b.y), panel.edges[k].curvature))

        for k, e in enumerate(panel.edges):
            a, b = panel.edge_points(k)
            length = chord_length(panel, k)
            orient = ((b.x - a.x) / length, (b.y - a.y) / length) if length > 0 else (0.0, 0.0)
            alpha_l = interior_angle(tangents[(k - 1) % n][1], tangents[k][0])
            alpha_r = interior_angle(tangents[k][1], tangents[(k + 1) % n][0])
            out.append(RawEdgeFeatures(
                start=(a.x, a.y),
                end=(b.x, b.y),
                length=length,
                orientation=orient,
                curvature_type=int(e.curvature.kind),
                curvature_params=tuple(e.curvature.params),
                angle_left=alpha_l,
                angle_right=alpha_r,
                edge_count=n,
                panel_index=pi,
            ))
    return out


# ---------- Encoded features ----------
def encode(raw: List[RawEdgeFeatures], cfg: Optional[FeatureConfig] = None) -> np.ndarray:
    """(M, 24) feature matrix in LAYOUT_TAG order."""
    cfg = cfg or FeatureConfig()
    x = np.zeros((len(raw), FEATURE_DIM))
    if not raw:
        return x

    counts = np.array([r.edge_count for r in raw], dtype=float)
    lo, hi = counts.min(), counts.max()
    n_norm = (counts - lo) / (hi - lo) if hi > lo else np.zeros_like(counts)

    for i, r in enumerate(raw):
        params = list(r.curvature_params)
        if r.curvature_type == CurvatureKind.CIRCULAR_ARC:
            params[0] *= GEOMETRY_SCALE
        x[i, 0:4] = np.array([*r.start, *r.end]) * GEOMETRY_SCALE
        x[i, 4] = r.length * GEOMETRY_SCALE
        x[i, 5:7] = r.orientation
        x[i, 7] = r.curvature_type / 5.0
        x[i, 8:18] = params
        x[i, SLOT_ANGLES] = [math.sin(r.angle_left), math.cos(r.angle_left), math.sin(r.angle_right), math.cos(r.angle_right)]
        x[i, SLOT_EDGE_COUNT] = n_norm[i]
        x[i, SLOT_PANEL_ID] = r.panel_index * GEOMETRY_SCALE

    if cfg.drop_topology:
        x[:, SLOT_ANGLES] = 0.0
        x[:, SLOT_EDGE_COUNT] = 0.0
    if cfg.drop_panel_id:
        x[:, SLOT_PANEL_ID] = 0.0
    return x


# ---------- Graph ----------
def build_graph(p: Pattern) -> StitchGraph:
    refs = p.edge_refs()
    neighbors = np.zeros((len(refs), 2), dtype=int)
    offset = 0
    for panel in p.panels:
        n = len(panel.edges)
        for k in range(n):
            neighbors[offset + k] = (offset + (k - 1) % n, offset + (k + 1) % n)
        offset += n
    return StitchGraph(node_count=len(refs), refs=refs, neighbors=neighbors)


def stitch_nodes(graph: StitchGraph, p: Pattern) -> Tuple[Set[Tuple[int, int]], Set[int]]:
    """Ground-truth pairs as sorted node-id tuples, plus the never-stitched nodes."""
    pairs = {tuple(sorted((graph.node_for[s.a], graph.node_for[s.b]))) for s in p.stitches}
    touched = {i for pair in pairs for i in pair}
    return pairs, set(range(graph.node_count)) - touched


@dataclass
class EncodedPattern:
    prepared: PreparedPattern
    graph: StitchGraph
    features: np.ndarray
    gt_pairs: Set[Tuple[int, int]]
    gt_unmatched: Set[int]


def encode_pattern(p: Pattern, cfg: Optional[FeatureConfig] = None) -> EncodedPattern:
    prepared = prepare_pattern(p)
    graph = build_graph(prepared.pattern)
    feats = encode(extract_raw(prepared.pattern), cfg)
    pairs, unmatched = stitch_nodes(graph, prepared.pattern)
    logger.debug("Encoded '%s': M=%d, %d pairs", p.name, graph.node_count, len(pairs))
    return EncodedPattern(prepared, graph, feats, pairs, unmatched)
