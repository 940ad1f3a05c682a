# pattern_io.py: canonical sewing-pattern data model, codec and validation
from __future__ import annotations

import json
import logging
import math
from enum import IntEnum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_serializer, field_validator, model_serializer, model_validator

from errors import PatternSchemaError, PatternSyntaxError, PatternValidationError, UnsupportedConstructError

logger = logging.getLogger(__name__)

N_CURVATURE_PARAMS = 10


# ---------- Geometry primitives ----------
class Vertex2(BaseModel):
    """A 2D panel vertex in centimetres. Serialized as ``[x, y]``."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    x: float
    y: float

    @model_validator(mode="before")
    @classmethod
    def _from_pair(cls, data: Any) -> Any:
        if isinstance(data, (list, tuple)):
            if len(data) != 2:
                raise ValueError(f"vertex must be [x, y], got {len(data)} values")
            return {"x": data[0], "y": data[1]}
        return data

    @model_serializer
    def _as_pair(self) -> List[float]:
        return [self.x, self.y]


class CurvatureKind(IntEnum):
    STRAIGHT = 0
    CIRCULAR_ARC = 1
    QUAD_BEZIER = 2
    CUBIC_BEZIER = 3
    BSPLINE = 4

    @property
    def label(self) -> str:
        return self.name.lower()

    @property
    def used_slots(self) -> int:
        return _USED_SLOTS[self]


_USED_SLOTS = {
    CurvatureKind.STRAIGHT: 0,
    CurvatureKind.CIRCULAR_ARC: 3,
    CurvatureKind.QUAD_BEZIER: 2,
    CurvatureKind.CUBIC_BEZIER: 4,
    CurvatureKind.BSPLINE: 10,
}

_ZERO_PARAMS: Tuple[float, ...] = (0.0,) * N_CURVATURE_PARAMS


def _pad(values) -> Tuple[float, ...]:
    vals = [float(v) for v in values]
    return tuple(vals + [0.0] * (N_CURVATURE_PARAMS - len(vals)))


class CurvatureSpec(BaseModel):
    """Edge curvature as a kind code plus a 10-slot parameter array.

    Slot usage per kind:
      * straight: all zeros
      * circular_arc: (r [cm], d [+1 bulges right of start→end, -1 left], theta [rad])
      * quad_bezier: one control point (qx, qy)
      * cubic_bezier: two control points
      * bspline: (q1, q2, junction, q3, q4): two cubic segments joined at the junction

    Bézier/B-spline control points live in the edge-local frame: start=(0,0),
    end=(1,0), +y to the left of the start→end direction.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: CurvatureKind = CurvatureKind.STRAIGHT
    params: Tuple[float, ...] = Field(default=_ZERO_PARAMS, min_length=N_CURVATURE_PARAMS, max_length=N_CURVATURE_PARAMS)

    @field_validator("kind", mode="before")
    @classmethod
    def _kind_from_name(cls, v: Any) -> Any:
        if isinstance(v, str):
            try:
                return CurvatureKind[v.upper()]
            except KeyError:
                raise ValueError(f"unknown curvature kind '{v}'") from None
        return v

    @field_serializer("kind")
    def _kind_name(self, kind: CurvatureKind) -> str:
        return kind.label

    # --- constructors ---
    @classmethod
    def straight(cls) -> "CurvatureSpec":
        return cls()

    @classmethod
    def arc(cls, radius: float, direction: float, angle: float) -> "CurvatureSpec":
        return cls(kind=CurvatureKind.CIRCULAR_ARC, params=_pad([radius, direction, angle]))

    @classmethod
    def quad(cls, qx: float, qy: float) -> "CurvatureSpec":
        return cls(kind=CurvatureKind.QUAD_BEZIER, params=_pad([qx, qy]))

    @classmethod
    def cubic(cls, q1x: float, q1y: float, q2x: float, q2y: float) -> "CurvatureSpec":
        return cls(kind=CurvatureKind.CUBIC_BEZIER, params=_pad([q1x, q1y, q2x, q2y]))

    @classmethod
    def bspline(cls, values) -> "CurvatureSpec":
        return cls(kind=CurvatureKind.BSPLINE, params=_pad(values))

    def control_points(self) -> List[Tuple[float, float]]:
        """Local-frame control points stored in the meaningful slots (not for arcs)."""
        used = self.kind.used_slots
        return [(self.params[i], self.params[i + 1]) for i in range(0, used, 2)]


class PanelEdge(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    start: int = Field(..., description="Index of the start vertex in the owning panel")
    end: int = Field(..., description="Index of the end vertex in the owning panel")
    curvature: CurvatureSpec = Field(default_factory=CurvatureSpec)


class Panel(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid", populate_by_name=True)

    panel_id: str = Field(..., alias="id", description="Stable id, unique within the pattern")
    vertices: List[Vertex2] = Field(default_factory=list)
    edges: List[PanelEdge] = Field(default_factory=list)

    def edge_points(self, k: int) -> Tuple[Vertex2, Vertex2]:
        e = self.edges[k]
        return self.vertices[e.start], self.vertices[e.end]


# ---------- Stitch addressing ----------
class EdgeRef(BaseModel):
    """Address of one contour edge: (panel index, edge index within panel)."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    panel: int
    edge: int

    def key(self) -> Tuple[int, int]:
        return (self.panel, self.edge)

    def __lt__(self, other: "EdgeRef") -> bool:
        return self.key() < other.key()

    def __str__(self) -> str:
        return f"{self.panel}:{self.edge}"


def _ref_key(value: Any) -> Tuple[int, int]:
    if isinstance(value, EdgeRef):
        return value.key()
    if isinstance(value, dict):
        return (int(value["panel"]), int(value["edge"]))
    if isinstance(value, (list, tuple)) and len(value) == 2:
        return (int(value[0]), int(value[1]))
    raise ValueError(f"not an edge reference: {value!r}")


class StitchPair(BaseModel):
    """Undirected stitch between two edges, stored smaller EdgeRef first.

    Serialized as ``[{"panel": p, "edge": e}, {"panel": p, "edge": e}]``.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    a: EdgeRef
    b: EdgeRef

    @model_validator(mode="before")
    @classmethod
    def _canonical(cls, data: Any) -> Any:
        if isinstance(data, (list, tuple)):
            if len(data) != 2:
                raise ValueError(f"stitch must reference exactly two edges, got {len(data)}")
            data = {"a": data[0], "b": data[1]}
        if isinstance(data, dict) and "a" in data and "b" in data:
            ka, kb = _ref_key(data["a"]), _ref_key(data["b"])
            if kb < ka:
                ka, kb = kb, ka
            return {"a": {"panel": ka[0], "edge": ka[1]}, "b": {"panel": kb[0], "edge": kb[1]}}
        return data

    @model_serializer
    def _as_list(self) -> List[Dict[str, int]]:
        return [{"panel": self.a.panel, "edge": self.a.edge}, {"panel": self.b.panel, "edge": self.b.edge}]

    @classmethod
    def of(cls, a: EdgeRef, b: EdgeRef) -> "StitchPair":
        return cls.model_validate({"a": a, "b": b})

    def __lt__(self, other: "StitchPair") -> bool:
        return (self.a.key(), self.b.key()) < (other.a.key(), other.b.key())

    def __str__(self) -> str:
        return f"({self.a}, {self.b})"


class Pattern(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str
    panels: List[Panel] = Field(default_factory=list)
    stitches: List[StitchPair] = Field(default_factory=list)

    @property
    def edge_count(self) -> int:
        """M, the number of contour edges (= stitch-graph nodes)."""
        return sum(len(p.edges) for p in self.panels)

    def edge_refs(self) -> List[EdgeRef]:
        return [EdgeRef(panel=i, edge=k) for i, p in enumerate(self.panels) for k in range(len(p.edges))]

    def panel_index(self, panel_id: str) -> int:
        for i, p in enumerate(self.panels):
            if p.panel_id == panel_id:
                return i
        raise KeyError(panel_id)


# ---------- Validation ----------
class Violation(BaseModel):
    model_config = {"extra": "forbid"}

    rule: str
    panel: Optional[int] = None
    edge: Optional[int] = None
    message: str

    def __str__(self) -> str:
        where = []
        if self.panel is not None:
            where.append(f"panel {self.panel}")
        if self.edge is not None:
            where.append(f"edge {self.edge}")
        loc = f" [{', '.join(where)}]" if where else ""
        return f"{self.rule}{loc}: {self.message}"


def _finite(*values: float) -> bool:
    return all(math.isfinite(v) for v in values)


def _validate_panel(pi: int, panel: Panel) -> List[Violation]:
    out: List[Violation] = []
    n_v, n_e = len(panel.vertices), len(panel.edges)

    for vi, v in enumerate(panel.vertices):
        if not _finite(v.x, v.y):
            out.append(Violation(rule="non-finite", panel=pi, message=f"vertex {vi} is not finite"))

    if n_e < 2:
        out.append(Violation(rule="too-few-edges", panel=pi, message=f"panel '{panel.panel_id}' has {n_e} edge(s)"))

    indices_ok = True
    for k, e in enumerate(panel.edges):
        if not (0 <= e.start < n_v and 0 <= e.end < n_v):
            out.append(Violation(rule="vertex-index", panel=pi, edge=k, message=f"vertex index out of range (have {n_v})"))
            indices_ok = False
        if e.start == e.end:
            out.append(Violation(rule="degenerate-edge", panel=pi, edge=k, message="start and end vertex coincide"))

        c = e.curvature
        if not _finite(*c.params):
            out.append(Violation(rule="non-finite", panel=pi, edge=k, message="curvature parameter is not finite"))
        if any(p != 0.0 for p in c.params[c.kind.used_slots:]):
            out.append(Violation(rule="curvature-slots", panel=pi, edge=k, message=f"unused slots of {c.kind.label} must be 0"))
        if c.kind == CurvatureKind.CIRCULAR_ARC:
            r, d, theta = c.params[:3]
            if not (r > 0 and d in (-1.0, 1.0) and 0 < theta < 2 * math.pi):
                out.append(Violation(rule="curvature-params", panel=pi, edge=k, message=f"invalid arc (r={r}, d={d}, theta={theta})"))

    if indices_ok and n_e >= 2:
        for k in range(n_e):
            nxt = panel.edges[(k + 1) % n_e]
            if panel.edges[k].end != nxt.start:
                out.append(Violation(rule="open-loop", panel=pi, edge=k, message="edge end does not meet the next edge start"))
                break
        else:
            starts = [e.start for e in panel.edges]
            if len(set(starts)) != n_e or n_v != n_e:
                out.append(Violation(rule="open-loop", panel=pi, message="loop must visit every listed vertex exactly once"))
    return out


def validate_pattern(p: Pattern) -> List[Violation]:
    """All invariant violations of ``p``; empty iff the pattern is valid."""
    out: List[Violation] = []
    seen_ids: Dict[str, int] = {}
    for pi, panel in enumerate(p.panels):
        if panel.panel_id in seen_ids:
            out.append(Violation(rule="duplicate-panel-id", panel=pi, message=f"id '{panel.panel_id}' already used by panel {seen_ids[panel.panel_id]}"))
        seen_ids.setdefault(panel.panel_id, pi)
        out.extend(_validate_panel(pi, panel))

    seen_pairs = set()
    for s in p.stitches:
        for ref in (s.a, s.b):
            if not (0 <= ref.panel < len(p.panels) and 0 <= ref.edge < len(p.panels[ref.panel].edges)):
                out.append(Violation(rule="dangling-ref", panel=ref.panel, edge=ref.edge, message=f"stitch {s} references a missing edge"))
        if s.a == s.b:
            out.append(Violation(rule="self-stitch", panel=s.a.panel, edge=s.a.edge, message="edge stitched to itself"))
        if s in seen_pairs:
            out.append(Violation(rule="duplicate-stitch", panel=s.a.panel, edge=s.a.edge, message=f"stitch {s} listed twice"))
        seen_pairs.add(s)
    return out


def ensure_valid(p: Pattern) -> Pattern:
    violations = validate_pattern(p)
    if violations:
        raise PatternValidationError(violations)
    return p


# ---------- Canonical codec ----------
def _load_json(data: bytes) -> Any:
    try:
        return json.loads(data.decode("utf-8"))
    except UnicodeDecodeError as e:
        raise PatternSyntaxError(f"Pattern is not UTF-8 text: {e}") from e
    except json.JSONDecodeError as e:
        raise PatternSyntaxError(f"Malformed pattern text at line {e.lineno} col {e.colno}: {e.msg}") from e


def parse_pattern(data: bytes) -> Pattern:
    """Parse a canonical pattern document and validate it."""
    doc = _load_json(data)
    if not isinstance(doc, dict):
        raise PatternSchemaError("Pattern document must be an object with name/panels/stitches")
    try:
        p = Pattern.model_validate(doc)
    except ValidationError as e:
        raise PatternSchemaError(f"Pattern schema error: {e}") from e
    return ensure_valid(p)


def serialize_pattern(p: Pattern) -> bytes:
    doc = p.model_dump(mode="json", by_alias=True)
    return (json.dumps(doc, indent=2, allow_nan=False) + "\n").encode("utf-8")


def load_pattern(path: Path | str) -> Pattern:
    return parse_pattern(Path(path).read_bytes())


def save_pattern(path: Path | str, p: Pattern) -> None:
    Path(path).write_bytes(serialize_pattern(p))


# ---------- External (GarmentCodeData) ingestion ----------
def _external_curvature(raw: Any, chord: float, scale: float) -> CurvatureSpec:
    if raw is None:
        return CurvatureSpec.straight()
    if isinstance(raw, list):
        # legacy list form: a single quadratic control point
        if len(raw) != 2:
            raise UnsupportedConstructError("curvature list", f"expected [x, y], got {raw!r}")
        return CurvatureSpec.quad(raw[0], raw[1])
    if not isinstance(raw, dict) or "type" not in raw:
        raise PatternSchemaError(f"Curvature must be a list or an object with 'type', got {raw!r}")

    ctype, params = raw["type"], raw.get("params", [])
    if ctype == "quadratic":
        (q,) = params
        return CurvatureSpec.quad(q[0], q[1])
    if ctype == "cubic":
        q1, q2 = params
        return CurvatureSpec.cubic(q1[0], q1[1], q2[0], q2[1])
    if ctype == "circle":
        radius, large_arc, right = params
        r = float(radius) * scale
        ratio = min(1.0, chord / (2.0 * r)) if r > 0 else 1.0
        theta = 2.0 * math.asin(ratio)
        if large_arc:
            theta = 2.0 * math.pi - theta
        return CurvatureSpec.arc(r, 1.0 if right else -1.0, theta)
    raise UnsupportedConstructError(f"curvature type '{ctype}'")


def ingest_external(data: bytes) -> Pattern:
    """Read a GarmentCodeData pattern file into a canonical Pattern."""
    doc = _load_json(data)
    if not isinstance(doc, dict):
        raise PatternSchemaError("External pattern must be a JSON object")
    body = doc.get("pattern", doc)
    if not isinstance(body, dict) or not isinstance(body.get("panels"), dict):
        raise PatternSchemaError("External pattern has no 'panels' mapping")

    units = (doc.get("properties") or {}).get("units_in_meter", 100)
    scale = 100.0 / float(units)

    names = list(body.get("panel_order") or body["panels"].keys())
    missing = [n for n in names if n not in body["panels"]]
    if missing:
        raise PatternSchemaError(f"panel_order names unknown panels: {missing}")
    index_of = {n: i for i, n in enumerate(names)}

    panels: List[Panel] = []
    try:
        for name in names:
            raw = body["panels"][name]
            verts = [Vertex2(x=float(v[0]) * scale, y=float(v[1]) * scale) for v in raw["vertices"]]
            edges = []
            for e in raw["edges"]:
                i, j = e["endpoints"]
                a, b = verts[i], verts[j]
                chord = math.hypot(b.x - a.x, b.y - a.y)
                edges.append(PanelEdge(start=i, end=j, curvature=_external_curvature(e.get("curvature"), chord, scale)))
            panels.append(Panel(panel_id=name, vertices=verts, edges=edges))

        stitches = []
        for st in body.get("stitches", []):
            sides = [s for s in st if isinstance(s, dict)]
            if len(sides) != 2:
                raise UnsupportedConstructError("multi-side stitch", f"{len(sides)} sides in {st!r}")
            refs = [EdgeRef(panel=index_of[s["panel"]], edge=int(s["edge"])) for s in sides]
            stitches.append(StitchPair.of(refs[0], refs[1]))
    except (KeyError, IndexError, TypeError, ValueError) as e:
        if isinstance(e, ValidationError):
            raise PatternSchemaError(f"External pattern schema mismatch: {e}") from e
        raise PatternSchemaError(f"External pattern schema mismatch: {e!r}") from e

    name = doc.get("name") or body.get("name") or "external"
    p = Pattern(name=str(name), panels=panels, stitches=stitches)
    logger.info("Ingested external pattern '%s': %d panels, %d stitches", p.name, len(panels), len(stitches))
    return ensure_valid(p)
