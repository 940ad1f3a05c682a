import numpy as np

from pattern_io import CurvatureSpec, EdgeRef, Panel, PanelEdge, Pattern, StitchPair, Vertex2


def make_panel(panel_id, pts, curves=None):
    n = len(pts)
    curves = curves or {}
    return Panel(
        panel_id=panel_id,
        vertices=[Vertex2(x=float(x), y=float(y)) for x, y in pts],
        edges=[PanelEdge(start=k, end=(k + 1) % n, curvature=curves.get(k, CurvatureSpec.straight())) for k in range(n)],
    )


def stitch(pa, ea, pb, eb):
    return StitchPair.of(EdgeRef(panel=pa, edge=ea), EdgeRef(panel=pb, edge=eb))


def rotate_loop(panel, r):
    """Same panel with its edge list rotated by r; edge k moves to (k - r) mod n."""
    n = len(panel.edges)
    return panel.model_copy(update={"edges": [panel.edges[(k + r) % n] for k in range(n)]})


def permute_pattern(p, panel_order, rotations):
    """Reorder panels and rotate loops; returns the new pattern and old->new ref map."""
    panels, ref_map = [], {}
    for new_i, old_i in enumerate(panel_order):
        panel, r = p.panels[old_i], rotations[old_i]
        n = len(panel.edges)
        panels.append(rotate_loop(panel, r))
        for k in range(n):
            ref_map[(old_i, k)] = EdgeRef(panel=new_i, edge=(k - r) % n)
    stitches = sorted(StitchPair.of(ref_map[s.a.key()], ref_map[s.b.key()]) for s in p.stitches)
    return Pattern(name=p.name, panels=panels, stitches=stitches), ref_map


def small_pattern(seed):
    """Two jittered triangles (M=6), one quadratic edge, one or two random stitches."""
    rng = np.random.default_rng(seed)
    panels = []
    for i, x0 in enumerate((0.0, 8.0)):
        a, c = rng.uniform(2.0, 5.0, size=2)
        b = rng.uniform(0.5, a - 0.5)
        k = int(rng.integers(3))
        curve = {k: CurvatureSpec.quad(0.5, float(rng.uniform(-0.2, 0.2)))}
        panels.append(make_panel(f"tri_{i}", [(x0, 0.0), (x0 + a, 0.0), (x0 + b, c)], curve))
    edges_a = rng.permutation(3)
    edges_b = rng.permutation(3)
    n_stitches = int(rng.integers(1, 3))
    stitches = sorted(stitch(0, int(edges_a[s]), 1, int(edges_b[s])) for s in range(n_stitches))
    return Pattern(name=f"small_{seed}", panels=panels, stitches=stitches)
