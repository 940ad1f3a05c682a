from collections import Counter

import numpy as np
import pytest

from errors import MergeError
from geometry import chord_length, edge_points, panel_area, panel_is_ccw, reverse_curvature, vertex_array
from helpers import make_panel, stitch
from multiedge_merge import (
    MergeConfig,
    MirrorAxis,
    RunMatch,
    collapse_edges,
    find_half_pairs,
    merge_panels,
    mirror_edge_order,
    mirror_panel,
    panels_mergeable,
    transform_pattern,
)
from pattern_io import CurvatureKind, CurvatureSpec, EdgeRef, PanelEdge, Pattern, StitchPair, validate_pattern
from synth import generate_split_bodice


def _sampled(panel, k, n=16):
    s, e = panel.edge_points(k)
    return edge_points((s.x, s.y), (e.x, e.y), panel.edges[k].curvature, n)


def _square(panel_id="sq", x0=0.0, side=1.0):
    return make_panel(panel_id, [(x0, 0), (x0 + side, 0), (x0 + side, side), (x0, side)])


# ---------- mirroring ----------
def test_mirror_square_keeps_outline_and_orientation():
    sq = _square()
    m, order = mirror_panel(sq, MirrorAxis.VERTICAL), mirror_edge_order(sq)
    assert panel_is_ccw(m)
    assert order == [3, 2, 1, 0]
    assert panel_area(m) == pytest.approx(1.0)
    assert sorted(map(tuple, vertex_array(m))) == sorted(map(tuple, vertex_array(sq)))


@pytest.mark.parametrize("axis", list(MirrorAxis))
def test_mirrored_curved_edges_follow_the_reflection(axis):
    tri = make_panel("tri", [(0, 0), (4, 0), (2, 3)], {0: CurvatureSpec.quad(0.5, -0.3), 1: CurvatureSpec.cubic(0.3, 0.2, 0.6, -0.1)})
    m, order = mirror_panel(tri, axis), mirror_edge_order(tri)
    flip = np.array([-1.0, 1.0]) if axis == MirrorAxis.VERTICAL else np.array([1.0, -1.0])
    centre = (np.array([0.0, 0.0]) + np.array([4.0, 3.0])) / 2.0
    n = len(tri.edges)
    assert order == [n - 1 - k for k in range(n)]
    for k in range(n):
        expected = centre + (_sampled(tri, k) - centre) * flip
        np.testing.assert_allclose(_sampled(m, order[k])[::-1], expected, atol=1e-9)
    assert panel_is_ccw(m)


@pytest.mark.parametrize("axis", list(MirrorAxis))
def test_mirroring_a_clockwise_panel_comes_out_anticlockwise(axis):
    cw = make_panel("cw", [(0, 0), (0, 1), (1, 1), (1, 0)])
    assert not panel_is_ccw(cw)
    m, order = mirror_panel(cw, axis), mirror_edge_order(cw)
    assert panel_is_ccw(m)
    assert order == [0, 1, 2, 3]
    assert panel_area(m) == pytest.approx(1.0)


def test_clockwise_curved_panel_keeps_its_edges_in_place():
    cw = make_panel("cw", [(0, 0), (2, 3), (4, 0)], {1: CurvatureSpec.quad(0.5, 0.3)})
    m, order = mirror_panel(cw, MirrorAxis.VERTICAL), mirror_edge_order(cw)
    assert panel_is_ccw(m)
    flip, centre = np.array([-1.0, 1.0]), np.array([2.0, 1.5])
    for k in range(3):
        expected = centre + (_sampled(cw, k) - centre) * flip
        np.testing.assert_allclose(_sampled(m, order[k]), expected, atol=1e-9)


# ---------- mergeability ----------
def test_squares_share_one_edge_and_hints_pick_it():
    a, b = _square("a"), _square("b", x0=5.0)
    match = panels_mergeable(a, b, hints=[(1, 3)])
    assert (match.a_start, match.b_start, match.length) == (1, 3, 1)
    assert match.pairs == ((1, 3),)


def test_rectangle_matches_square_only_on_unit_edges():
    rect = make_panel("rect", [(0, 0), (1.5, 0), (1.5, 1), (0, 1)])
    match = panels_mergeable(_square(), rect)
    assert match is not None
    assert match.b_start in (1, 3)


def test_different_sizes_do_not_merge():
    assert panels_mergeable(_square(), _square("big", side=1.5)) is None


# ---------- merging and collapsing ----------
def test_two_squares_merge_into_a_rectangle():
    a, b = _square("a"), _square("b", x0=5.0)
    merged, remap = merge_panels(a, b, panels_mergeable(a, b, hints=[(1, 3)]), "ab")
    assert merged.panel_id == "ab"
    np.testing.assert_allclose(vertex_array(merged), [[1, 1], [0, 1], [0, 0], [1, 0], [2, 0], [2, 1]], atol=1e-12)
    assert remap[(0, 1)] is None and remap[(1, 3)] is None
    assert remap[(0, 2)] == 0 and remap[(1, 0)] == 3

    collapsed, remap = collapse_edges(merged, remap)
    assert len(collapsed.edges) == 4
    np.testing.assert_allclose(vertex_array(collapsed), [[0, 1], [0, 0], [2, 0], [2, 1]], atol=1e-12)
    assert panel_area(collapsed) == pytest.approx(2.0)
    assert remap == {(0, 0): 1, (0, 1): None, (0, 2): 3, (0, 3): 0, (1, 0): 1, (1, 1): 2, (1, 2): 3, (1, 3): None}


def test_merge_refuses_to_consume_a_panel():
    a, b = _square("a"), _square("b")
    with pytest.raises(MergeError):
        merge_panels(a, b, RunMatch(a_start=0, b_start=0, length=4))


def test_two_quadratics_collapse_into_one_spline():
    p = make_panel("p", [(0, 0), (2, 0), (4, 0), (2, 3)], {0: CurvatureSpec.quad(0.5, -0.2), 1: CurvatureSpec.quad(0.4, -0.3)})
    out, remap = collapse_edges(p)
    assert len(out.edges) == 3
    spline = out.edges[0].curvature
    assert spline.kind == CurvatureKind.BSPLINE
    assert remap[(0, 0)] == remap[(0, 1)] == 0
    pts = _sampled(out, 0, n=16)
    np.testing.assert_allclose(pts[0], [0, 0], atol=1e-9)
    np.testing.assert_allclose(pts[-1], [4, 0], atol=1e-9)
    # the spline traces both original curves exactly
    expected = np.vstack([_sampled(p, 0, n=8), _sampled(p, 1, n=8)[1:]])
    np.testing.assert_allclose(pts, expected, atol=1e-9)


def test_collapse_leaves_a_plain_panel_alone(unit_square):
    out, remap = collapse_edges(unit_square)
    assert out == unit_square
    assert remap == {(0, k): k for k in range(4)}


# ---------- whole-pattern transform ----------
def test_split_bodice_becomes_a_multi_edge_pattern():
    split = generate_split_bodice(0, 0.1)
    out = transform_pattern(split)
    assert [p.panel_id for p in out.panels] == ["torso_front", "torso_back", "sleeve"]
    assert out.edge_count == 14
    assert len(out.stitches) == 5
    assert validate_pattern(out) == []

    uses = Counter(ref for s in out.stitches for ref in (s.a, s.b))
    (cap, count), = [(ref, n) for ref, n in uses.items() if n > 1]
    assert count == 2
    sleeve = out.panels[cap.panel]
    assert sleeve.edges[cap.edge].curvature.kind == CurvatureKind.BSPLINE
    expected = chord_length(split.panels[2], 3) + chord_length(split.panels[3], 3)
    assert chord_length(sleeve, cap.edge) == pytest.approx(expected, abs=1e-9)


def test_clockwise_back_sleeve_merges_like_an_anticlockwise_one():
    split = generate_split_bodice(0, 0.1)
    back = split.panels[3]
    n = len(back.edges)
    flipped = back.model_copy(update={"edges": [
        PanelEdge(start=e.end, end=e.start, curvature=reverse_curvature(e.curvature)) for e in reversed(back.edges)
    ]})
    assert not panel_is_ccw(flipped)

    def moved(ref):
        return EdgeRef(panel=3, edge=n - 1 - ref.edge) if ref.panel == 3 else ref

    stitches = sorted(StitchPair.of(moved(s.a), moved(s.b)) for s in split.stitches)
    cw_split = split.model_copy(update={"panels": split.panels[:3] + [flipped], "stitches": stitches})

    expected, out = transform_pattern(split), transform_pattern(cw_split)
    assert [p.panel_id for p in out.panels] == ["torso_front", "torso_back", "sleeve"]
    assert out.edge_count == expected.edge_count == 14
    assert len(out.stitches) == 5
    assert validate_pattern(out) == []
    assert all(panel_is_ccw(p) for p in out.panels)
    assert panel_area(out.panels[2]) == pytest.approx(panel_area(expected.panels[2]), rel=1e-9)


def test_pattern_without_halves_is_unchanged(two_squares):
    assert find_half_pairs(two_squares, MergeConfig()) == []
    assert transform_pattern(two_squares) is two_squares


def test_torso_halves_merge_without_mirroring():
    front = make_panel("ftorso", [(0, 0), (20, 0), (18, 30), (0, 30)])
    back = make_panel("btorso", [(0, 0), (20, 0), (20, 30), (2, 30)])
    p = Pattern(name="torso", panels=[front, back], stitches=[stitch(0, 3, 1, 1), stitch(0, 1, 1, 3)])
    (half,) = find_half_pairs(p, MergeConfig())
    assert half.axis is None and half.merged_id == "torso"

    out = transform_pattern(p)
    (torso,) = out.panels
    assert torso.panel_id == "torso"
    assert len(torso.edges) == 4
    assert panel_area(torso) == pytest.approx(1140.0)
    (s,) = out.stitches
    assert s.a.panel == s.b.panel == 0 and s.a.edge != s.b.edge
    assert chord_length(torso, s.a.edge) == pytest.approx(chord_length(front, 1))
