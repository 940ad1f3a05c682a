import pytest

from helpers import make_panel, stitch
from pattern_io import CurvatureSpec, Pattern


@pytest.fixture
def unit_square():
    return make_panel("square", [(0, 0), (1, 0), (1, 1), (0, 1)])


@pytest.fixture
def two_squares():
    a = make_panel("a", [(0, 0), (1, 0), (1, 1), (0, 1)])
    b = make_panel("b", [(3, 0), (4, 0), (4, 1), (3, 1)])
    return Pattern(name="two_squares", panels=[a, b], stitches=[stitch(0, 1, 1, 3)])


@pytest.fixture
def triangles():
    """Two triangles (M=6) with one stitched pair; small enough for gradient checks."""
    a = make_panel("tri_a", [(0, 0), (3, 0), (0, 4)])
    b = make_panel("tri_b", [(0, 0), (5, 0), (2, 2)], {1: CurvatureSpec.quad(0.5, 0.2)})
    return Pattern(name="triangles", panels=[a, b], stitches=[stitch(0, 0, 1, 2)])
