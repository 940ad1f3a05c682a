# synth.py: small parametric garments with exact ground-truth stitches
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np

from multiedge_merge import MergeConfig, transform_pattern
from pattern_io import CurvatureSpec, EdgeRef, Panel, PanelEdge, Pattern, StitchPair, Vertex2, ensure_valid

logger = logging.getLogger(__name__)

MAX_JITTER = 0.3


class Family(str, Enum):
    TUBE = "tube"
    FOUR_PANEL_SKIRT = "skirt"
    BODICE_WITH_SLEEVE = "bodice"


_FAMILY_CODE = {Family.TUBE: 0, Family.FOUR_PANEL_SKIRT: 1, Family.BODICE_WITH_SLEEVE: 2}


# ---------- helpers ----------
def _loop(panel_id: str, pts: Sequence[Tuple[float, float]], curves: Mapping[int, CurvatureSpec] | None = None) -> Panel:
    n = len(pts)
    curves = curves or {}
    return Panel(
        panel_id=panel_id,
        vertices=[Vertex2(x=float(x), y=float(y)) for x, y in pts],
        edges=[PanelEdge(start=k, end=(k + 1) % n, curvature=curves.get(k, CurvatureSpec.straight())) for k in range(n)],
    )


def _stitch(pa: int, ea: int, pb: int, eb: int) -> StitchPair:
    return StitchPair.of(EdgeRef(panel=pa, edge=ea), EdgeRef(panel=pb, edge=eb))


class _Jitter:
    def __init__(self, rng: np.random.Generator, amount: float):
        self.rng, self.amount = rng, amount

    def __call__(self, value: float) -> float:
        return value * (1.0 + self.rng.uniform(-self.amount, self.amount))


# ---------- families ----------
def _tube(j: _Jitter, name: str) -> Pattern:
    h = j(60.0)
    w_f, w_b = j(50.0), j(50.0)
    front = _loop("tube_front", [(0, 0), (w_f, 0), (w_f, h), (0, h)])
    back = _loop("tube_back", [(0, 0), (w_b, 0), (w_b, h), (0, h)])
    return Pattern(name=name, panels=[front, back], stitches=sorted([_stitch(0, 1, 1, 3), _stitch(0, 3, 1, 1)]))


def _skirt(j: _Jitter, name: str) -> Pattern:
    h, d = j(60.0), j(8.0)
    panels = []
    for k in range(4):
        wb = j(40.0)
        panels.append(_loop(f"skirt_{k}", [(0, 0), (wb, 0), (wb - d, h), (d, h)]))
    stitches = sorted(_stitch(k, 1, (k + 1) % 4, 3) for k in range(4))
    return Pattern(name=name, panels=panels, stitches=stitches)


def _torso(panel_id: str, width: float, height: float, slope_w: float, slope_h: float, bulge: float) -> Panel:
    # hem, side, armhole (quadratic), shoulder, centre
    pts = [(0, 0), (width, 0), (width, height), (width - slope_w, height + slope_h), (0, height + slope_h)]
    return _loop(panel_id, pts, {2: CurvatureSpec.quad(0.5, bulge)})


def _sleeve_half(panel_id: str, length: float, cap_height: float, drop: float, bulge: float) -> Panel:
    # seam, cuff, underarm, cap (cubic, tangent to the seam normal at the seam end)
    pts = [(0, 0), (length, 0), (length, cap_height - drop), (0, cap_height)]
    return _loop(panel_id, pts, {3: CurvatureSpec.cubic(1.0 / 3.0, -bulge, 2.0 / 3.0, 0.0)})


def generate_split_bodice(seed: int, jitter: float = 0.0, name: str | None = None) -> Pattern:
    """Torso front/back plus two sleeve halves, each half stitched to its own armhole."""
    _check_jitter(jitter)
    j = _Jitter(np.random.default_rng([seed, _FAMILY_CODE[Family.BODICE_WITH_SLEEVE]]), jitter)

    width, height, slope_w, slope_h = j(45.0), j(40.0), j(12.0), j(20.0)
    shoulder = width - slope_w
    back_slope_w = j(12.0)
    sleeve_len, drop = j(55.0), j(4.0)

    torso_f = _torso("torso_front", width, height, slope_w, slope_h, j(0.15))
    torso_b = _torso("torso_back", shoulder + back_slope_w, height, back_slope_w, slope_h, j(0.15))
    cap_f = math.hypot(slope_w, slope_h)
    cap_b = math.hypot(back_slope_w, slope_h)
    sleeve_f = _sleeve_half("sleeve_f", sleeve_len, cap_f, drop, j(0.12))
    sleeve_b = _sleeve_half("sleeve_b", sleeve_len, cap_b, drop, j(0.12))

    stitches = [
        _stitch(0, 1, 1, 1),  # side seams
        _stitch(0, 3, 1, 3),  # shoulders
        _stitch(2, 3, 0, 2),  # front cap to front armhole
        _stitch(3, 3, 1, 2),  # back cap to back armhole
        _stitch(2, 0, 3, 0),  # sleeve centre seam
        _stitch(2, 2, 3, 2),  # underarm
    ]
    return Pattern(name=name or f"split_bodice_{seed}", panels=[torso_f, torso_b, sleeve_f, sleeve_b], stitches=sorted(stitches))


def _check_jitter(jitter: float) -> None:
    if not 0.0 <= jitter <= MAX_JITTER:
        raise ValueError(f"jitter must lie in [0, {MAX_JITTER}], got {jitter}")


def generate(seed: int, family: Family, jitter: float = 0.0, name: str | None = None) -> Pattern:
    _check_jitter(jitter)
    family = Family(family)
    name = name or f"{family.value}_{seed}"
    if family == Family.BODICE_WITH_SLEEVE:
        p = transform_pattern(generate_split_bodice(seed, jitter, name), MergeConfig())
    else:
        j = _Jitter(np.random.default_rng([seed, _FAMILY_CODE[family]]), jitter)
        p = _tube(j, name) if family == Family.TUBE else _skirt(j, name)
    return ensure_valid(p)


# ---------- corpus ----------
def split_indices(n: int, seed: int) -> Tuple[List[int], List[int], List[int]]:
    """Seeded 80/10/10 split; val/test sizes round half up, train takes the rest."""
    order = np.random.default_rng(seed).permutation(n).tolist()
    n_val = n_test = int(math.floor(n * 0.1 + 0.5))
    n_train = n - n_val - n_test
    return order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:]


@dataclass
class Corpus:
    patterns: List[Pattern]
    train: List[int]
    val: List[int]
    test: List[int]

    def subset(self, idx: Sequence[int]) -> List[Pattern]:
        return [self.patterns[i] for i in idx]

    def manifest(self) -> Dict[str, List[str]]:
        return {
            "train": [self.patterns[i].name for i in self.train],
            "val": [self.patterns[i].name for i in self.val],
            "test": [self.patterns[i].name for i in self.test],
        }


def generate_corpus(seed: int, counts: Mapping[Family, int], jitter: float = 0.0) -> Corpus:
    total = sum(counts.values())
    if total < 10:
        raise ValueError(f"corpus needs at least 10 patterns, got {total}")
    rng = np.random.default_rng(seed)
    patterns: List[Pattern] = []
    for family in Family:
        for _ in range(counts.get(family, 0)):
            sub_seed = int(rng.integers(2**31))
            patterns.append(generate(sub_seed, family, jitter, name=f"{family.value}_{len(patterns):05d}"))
    train, val, test = split_indices(len(patterns), seed)
    logger.info("Generated %d patterns (train %d / val %d / test %d)", len(patterns), len(train), len(val), len(test))
    return Corpus(patterns, train, val, test)
