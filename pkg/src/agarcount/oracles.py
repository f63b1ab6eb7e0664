"""Brute-force reference computations used to check the fast paths."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from agarcount.core.types import BBox, Detection, Label
from agarcount.errors import TooLarge

MAX_ORACLE_BOXES = 8


def _lattice_count(lo: float, hi: float, step: float) -> int:
    """Number of lattice cell centres ``(k + 0.5) * step`` inside ``[lo, hi)``."""
    centres = (np.arange(math.floor(lo / step) - 1, math.ceil(hi / step) + 1) + 0.5) * step
    return int(np.count_nonzero((centres >= lo) & (centres < hi)))


def oracle_iou(a: BBox, b: BBox, grid_step: float = 0.01) -> float:
    """IoU by counting sub-pixel cells on a fixed global lattice.

    A cell is inside a box iff its centre is, which factorises per axis, so
    the cell counts are products of per-axis counts.
    """
    if not grid_step > 0:
        raise ValueError("grid_step must be > 0")
    na = _lattice_count(a.x, a.x2, grid_step) * _lattice_count(a.y, a.y2, grid_step)
    nb = _lattice_count(b.x, b.x2, grid_step) * _lattice_count(b.y, b.y2, grid_step)
    ix = _lattice_count(max(a.x, b.x), min(a.x2, b.x2), grid_step) if min(a.x2, b.x2) > max(a.x, b.x) else 0
    iy = _lattice_count(max(a.y, b.y), min(a.y2, b.y2), grid_step) if min(a.y2, b.y2) > max(a.y, b.y) else 0
    both = ix * iy
    either = na + nb - both
    return both / either if either else 0.0


def oracle_best_matching(gt: Sequence[Label], dets: Sequence[Detection], iou_threshold: float) -> int:
    """Largest number of one-to-one same-class pairs with IoU >= threshold, by exhaustive search."""
    if len(gt) > MAX_ORACLE_BOXES or len(dets) > MAX_ORACLE_BOXES:
        raise TooLarge(f"oracle limited to {MAX_ORACLE_BOXES} boxes per side")
    feasible = [
        [j for j, g in enumerate(gt) if g.cls == d.cls and oracle_iou(d.box, g.box, 0.01) >= iou_threshold]
        for d in dets
    ]

    def best(i: int, used: frozenset) -> int:
        if i == len(dets):
            return 0
        top = best(i + 1, used)
        for j in feasible[i]:
            if j not in used:
                top = max(top, 1 + best(i + 1, used | {j}))
        return top

    return best(0, frozenset())
