"""Box geometry: IoU on continuous area and scale/offset transforms."""

from __future__ import annotations

import math
from typing import Optional, Tuple

import numpy as np

from agarcount.core.types import BBox
from agarcount.errors import NonPositiveScale

_BELOW_ONE = math.nextafter(1.0, 0.0)


def intersection(a: BBox, b: BBox) -> Optional[BBox]:
    """Overlap of two boxes, or None when it has zero area."""
    x1 = max(a.x, b.x)
    y1 = max(a.y, b.y)
    x2 = min(a.x2, b.x2)
    y2 = min(a.y2, b.y2)
    if x2 <= x1 or y2 <= y1:
        return None
    return BBox(x1, y1, x2 - x1, y2 - y1)


def iou(a: BBox, b: BBox) -> float:
    if a == b:
        return 1.0
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    # distinct boxes must stay strictly below 1 despite rounding
    return min(inter / union, _BELOW_ONE)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of two ``(n, 4)`` / ``(m, 4)`` arrays of ``x, y, w, h`` rows."""
    a = np.asarray(a, dtype=float).reshape(-1, 4)
    b = np.asarray(b, dtype=float).reshape(-1, 4)
    ax2 = a[:, 0] + a[:, 2]
    ay2 = a[:, 1] + a[:, 3]
    bx2 = b[:, 0] + b[:, 2]
    by2 = b[:, 1] + b[:, 3]
    iw = np.minimum(ax2[:, None], bx2[None, :]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(ay2[:, None], by2[None, :]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    union = (a[:, 2] * a[:, 3])[:, None] + (b[:, 2] * b[:, 3])[None, :] - inter
    out = np.where(inter > 0, inter / np.where(union > 0, union, 1.0), 0.0)
    same = (a[:, None, :] == b[None, :, :]).all(axis=2)
    out = np.minimum(out, _BELOW_ONE)
    out[same] = 1.0
    return out


def transform_box(b: BBox, scale: float, offset: Tuple[float, float] = (0.0, 0.0)) -> BBox:
    if not scale > 0:
        raise NonPositiveScale(f"scale must be > 0, got {scale}")
    ox, oy = offset
    return BBox(scale * b.x + ox, scale * b.y + oy, scale * b.w, scale * b.h)


def boxes_to_array(boxes) -> np.ndarray:
    return np.array([b.as_xywh() for b in boxes], dtype=float).reshape(-1, 4)
