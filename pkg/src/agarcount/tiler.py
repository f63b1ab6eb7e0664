"""Patch planning: random box-covering training patches and a test grid.

No pixels are touched here. Plans list window origins in (zero-padded)
image coordinates; cutting pixels is left to the inference side, which
reports detections per window index.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from agarcount.core.geometry import intersection, transform_box
from agarcount.core.types import BBox, Label
from agarcount.errors import InvalidGeometry, NoEmptyRegion, NonPositiveScale, OversizedBox

DEFAULT_SIDE = 512
DEFAULT_EMPTY_FRACTION = 0.05


class TileMode(str, Enum):
    Train = "train"
    Test = "test"


class ClipPolicy(str, Enum):
    FullContainmentOnly = "full"
    ClipPartial = "clip"


@dataclass(frozen=True)
class ImageExtent:
    width: int
    height: int

    def __post_init__(self):
        if int(self.width) != self.width or int(self.height) != self.height:
            raise InvalidGeometry("image extent must be integral")
        if self.width <= 0 or self.height <= 0:
            raise InvalidGeometry(f"image extent must be positive, got {self.width}x{self.height}")

    def as_box(self) -> BBox:
        return BBox(0.0, 0.0, float(self.width), float(self.height))


@dataclass(frozen=True)
class PatchWindow:
    x0: int
    y0: int
    side: int = DEFAULT_SIDE
    pad_right: int = 0
    pad_bottom: int = 0

    @property
    def origin(self) -> Tuple[int, int]:
        return (self.x0, self.y0)

    def as_box(self) -> BBox:
        return BBox(float(self.x0), float(self.y0), float(self.side), float(self.side))


def make_window(x0: int, y0: int, side: int, extent: ImageExtent) -> PatchWindow:
    return PatchWindow(
        int(x0),
        int(y0),
        int(side),
        pad_right=max(0, int(x0) + side - extent.width),
        pad_bottom=max(0, int(y0) + side - extent.height),
    )


@dataclass(frozen=True)
class TilingPlan:
    image: ImageExtent
    windows: Tuple[PatchWindow, ...]
    mode: TileMode
    seed: Optional[int] = None
    empty_fraction: Optional[float] = None
    overlap: Optional[int] = None
    image_id: Optional[int] = None
    n_covering: Optional[int] = None  # train mode: windows emitted before the empty ones

    def to_manifest(self) -> dict:
        side = self.windows[0].side if self.windows else None
        return {
            "image_id": self.image_id,
            "extent": {"width": self.image.width, "height": self.image.height},
            "mode": self.mode.value,
            "seed": self.seed,
            "empty_fraction": self.empty_fraction,
            "overlap": self.overlap,
            "side": side,
            "n_covering": self.n_covering,
            "windows": [[w.x0, w.y0, w.side] for w in self.windows],
        }

    @classmethod
    def from_manifest(cls, obj: dict) -> "TilingPlan":
        extent = ImageExtent(int(obj["extent"]["width"]), int(obj["extent"]["height"]))
        windows = tuple(make_window(x0, y0, side, extent) for x0, y0, side in obj["windows"])
        return cls(
            image=extent,
            windows=windows,
            mode=TileMode(obj["mode"]),
            seed=obj.get("seed"),
            empty_fraction=obj.get("empty_fraction"),
            overlap=obj.get("overlap"),
            image_id=obj.get("image_id"),
            n_covering=obj.get("n_covering"),
        )


def plan_to_json(plan: TilingPlan) -> str:
    return json.dumps(plan.to_manifest(), sort_keys=True) + "\n"


def plan_from_json(text: str) -> TilingPlan:
    return TilingPlan.from_manifest(json.loads(text))


# --- training patches -------------------------------------------------------


def _origin_range(lo_edge: float, size: float, side: int, max_origin: int) -> Tuple[int, int]:
    """Integer origins whose window ``[o, o + side]`` contains ``[lo_edge, lo_edge + size]``."""
    lo = max(0, math.ceil(lo_edge + size - side))
    hi = min(math.floor(lo_edge), max_origin)
    return lo, hi


def _forbidden_range(lo_edge: float, size: float, side: int) -> Tuple[int, int]:
    """Integer origins whose window overlaps ``(lo_edge, lo_edge + size)`` with positive length."""
    return math.floor(lo_edge - side) + 1, math.ceil(lo_edge + size) - 1


def _empty_origin_sampler(boxes: Sequence[BBox], side: int, max_x: int, max_y: int):
    """Cells of a compressed origin grid that hold no forbidden origin.

    Returns ``(cells, weights)`` where each cell is ``(x_lo, x_hi, y_lo, y_hi)``
    of inclusive integer origin ranges and the weight is its origin count.
    """
    xs = {0, max_x + 1}
    ys = {0, max_y + 1}
    rects = []
    for b in boxes:
        fx = _forbidden_range(b.x, b.w, side)
        fy = _forbidden_range(b.y, b.h, side)
        fx = (max(fx[0], 0), min(fx[1], max_x))
        fy = (max(fy[0], 0), min(fy[1], max_y))
        if fx[0] > fx[1] or fy[0] > fy[1]:
            continue
        rects.append((fx, fy))
        xs.update((fx[0], fx[1] + 1))
        ys.update((fy[0], fy[1] + 1))
    xs = sorted(xs)
    ys = sorted(ys)
    blocked = np.zeros((len(ys) - 1, len(xs) - 1), dtype=bool)
    for (x_lo, x_hi), (y_lo, y_hi) in rects:
        i0, i1 = ys.index(y_lo), ys.index(y_hi + 1)
        j0, j1 = xs.index(x_lo), xs.index(x_hi + 1)
        blocked[i0:i1, j0:j1] = True
    cells, weights = [], []
    for i, j in zip(*np.nonzero(~blocked)):
        cells.append((xs[j], xs[j + 1] - 1, ys[i], ys[i + 1] - 1))
        weights.append((xs[j + 1] - xs[j]) * (ys[i + 1] - ys[i]))
    return cells, np.array(weights, dtype=float)


def plan_train_patches(
    extent: ImageExtent,
    boxes: Sequence[BBox],
    seed: int,
    empty_fraction: float = DEFAULT_EMPTY_FRACTION,
    side: int = DEFAULT_SIDE,
    strict: bool = True,
    image_id: Optional[int] = None,
) -> TilingPlan:
    """Randomly placed patches that together contain every box whole.

    While some box is unmarked, one is drawn uniformly, a window origin is
    drawn uniformly among those whose window contains it, and every box the
    window contains is marked. Then ``round(empty_fraction * n)`` windows
    with no box area are added, drawn uniformly over the free origins.

    Boxes larger than ``side`` raise :class:`OversizedBox` in strict mode;
    otherwise they get a window centred on them and are marked as covered.
    """
    if not 0.0 <= empty_fraction <= 1.0:
        raise InvalidGeometry(f"empty_fraction must be in [0, 1], got {empty_fraction}")
    image_box = extent.as_box()
    for b in boxes:
        if not image_box.contains(b):
            raise InvalidGeometry(f"box {b.as_xywh()} lies outside the {extent.width}x{extent.height} image")
    rng = np.random.default_rng(seed)
    max_x = max(0, extent.width - side)
    max_y = max(0, extent.height - side)

    ranges = []
    for b in boxes:
        rx = _origin_range(b.x, b.w, side, max_x)
        ry = _origin_range(b.y, b.h, side, max_y)
        if rx[0] > rx[1] or ry[0] > ry[1]:
            if strict:
                raise OversizedBox(f"box {b.as_xywh()} does not fit in a {side}px patch")
            cx, cy = b.center
            x0 = min(max(round(cx - side / 2), 0), max_x)
            y0 = min(max(round(cy - side / 2), 0), max_y)
            rx, ry = (x0, x0), (y0, y0)
        ranges.append((rx, ry))

    arr = np.array([b.as_xywh() for b in boxes], dtype=float).reshape(-1, 4)
    marked = np.zeros(len(boxes), dtype=bool)
    windows: List[PatchWindow] = []
    while not marked.all():
        unmarked = np.flatnonzero(~marked)
        k = int(unmarked[rng.integers(len(unmarked))])
        (x_lo, x_hi), (y_lo, y_hi) = ranges[k]
        x0 = int(rng.integers(x_lo, x_hi + 1))
        y0 = int(rng.integers(y_lo, y_hi + 1))
        windows.append(make_window(x0, y0, side, extent))
        inside = (
            (arr[:, 0] >= x0)
            & (arr[:, 1] >= y0)
            & (arr[:, 0] + arr[:, 2] <= x0 + side)
            & (arr[:, 1] + arr[:, 3] <= y0 + side)
        )
        marked |= inside
        marked[k] = True

    n_covering = len(windows)
    n_empty = math.floor(empty_fraction * n_covering + 0.5)
    if n_empty:
        cells, weights = _empty_origin_sampler(boxes, side, max_x, max_y)
        if not cells:
            warnings.warn(
                f"no box-free {side}px window exists; {n_empty} empty patches skipped",
                NoEmptyRegion,
                stacklevel=2,
            )
        else:
            picks = rng.choice(len(cells), size=n_empty, p=weights / weights.sum())
            for c in picks:
                x_lo, x_hi, y_lo, y_hi = cells[int(c)]
                x0 = int(rng.integers(x_lo, x_hi + 1))
                y0 = int(rng.integers(y_lo, y_hi + 1))
                windows.append(make_window(x0, y0, side, extent))

    return TilingPlan(
        image=extent,
        windows=tuple(windows),
        mode=TileMode.Train,
        seed=seed,
        empty_fraction=empty_fraction,
        image_id=image_id,
        n_covering=n_covering,
    )


# --- test grid --------------------------------------------------------------


def grid_count(length: int, side: int, stride: int) -> int:
    if length <= side:
        return 1
    return 1 + math.ceil((length - side) / stride)


def plan_test_windows(
    extent: ImageExtent,
    side: int = DEFAULT_SIDE,
    overlap: Optional[int] = None,
    image_id: Optional[int] = None,
) -> TilingPlan:
    """Sliding-window grid with ``overlap`` px between neighbours (default ``side // 8``).

    Origins sit at multiples of ``side - overlap``; trailing windows run into
    zero padding instead of shifting back to the image edge.
    Windows are ordered row by row.
    """
    if overlap is None:
        overlap = side // 8
    if side <= 0 or overlap < 0 or overlap >= side:
        raise InvalidGeometry(f"need side > overlap >= 0, got side={side}, overlap={overlap}")
    stride = side - overlap
    n_cols = grid_count(extent.width, side, stride)
    n_rows = grid_count(extent.height, side, stride)
    windows = tuple(
        make_window(i * stride, j * stride, side, extent) for j in range(n_rows) for i in range(n_cols)
    )
    return TilingPlan(image=extent, windows=windows, mode=TileMode.Test, overlap=overlap, image_id=image_id)


# --- coordinate mapping -----------------------------------------------------


def clip_labels_to_window(
    labels: Sequence[Label],
    window: PatchWindow,
    policy: ClipPolicy = ClipPolicy.FullContainmentOnly,
    min_visible: float = 0.25,
) -> List[Label]:
    """Labels visible in ``window``, re-expressed in window-local coordinates.

    ``ClipPartial`` keeps the clipped part of a box when it retains at least
    ``min_visible`` of the original area.
    """
    wbox = window.as_box()
    out = []
    for lab in labels:
        if wbox.contains(lab.box):
            kept = lab.box
        elif policy == ClipPolicy.ClipPartial:
            kept = intersection(lab.box, wbox)
            if kept is None or kept.area < min_visible * lab.box.area:
                continue
        else:
            continue
        local = BBox(kept.x - window.x0, kept.y - window.y0, kept.w, kept.h)
        out.append(Label(lab.id, lab.cls, local, dict(lab.extra)))
    return out


def window_to_image(window: PatchWindow, local_box: BBox, patch_scale: float = 1.0) -> BBox:
    """Map a box predicted on a (possibly resized) patch back to image pixels.

    ``patch_scale`` is network input size over window side, 1 when the patch
    is fed at native resolution.
    """
    if not patch_scale > 0:
        raise NonPositiveScale(f"patch_scale must be > 0, got {patch_scale}")
    return transform_box(local_box, 1.0 / patch_scale, (window.x0, window.y0))


def image_to_window(window: PatchWindow, box: BBox, patch_scale: float = 1.0) -> BBox:
    return transform_box(BBox(box.x - window.x0, box.y - window.y0, box.w, box.h), patch_scale)
