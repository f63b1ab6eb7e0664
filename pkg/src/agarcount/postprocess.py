"""Whole-image predictions from per-window detections.

Window detections are shifted and rescaled into image coordinates, then
filtered by class probability and by a soft-NMS whose next kept box is the
largest remaining one rather than the most confident.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from agarcount.core.geometry import intersection, iou_matrix
from agarcount.core.types import MICROBE_CLASSES, BBox, ColonyClass, Detection
from agarcount.errors import InvalidThreshold, MalformedJson, MissingField, UnknownWindowIndex
from agarcount.tiler import TilingPlan, window_to_image


class NmsMethod(str, Enum):
    Hard = "hard"
    SoftLinear = "soft_linear"
    SoftGaussian = "soft_gaussian"


class Priority(str, Enum):
    Area = "area"
    Score = "score"


@dataclass(frozen=True)
class NmsConfig:
    method: NmsMethod = NmsMethod.SoftGaussian
    iou_threshold: float = 0.5
    sigma: float = 0.5
    score_floor: float = 0.001
    priority: Priority = Priority.Area

    def __post_init__(self):
        object.__setattr__(self, "method", NmsMethod(self.method))
        object.__setattr__(self, "priority", Priority(self.priority))
        if not 0.0 <= self.iou_threshold <= 1.0:
            raise InvalidThreshold(f"iou_threshold {self.iou_threshold} outside [0, 1]")
        if not self.sigma > 0:
            raise InvalidThreshold(f"sigma must be > 0, got {self.sigma}")
        if not 0.0 <= self.score_floor <= 1.0:
            raise InvalidThreshold(f"score_floor {self.score_floor} outside [0, 1]")

    def with_threshold(self, value: float) -> "NmsConfig":
        """Copy with the method's tunable parameter (IoU threshold or sigma) set."""
        if self.method == NmsMethod.SoftGaussian:
            return NmsConfig(self.method, self.iou_threshold, value, self.score_floor, self.priority)
        return NmsConfig(self.method, value, self.sigma, self.score_floor, self.priority)

    @property
    def threshold(self) -> float:
        return self.sigma if self.method == NmsMethod.SoftGaussian else self.iou_threshold


@dataclass(frozen=True)
class FilterConfig:
    prob_threshold: float = 0.5
    nms: NmsConfig = field(default_factory=NmsConfig)

    def __post_init__(self):
        if not 0.0 <= self.prob_threshold <= 1.0:
            raise InvalidThreshold(f"prob_threshold {self.prob_threshold} outside [0, 1]")


@dataclass(frozen=True)
class WindowDetections:
    window_index: int
    detections: Tuple[Detection, ...]


def merge_windows(
    plan: TilingPlan, per_window: Iterable[WindowDetections], patch_scale: float = 1.0
) -> List[Detection]:
    """Concatenate window detections in image coordinates.

    Boxes reaching into the zero padding are clipped to the image; boxes
    left with no area are dropped. Duplicates are kept for NMS to resolve.
    """
    image_box = plan.image.as_box()
    out = []
    for wd in per_window:
        if not 0 <= wd.window_index < len(plan.windows):
            raise UnknownWindowIndex(f"window index {wd.window_index} not in plan of {len(plan.windows)}")
        window = plan.windows[wd.window_index]
        for det in wd.detections:
            box = window_to_image(window, det.box, patch_scale)
            if not image_box.contains(box):
                box = intersection(box, image_box)
                if box is None:
                    continue
            out.append(Detection(box, det.cls, det.score))
    return out


def _decay(ious: np.ndarray, cfg: NmsConfig) -> np.ndarray:
    if cfg.method == NmsMethod.Hard:
        return np.where(ious >= cfg.iou_threshold, 0.0, 1.0)
    if cfg.method == NmsMethod.SoftLinear:
        return np.where(ious >= cfg.iou_threshold, 1.0 - ious, 1.0)
    return np.exp(-(ious**2) / cfg.sigma)


def _nms_dynamic(boxes, scores, ious, cfg: NmsConfig) -> List[Tuple[int, float]]:
    # soft decay with score priority: the selection order changes as scores decay
    areas = boxes[:, 2] * boxes[:, 3]
    alive = np.ones(len(scores), dtype=bool)
    kept = []
    while alive.any():
        idx = np.flatnonzero(alive)
        cand = idx[scores[idx] == scores[idx].max()]
        if cand.size > 1:
            # lexsort: last key is most significant
            cand = cand[np.lexsort((boxes[cand, 1], boxes[cand, 0], -areas[cand]))]
        i = int(cand[0])
        kept.append((i, float(scores[i])))
        alive[i] = False
        others = np.flatnonzero(alive)
        factor = _decay(ious[i, others], cfg)
        scores[others] *= factor
        alive[others[(factor < 1.0) & (scores[others] < cfg.score_floor)]] = False
    return kept


def _nms_single_class(boxes: np.ndarray, scores: np.ndarray, cfg: NmsConfig) -> List[Tuple[int, float]]:
    """Run the suppression loop on one class; returns ``(index, score)`` in retention order."""
    n = len(scores)
    scores = scores.astype(float).copy()
    ious = iou_matrix(boxes, boxes)
    hard = cfg.method == NmsMethod.Hard
    by_area = cfg.priority == Priority.Area
    if not hard and not by_area:
        return _nms_dynamic(boxes, scores, ious, cfg)

    # Otherwise the order is fixed up front, except that soft decay can
    # reorder boxes of equal area; those ties are settled when reached.
    areas = boxes[:, 2] * boxes[:, 3]
    if hard and cfg.iou_threshold <= 0:
        touching = np.ones((n, n), dtype=bool)
    else:
        touching = ious > 0
    np.fill_diagonal(touching, False)
    rows, cols = np.nonzero(touching)
    neighbours = [[] for _ in range(n)]
    for a, b in zip(rows.tolist(), cols.tolist()):
        neighbours[a].append(b)
    primary, secondary = (areas, scores) if by_area else (scores, areas)
    order = np.lexsort((boxes[:, 1], boxes[:, 0], -secondary, -primary)).tolist()
    alive = [True] * n
    kept = []
    k = 0
    while k < n:
        stop = k + 1
        while stop < n and primary[order[stop]] == primary[order[k]]:
            stop += 1
        group = order[k:stop]
        k = stop
        while True:
            live = [i for i in group if alive[i]]
            if not live:
                break
            i = live[0] if hard else min(live, key=lambda j: (-scores[j], boxes[j, 0], boxes[j, 1]))
            kept.append((i, float(scores[i])))
            alive[i] = False
            for j in neighbours[i]:
                if not alive[j]:
                    continue
                u = ious[i, j]
                if hard:
                    if u >= cfg.iou_threshold:
                        alive[j] = False
                    continue
                if cfg.method == NmsMethod.SoftLinear:
                    if u < cfg.iou_threshold:
                        continue
                    scores[j] *= 1.0 - u
                else:
                    scores[j] *= math.exp(-(u * u) / cfg.sigma)
                if scores[j] < cfg.score_floor:
                    alive[j] = False
    return kept


def area_priority_soft_nms(dets: Sequence[Detection], cfg: NmsConfig = NmsConfig()) -> List[Detection]:
    """Per-class (soft-)NMS; output is in retention order.

    With ``Priority.Area`` the next kept box is the remaining one with the
    largest area, ties broken by higher score, then smaller ``(x, y)``.
    ``Priority.Score`` swaps the first two keys. Same-class boxes overlapping
    the kept one are dropped (hard) or have their scores decayed (soft), and
    decayed boxes falling under ``score_floor`` are removed.
    """
    if not dets:
        return []
    by_class: Dict[ColonyClass, List[int]] = defaultdict(list)
    for k, d in enumerate(dets):
        by_class[d.cls].append(k)
    class_rank = {c: r for r, c in enumerate(ColonyClass)}
    kept = []
    for cls, members in by_class.items():
        boxes = np.array([dets[k].box.as_xywh() for k in members], dtype=float)
        scores = np.array([dets[k].score for k in members], dtype=float)
        for i, s in _nms_single_class(boxes, scores, cfg):
            kept.append((Detection(dets[members[i]].box, cls, s), class_rank[cls]))

    # Classes never interact and each class's retention keys only decrease,
    # so sorting by key reproduces the order of one loop over all classes.
    def key(item):
        d, rank = item
        primary, secondary = (d.box.area, d.score) if cfg.priority == Priority.Area else (d.score, d.box.area)
        return (-primary, -secondary, d.box.x, d.box.y, rank)

    return [d for d, _ in sorted(kept, key=key)]


def apply_filters(dets: Sequence[Detection], cfg: FilterConfig) -> List[Detection]:
    """Drop detections under ``prob_threshold``, then run the NMS."""
    return area_priority_soft_nms([d for d in dets if d.score >= cfg.prob_threshold], cfg.nms)


def predict_counts(dets: Iterable[Detection]) -> Dict[ColonyClass, int]:
    counts = {c: 0 for c in ColonyClass}
    for d in dets:
        counts[d.cls] += 1
    return counts


def microbe_total(counts: Mapping[ColonyClass, int]) -> int:
    """Colony count: defects and contamination are not colonies."""
    return sum(counts.get(c, 0) for c in MICROBE_CLASSES)


# --- JSON lines -------------------------------------------------------------


@dataclass(frozen=True)
class DetectionRecord:
    sample_id: int
    detection: Detection
    window_index: Optional[int] = None


def _fmt(v: float) -> float:
    v = float(f"{v:.6g}")
    return int(v) if v.is_integer() and abs(v) < 2**53 else v


def detection_to_json(sample_id: int, det: Detection, window_index: Optional[int] = None) -> str:
    obj = {
        "sample_id": sample_id,
        "class": det.cls.value,
        "score": _fmt(det.score),
        "x": _fmt(det.box.x),
        "y": _fmt(det.box.y),
        "w": _fmt(det.box.w),
        "h": _fmt(det.box.h),
    }
    if window_index is not None:
        obj["window_index"] = window_index
    return json.dumps(obj, sort_keys=True)


def parse_detection_line(line: str, aliases=None) -> DetectionRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedJson(str(exc)) from None
    for key in ("sample_id", "class", "score", "x", "y", "w", "h"):
        if key not in obj:
            raise MissingField(key, "detection record")
    det = Detection(
        BBox(float(obj["x"]), float(obj["y"]), float(obj["w"]), float(obj["h"])),
        ColonyClass.parse(obj["class"], aliases),
        float(obj["score"]),
    )
    wi = obj.get("window_index")
    return DetectionRecord(int(obj["sample_id"]), det, None if wi is None else int(wi))


def read_detections(path, aliases=None) -> List[DetectionRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(parse_detection_line(line, aliases))
    return records


def write_detections(path, records: Iterable[DetectionRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(detection_to_json(r.sample_id, r.detection, r.window_index) + "\n")


def group_by_sample(records: Iterable[DetectionRecord]) -> Dict[int, List[Detection]]:
    out: Dict[int, List[Detection]] = defaultdict(list)
    for r in records:
        out[r.sample_id].append(r.detection)
    return dict(out)


def group_by_window(records: Iterable[DetectionRecord]) -> Dict[int, List[WindowDetections]]:
    """Window-local records grouped as ``{sample_id: [WindowDetections, ...]}``."""
    tmp: Dict[int, Dict[int, List[Detection]]] = defaultdict(lambda: defaultdict(list))
    for r in records:
        if r.window_index is None:
            raise MissingField("window_index", f"detection of sample {r.sample_id}")
        tmp[r.sample_id][r.window_index].append(r.detection)
    return {
        sid: [WindowDetections(wi, tuple(d)) for wi, d in sorted(by_w.items())]
        for sid, by_w in tmp.items()
    }
