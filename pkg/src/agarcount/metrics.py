"""Detection metrics (matching, PR curves, AP, mAP) and counting metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from agarcount.core.geometry import iou_matrix
from agarcount.core.types import (
    MICROBE_CLASSES,
    ColonyClass,
    CountabilityStatus,
    Detection,
    Label,
    SampleAnnotation,
)
from agarcount.errors import EmptyInput, InvalidThreshold, LengthMismatch, MissingSample

DEFAULT_IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


@dataclass(frozen=True)
class MatchOutcome:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other: "MatchOutcome") -> "MatchOutcome":
        return MatchOutcome(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 1.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0


@dataclass(frozen=True)
class PRPoint:
    recall: float
    precision: float
    score_cutoff: float


# --- matching ---------------------------------------------------------------


def _score_order(dets: Sequence[Detection]) -> List[int]:
    return sorted(range(len(dets)), key=lambda i: -dets[i].score)


def match_detections(
    gt: Sequence[Label], dets: Sequence[Detection], iou_threshold: float
) -> List[Tuple[int, Optional[int]]]:
    """Greedy COCO-style matching.

    Detections are visited by descending score (stable on ties); each takes
    the still-unmatched same-class GT box with the highest IoU when that IoU
    reaches ``iou_threshold``. Returns ``(det_index, gt_index or None)`` in
    visiting order.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise InvalidThreshold(f"iou_threshold must be in (0, 1], got {iou_threshold}")
    if not dets:
        return []
    ious = iou_matrix([d.box.as_xywh() for d in dets], [g.box.as_xywh() for g in gt]) if gt else None
    gt_cls = [g.cls for g in gt]
    taken = [False] * len(gt)
    out = []
    for i in _score_order(dets):
        best, best_iou = None, -1.0
        for j in range(len(gt)):
            if taken[j] or gt_cls[j] != dets[i].cls:
                continue
            u = ious[i, j]
            if u >= iou_threshold and u > best_iou:
                best, best_iou = j, u
        if best is not None:
            taken[best] = True
        out.append((i, best))
    return out


def match_outcome(gt: Sequence[Label], dets: Sequence[Detection], iou_threshold: float) -> MatchOutcome:
    matches = match_detections(gt, dets, iou_threshold)
    tp = sum(1 for _, g in matches if g is not None)
    return MatchOutcome(tp=tp, fp=len(matches) - tp, fn=len(gt) - tp)


# --- PR curve and AP --------------------------------------------------------


def _curve_from_flags(scored_flags: List[Tuple[float, bool]], n_gt: int) -> List[PRPoint]:
    if not scored_flags:
        return [PRPoint(0.0, 1.0, math.inf)]
    scored_flags.sort(key=lambda t: -t[0])
    points = []
    tp = fp = 0
    k = 0
    while k < len(scored_flags):
        s = scored_flags[k][0]
        while k < len(scored_flags) and scored_flags[k][0] == s:
            if scored_flags[k][1]:
                tp += 1
            else:
                fp += 1
            k += 1
        recall = tp / n_gt if n_gt else 0.0
        points.append(PRPoint(recall, tp / (tp + fp), s))
    return points


def pr_curve(gt: Sequence[Label], dets: Sequence[Detection], iou_threshold: float) -> List[PRPoint]:
    """Precision/recall at each distinct score cutoff, highest cutoff first.

    Greedy matching is prefix-stable, so one matching pass gives the outcome
    at every cutoff. With no detections the curve is the single point
    ``(recall 0, precision 1)``.
    """
    return pooled_pr_curve([(gt, dets)], iou_threshold)


def pooled_pr_curve(
    pairs: Iterable[Tuple[Sequence[Label], Sequence[Detection]]], iou_threshold: float
) -> List[PRPoint]:
    """PR curve with detections of several images pooled (matched per image)."""
    flags: List[Tuple[float, bool]] = []
    n_gt = 0
    for gt, dets in pairs:
        n_gt += len(gt)
        for i, g in match_detections(gt, dets, iou_threshold):
            flags.append((dets[i].score, g is not None))
    return _curve_from_flags(flags, n_gt)


def average_precision(curve: Sequence[PRPoint], method: str = "trapezoid") -> float:
    """Area under the PR curve.

    ``trapezoid`` sorts by recall, prepends recall 0 at the first precision
    and drops to precision 0 after the last recall reached, so unreached
    recall earns nothing. ``coco101`` is COCO's interpolated 101-point mean.
    """
    if not curve:
        raise EmptyInput("empty precision-recall curve")
    if method == "coco101":
        pts = [p for p in curve if math.isfinite(p.score_cutoff)]
        if not pts:
            return 0.0
        pts = sorted(pts, key=lambda p: (p.recall, -p.precision))
        rec = np.array([p.recall for p in pts])
        prec = np.maximum.accumulate(np.array([p.precision for p in pts])[::-1])[::-1]
        total = 0.0
        for r in np.linspace(0.0, 1.0, 101):
            k = np.searchsorted(rec, r, side="left")
            total += prec[k] if k < len(rec) else 0.0
        return float(total / 101)
    if method != "trapezoid":
        raise ValueError(f"unknown AP method {method!r}")
    pts = sorted(curve, key=lambda p: (p.recall, -p.precision))
    rec = [0.0] + [p.recall for p in pts] + [pts[-1].recall, 1.0]
    prec = [pts[0].precision] + [p.precision for p in pts] + [0.0, 0.0]
    area = float(np.trapezoid(prec, rec))
    return min(max(area, 0.0), 1.0)


@dataclass
class APReport:
    """AP per IoU threshold, averaged over classes, and its per-class breakdown.

    ``per_class[c]`` is ``{"per_iou": {t: ap}, "mean": m}``; classes without
    ground truth in the evaluated set are left out.
    """

    per_iou: Dict[float, float]
    mean: float
    per_class: Dict[ColonyClass, Dict] = field(default_factory=dict)
    curves: Dict[Tuple[ColonyClass, float], List[PRPoint]] = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {
            "per_iou": {f"{t:.2f}": v for t, v in self.per_iou.items()},
            "mean": self.mean,
            "per_class": {
                c.value: {
                    "per_iou": {f"{t:.2f}": v for t, v in d["per_iou"].items()},
                    "mean": d["mean"],
                }
                for c, d in self.per_class.items()
            },
        }

    def to_table(self) -> str:
        """Plain-text table: rows are IoU thresholds, columns classes and the mean, in percent."""
        classes = list(self.per_class)
        header = ["IoU"] + [c.value for c in classes] + ["mean"]
        rows = []
        for t, v in self.per_iou.items():
            rows.append([f"{t:.2f}"] + [f"{100 * self.per_class[c]['per_iou'][t]:.1f}" for c in classes] + [f"{100 * v:.1f}"])
        rows.append(["mAP"] + [f"{100 * self.per_class[c]['mean']:.1f}" for c in classes] + [f"{100 * self.mean:.1f}"])
        widths = [max(len(r[k]) for r in [header] + rows) for k in range(len(header))]
        lines = ["  ".join(cell.rjust(w) for cell, w in zip(r, widths)) for r in [header] + rows]
        return "\n".join(lines) + "\n"


def map_report(
    gt_by_sample: Mapping[int, Sequence[Label]],
    dets_by_sample: Mapping[int, Sequence[Detection]],
    thresholds: Sequence[float] = DEFAULT_IOU_THRESHOLDS,
    method: str = "trapezoid",
    classes: Optional[Sequence[ColonyClass]] = None,
) -> APReport:
    """AP per class and IoU threshold with detections pooled over samples.

    ``per_iou[t]`` is the mean AP over classes that have ground truth;
    ``mean`` is the mean of ``per_iou``.
    """
    missing = set(gt_by_sample) ^ set(dets_by_sample)
    if missing:
        raise MissingSample(f"sample ids not present in both inputs: {sorted(missing)[:10]}")
    if classes is None:
        classes = list(ColonyClass)
    sample_ids = sorted(gt_by_sample)
    per_class: Dict[ColonyClass, Dict] = {}
    curves = {}
    for c in classes:
        pairs = [
            ([g for g in gt_by_sample[s] if g.cls == c], [d for d in dets_by_sample[s] if d.cls == c])
            for s in sample_ids
        ]
        if sum(len(g) for g, _ in pairs) == 0:
            continue
        aps = {}
        for t in thresholds:
            curve = pooled_pr_curve(pairs, t)
            curves[(c, t)] = curve
            aps[t] = average_precision(curve, method)
        per_class[c] = {"per_iou": aps, "mean": float(np.mean(list(aps.values())))}
    per_iou = {
        t: float(np.mean([d["per_iou"][t] for d in per_class.values()])) if per_class else 0.0
        for t in thresholds
    }
    mean = float(np.mean(list(per_iou.values()))) if per_iou else 0.0
    return APReport(per_iou=per_iou, mean=mean, per_class=per_class, curves=curves)


# --- counting ---------------------------------------------------------------


def _paired(truth, pred):
    truth = np.asarray(truth, dtype=float).ravel()
    pred = np.asarray(pred, dtype=float).ravel()
    if truth.shape != pred.shape:
        raise LengthMismatch(f"{truth.size} truth values vs {pred.size} predictions")
    if truth.size == 0:
        raise EmptyInput("counting metrics need at least one sample")
    return truth, pred


def mae(truth: Sequence[int], pred: Sequence[int]) -> float:
    t, p = _paired(truth, pred)
    return float(np.abs(t - p).sum() / t.size)


def smape(truth: Sequence[int], pred: Sequence[int]) -> float:
    """Symmetric MAPE in percent; a sample with both counts zero contributes 0."""
    t, p = _paired(truth, pred)
    if (t < 0).any() or (p < 0).any():
        raise ValueError("sMAPE is defined for non-negative counts only")
    num = np.abs(t - p)
    den = np.abs(t + p)
    terms = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return float(100.0 * terms.sum() / t.size)


def cmae(
    truth_by_class: Mapping[ColonyClass, Sequence[int]],
    pred_by_class: Mapping[ColonyClass, Sequence[int]],
) -> float:
    """Sum of per-microbe MAEs; a class absent from one side counts as zeros there."""
    return float(sum(per_class_mae(truth_by_class, pred_by_class).values()))


def per_class_mae(truth_by_class, pred_by_class) -> Dict[ColonyClass, float]:
    out = {}
    for c in MICROBE_CLASSES:
        t = truth_by_class.get(c)
        p = pred_by_class.get(c)
        if t is None and p is None:
            continue
        if t is None:
            t = [0] * len(p)
        if p is None:
            p = [0] * len(t)
        if len(t) != len(p):
            raise LengthMismatch(f"{c.value}: {len(t)} truth values vs {len(p)} predictions")
        if len(t) == 0:
            continue
        out[c] = mae(t, p)
    return out


@dataclass(frozen=True)
class CountReport:
    n_samples: int
    mae: float
    smape: float
    cmae: float
    per_class_mae: Dict[ColonyClass, float]
    K: int = len(MICROBE_CLASSES)

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "mae": self.mae,
            "smape": self.smape,
            "cmae": self.cmae,
            "per_class_mae": {c.value: v for c, v in self.per_class_mae.items()},
            "K": self.K,
        }


def count_report(
    samples: Sequence[SampleAnnotation], preds_by_sample: Mapping[int, Sequence[Detection]]
) -> CountReport:
    """Counting metrics over the empty and countable samples; uncountable plates are skipped.

    Samples without an entry in ``preds_by_sample`` are predicted as empty.
    """
    evaluated = [s for s in samples if s.status != CountabilityStatus.Uncountable]
    if not evaluated:
        raise EmptyInput("no countable samples to evaluate")
    truth, pred = [], []
    truth_cls = {c: [] for c in MICROBE_CLASSES}
    pred_cls = {c: [] for c in MICROBE_CLASSES}
    for s in evaluated:
        dets = preds_by_sample.get(s.sample_id, ())
        truth.append(s.colonies_number)
        pred.append(sum(1 for d in dets if d.cls.is_microbe))
        for c in MICROBE_CLASSES:
            truth_cls[c].append(sum(1 for lab in s.labels if lab.cls == c))
            pred_cls[c].append(sum(1 for d in dets if d.cls == c))
    pcm = per_class_mae(truth_cls, pred_cls)
    return CountReport(
        n_samples=len(evaluated),
        mae=mae(truth, pred),
        smape=smape(truth, pred),
        cmae=float(sum(pcm.values())),
        per_class_mae=pcm,
    )
