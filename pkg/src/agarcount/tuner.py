"""Grid search of the (probability, NMS) threshold pair and double thresholding.

A pair is scored by sMAPE over the evaluated samples; pairs whose sMAPE is
within ``tiebreak_band`` of the best are then compared by MAE.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple


from agarcount.core.types import CountabilityStatus, Detection, SampleAnnotation
from agarcount.errors import EmptyDataset, InvalidThreshold, NoHighCountSamples
from agarcount.metrics import mae, smape
from agarcount.postprocess import FilterConfig, NmsConfig, NmsMethod, Priority, apply_filters

DEFAULT_SWITCH_COUNT = 50

# (annotation, raw merged detections before any filtering)
TuningSample = Tuple[SampleAnnotation, Sequence[Detection]]


@dataclass(frozen=True)
class ThresholdPair:
    prob_threshold: float
    nms_threshold: float

    def filter_config(self, base: NmsConfig = NmsConfig()) -> FilterConfig:
        return FilterConfig(self.prob_threshold, base.with_threshold(self.nms_threshold))


def _steps(start, stop, step):
    n = int(round((stop - start) / step)) + 1
    return tuple(round(start + i * step, 10) for i in range(n))


@dataclass(frozen=True)
class GridSpec:
    prob_values: Tuple[float, ...] = field(default_factory=lambda: _steps(0.05, 0.95, 0.05))
    nms_values: Tuple[float, ...] = field(default_factory=lambda: _steps(0.1, 0.9, 0.1))
    tiebreak_band: float = 0.1
    relative_band: bool = False

    def __post_init__(self):
        object.__setattr__(self, "prob_values", tuple(float(v) for v in self.prob_values))
        object.__setattr__(self, "nms_values", tuple(float(v) for v in self.nms_values))
        for name, vals in (("prob_values", self.prob_values), ("nms_values", self.nms_values)):
            if not vals:
                raise InvalidThreshold(f"{name} is empty")
            if any(b <= a for a, b in zip(vals, vals[1:])):
                raise InvalidThreshold(f"{name} must be strictly increasing")
        if any(not 0.0 <= v <= 1.0 for v in self.prob_values):
            raise InvalidThreshold("prob_values must lie in [0, 1]")
        if self.tiebreak_band < 0:
            raise InvalidThreshold("tiebreak_band must be >= 0")

    @classmethod
    def parse(cls, text: str, **kw) -> "GridSpec":
        """Parse ``prob=0.05:0.95:0.05,nms=0.1:0.9:0.1`` (either part may be a comma-free list ``a;b;c``)."""
        parts = {}
        for chunk in text.split(","):
            key, _, spec = chunk.partition("=")
            key = key.strip()
            if key not in ("prob", "nms") or not spec:
                raise InvalidThreshold(f"bad grid spec chunk {chunk!r}")
            if ":" in spec:
                a, b, c = (float(v) for v in spec.split(":"))
                parts[key] = _steps(a, b, c)
            else:
                parts[key] = tuple(float(v) for v in spec.split(";"))
        kwargs = dict(kw)
        if "prob" in parts:
            kwargs["prob_values"] = parts["prob"]
        if "nms" in parts:
            kwargs["nms_values"] = parts["nms"]
        return cls(**kwargs)

    def pairs(self) -> List[ThresholdPair]:
        return [ThresholdPair(p, n) for p in self.prob_values for n in self.nms_values]


@dataclass(frozen=True)
class GridResult:
    pair: ThresholdPair
    smape: float
    mae: float


def _evaluated(dataset: Sequence[TuningSample]) -> List[TuningSample]:
    rows = [(a, d) for a, d in dataset if a.status != CountabilityStatus.Uncountable]
    if not rows:
        raise EmptyDataset("no countable samples to tune on")
    return rows


def predicted_count(dets: Sequence[Detection]) -> int:
    return sum(1 for d in dets if d.cls.is_microbe)


def evaluate_pair(
    pair: ThresholdPair, dataset: Sequence[TuningSample], base: NmsConfig = NmsConfig()
) -> Tuple[float, float]:
    """(sMAPE %, MAE) of whole-image counts after filtering with ``pair``."""
    rows = _evaluated(dataset)
    cfg = pair.filter_config(base)
    truth = [a.colonies_number for a, _ in rows]
    pred = [predicted_count(apply_filters(d, cfg)) for _, d in rows]
    return smape(truth, pred), mae(truth, pred)


def _eval_one(args):
    pair, rows, base = args
    s, m = evaluate_pair(pair, rows, base)
    return GridResult(pair, s, m)


def evaluate_grid(
    grid: GridSpec,
    dataset: Sequence[TuningSample],
    base: NmsConfig = NmsConfig(),
    workers: Optional[int] = None,
) -> List[GridResult]:
    rows = _evaluated(dataset)
    jobs = [(p, rows, base) for p in grid.pairs()]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(_eval_one, jobs))
    return [_eval_one(j) for j in jobs]


def select_pair(results: Sequence[GridResult], band: float = 0.1, relative: bool = False) -> GridResult:
    """Lowest sMAPE, with every result inside the band settled by lowest MAE.

    The band is in percentage points, or a percentage of the best sMAPE when
    ``relative``. Remaining ties go to the lower probability, then the lower
    NMS threshold, so the outcome does not depend on evaluation order.
    """
    if not results:
        raise EmptyDataset("no grid results")
    best = min(r.smape for r in results)
    limit = best * (1 + band / 100.0) if relative else best + band
    limit += 1e-9
    candidates = [r for r in results if r.smape <= limit]
    return min(
        candidates,
        key=lambda r: (round(r.mae, 9), r.pair.prob_threshold, r.pair.nms_threshold),
    )


def grid_search(
    grid: GridSpec,
    dataset: Sequence[TuningSample],
    base: NmsConfig = NmsConfig(),
    workers: Optional[int] = None,
) -> ThresholdPair:
    results = evaluate_grid(grid, dataset, base, workers)
    return select_pair(results, grid.tiebreak_band, grid.relative_band).pair


# --- double thresholding ----------------------------------------------------


@dataclass(frozen=True)
class DualPolicy:
    general: ThresholdPair
    auxiliary: ThresholdPair
    switch_count: int = DEFAULT_SWITCH_COUNT

    def __post_init__(self):
        if self.switch_count < 0:
            raise InvalidThreshold("switch_count must be >= 0")


def fit_dual_policy(
    grid: GridSpec,
    dataset: Sequence[TuningSample],
    switch_count: int = DEFAULT_SWITCH_COUNT,
    base: NmsConfig = NmsConfig(),
    workers: Optional[int] = None,
) -> DualPolicy:
    """General pair fitted on all samples, auxiliary on those with more than ``switch_count`` true colonies."""
    crowded = [(a, d) for a, d in dataset if a.colonies_number > switch_count]
    if not crowded:
        raise NoHighCountSamples(f"no sample has more than {switch_count} colonies")
    general = grid_search(grid, dataset, base, workers)
    auxiliary = grid_search(grid, crowded, base, workers)
    return DualPolicy(general, auxiliary, switch_count)


def apply_dual_policy(
    policy: DualPolicy, raw_dets: Sequence[Detection], base: NmsConfig = NmsConfig()
) -> List[Detection]:
    """Filter with the general pair; if that predicts more than ``switch_count``
    colonies, refilter the raw detections with the auxiliary pair instead."""
    out = apply_filters(raw_dets, policy.general.filter_config(base))
    if predicted_count(out) > policy.switch_count:
        out = apply_filters(raw_dets, policy.auxiliary.filter_config(base))
    return out


def evaluate_policy(
    policy: DualPolicy, dataset: Sequence[TuningSample], mode: str = "mixed", base: NmsConfig = NmsConfig()
) -> Tuple[float, float]:
    """(sMAPE, MAE) for ``mode`` in ``general`` / ``auxiliary`` / ``mixed``."""
    if mode == "general":
        return evaluate_pair(policy.general, dataset, base)
    if mode == "auxiliary":
        return evaluate_pair(policy.auxiliary, dataset, base)
    if mode != "mixed":
        raise ValueError(f"unknown policy mode {mode!r}")
    rows = _evaluated(dataset)
    truth = [a.colonies_number for a, _ in rows]
    pred = [predicted_count(apply_dual_policy(policy, d, base)) for _, d in rows]
    return smape(truth, pred), mae(truth, pred)


# --- threshold config file --------------------------------------------------


@dataclass(frozen=True)
class ThresholdConfig:
    """What ``tune`` writes and ``merge`` reads."""

    pair: ThresholdPair
    nms: NmsConfig = NmsConfig()
    auxiliary: Optional[ThresholdPair] = None
    switch_count: int = DEFAULT_SWITCH_COUNT

    @property
    def policy(self) -> Optional[DualPolicy]:
        if self.auxiliary is None:
            return None
        return DualPolicy(self.pair, self.auxiliary, self.switch_count)

    def to_dict(self) -> dict:
        out = {
            "method": self.nms.method.value,
            "priority": self.nms.priority.value,
            "score_floor": self.nms.score_floor,
            "prob_threshold": self.pair.prob_threshold,
            "nms_threshold": self.pair.nms_threshold,
            "switch_count": self.switch_count,
        }
        if self.auxiliary is not None:
            out["auxiliary"] = {
                "prob_threshold": self.auxiliary.prob_threshold,
                "nms_threshold": self.auxiliary.nms_threshold,
            }
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "ThresholdConfig":
        nms = NmsConfig(
            method=NmsMethod(obj.get("method", NmsMethod.SoftGaussian.value)),
            priority=Priority(obj.get("priority", Priority.Area.value)),
            score_floor=float(obj.get("score_floor", NmsConfig.score_floor)),
        )
        aux = obj.get("auxiliary")
        return cls(
            pair=ThresholdPair(float(obj["prob_threshold"]), float(obj["nms_threshold"])),
            nms=nms,
            auxiliary=None if aux is None else ThresholdPair(float(aux["prob_threshold"]), float(aux["nms_threshold"])),
            switch_count=int(obj.get("switch_count", DEFAULT_SWITCH_COUNT)),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def loads(cls, text: str) -> "ThresholdConfig":
        return cls.from_dict(json.loads(text))


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("PLATE_PIPELINE_THREADS", "1")))
    except ValueError:
        return 1
