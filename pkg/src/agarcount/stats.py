"""Dataset statistics: sample taxonomy per background, class balance,
box size buckets, spatial heatmaps and per-image count histograms."""

from __future__ import annotations

import csv
import io
import math
import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from agarcount.core.types import (
    BackgroundCategory,
    ColonyClass,
    CountabilityStatus,
    Label,
    SampleAnnotation,
)
from agarcount.errors import InvalidGeometry, NoInstances
from agarcount.tiler import ImageExtent

SMALL_LIMIT = 128.0
LARGE_LIMIT = 512.0


@dataclass(frozen=True)
class SizeBuckets:
    below_128: int = 0
    between_128_512: int = 0
    above_512: int = 0

    @property
    def total(self) -> int:
        return self.below_128 + self.between_128_512 + self.above_512

    def to_dict(self) -> dict:
        return {
            "below_128": self.below_128,
            "between_128_512": self.between_128_512,
            "above_512": self.above_512,
        }


def size_bucket(label: Label) -> str:
    """Bucket name by square root of box area; 128 and 512 fall in the middle bucket."""
    side = math.sqrt(label.box.w * label.box.h)
    if side < SMALL_LIMIT:
        return "below_128"
    if side <= LARGE_LIMIT:
        return "between_128_512"
    return "above_512"


def size_buckets(labels: Iterable[Label]) -> SizeBuckets:
    counts = Counter(size_bucket(lab) for lab in labels if lab.cls.is_microbe)
    return SizeBuckets(counts["below_128"], counts["between_128_512"], counts["above_512"])


@dataclass(frozen=True)
class CountHistogram:
    bucket_width: int
    buckets: Dict[int, int]  # lower bucket edge -> number of samples
    q1: Optional[float]
    median: Optional[float]
    q3: Optional[float]
    n_samples: int

    def to_dict(self) -> dict:
        return {
            "bucket_width": self.bucket_width,
            "buckets": {str(k): v for k, v in sorted(self.buckets.items())},
            "q1": self.q1,
            "median": self.median,
            "q3": self.q3,
            "n_samples": self.n_samples,
        }


def histogram_of_counts(counts: Sequence[int], bucket_width: int = 10, quantile_method: str = "inverted_cdf") -> CountHistogram:
    if bucket_width < 1:
        raise ValueError("bucket_width must be >= 1")
    counts = [int(c) for c in counts]
    buckets = Counter((c // bucket_width) * bucket_width for c in counts)
    if counts:
        q1, med, q3 = (float(v) for v in np.quantile(counts, [0.25, 0.5, 0.75], method=quantile_method))
    else:
        q1 = med = q3 = None
    return CountHistogram(bucket_width, dict(sorted(buckets.items())), q1, med, q3, len(counts))


def count_histogram(
    samples: Iterable[SampleAnnotation],
    bucket_width: int = 10,
    include_empty: bool = False,
    quantile_method: str = "inverted_cdf",
) -> CountHistogram:
    """Histogram and quartiles of ``colonies_number`` over countable samples
    (plus empty ones when ``include_empty``).

    Quartiles default to numpy's ``inverted_cdf`` (smallest count whose
    empirical CDF reaches q), which keeps them integral.
    """
    keep = {CountabilityStatus.Countable}
    if include_empty:
        keep.add(CountabilityStatus.Empty)
    return histogram_of_counts(
        [s.colonies_number for s in samples if s.status in keep], bucket_width, quantile_method
    )


@dataclass(frozen=True)
class DatasetSummary:
    n_samples: int
    per_background: Dict[BackgroundCategory, Dict[str, int]]
    per_class_instances: Dict[ColonyClass, int]
    count_histogram: Dict[int, int]
    total_annotations: int  # microbe labels only
    total_labels: int  # including defects and contamination
    size_buckets: SizeBuckets = field(default_factory=SizeBuckets)

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "per_background": {b.value: dict(v) for b, v in self.per_background.items()},
            "per_class_instances": {c.value: v for c, v in self.per_class_instances.items()},
            "count_histogram": {str(k): v for k, v in sorted(self.count_histogram.items())},
            "total_annotations": self.total_annotations,
            "total_labels": self.total_labels,
            "size_buckets": self.size_buckets.to_dict(),
        }


def summarize(samples: Iterable[SampleAnnotation], bucket_width: int = 10) -> DatasetSummary:
    samples = list(samples)
    per_bg = {b: {s.value: 0 for s in CountabilityStatus} for b in BackgroundCategory}
    per_class = {c: 0 for c in ColonyClass}
    labels = []
    for s in samples:
        per_bg[s.background][s.status.value] += 1
        for lab in s.labels:
            per_class[lab.cls] += 1
            labels.append(lab)
    hist = count_histogram(samples, bucket_width)
    return DatasetSummary(
        n_samples=len(samples),
        per_background=per_bg,
        per_class_instances=per_class,
        count_histogram=hist.buckets,
        total_annotations=sum(v for c, v in per_class.items() if c.is_microbe),
        total_labels=len(labels),
        size_buckets=size_buckets(labels),
    )


@dataclass(frozen=True)
class Heatmap:
    grid: np.ndarray = field(repr=False)  # (resolution, resolution), row = y
    resolution: int
    cls: ColonyClass
    normalization_max: float


def heatmap(
    labels_by_sample: Mapping[int, Sequence[Label]],
    cls: ColonyClass,
    resolution: int = 64,
    plate_extent: Union[ImageExtent, Mapping[int, ImageExtent], None] = None,
    mode: str = "center",
) -> Heatmap:
    """Occupancy of ``cls`` boxes on a ``resolution`` x ``resolution`` grid.

    Positions are taken relative to each sample's plate extent (one extent
    for all samples, or a mapping by sample id). ``center`` counts box
    centres; ``area`` spreads each box over the cells it covers, weighted by
    covered cell fraction. The grid is divided by its maximum cell.
    """
    if resolution < 1:
        raise InvalidGeometry("resolution must be >= 1")
    if mode not in ("center", "area"):
        raise ValueError(f"unknown heatmap mode {mode!r}")
    grid = np.zeros((resolution, resolution), dtype=float)
    edges = np.linspace(0.0, 1.0, resolution + 1)
    for sid, labels in labels_by_sample.items():
        ext = plate_extent.get(sid) if isinstance(plate_extent, Mapping) else plate_extent
        if ext is None:
            raise InvalidGeometry(f"no plate extent for sample {sid}")
        for lab in labels:
            if lab.cls != cls:
                continue
            b = lab.box
            if mode == "center":
                cx, cy = b.center
                j = min(max(int(cx / ext.width * resolution), 0), resolution - 1)
                i = min(max(int(cy / ext.height * resolution), 0), resolution - 1)
                grid[i, j] += 1.0
            else:
                x0, x1 = b.x / ext.width, b.x2 / ext.width
                y0, y1 = b.y / ext.height, b.y2 / ext.height
                fx = np.clip(np.minimum(edges[1:], x1) - np.maximum(edges[:-1], x0), 0, None) * resolution
                fy = np.clip(np.minimum(edges[1:], y1) - np.maximum(edges[:-1], y0), 0, None) * resolution
                grid += np.outer(fy, fx)
    peak = float(grid.max())
    if peak == 0.0:
        warnings.warn(f"no {cls.value} instances for heatmap", NoInstances, stacklevel=2)
        return Heatmap(grid, resolution, cls, 0.0)
    return Heatmap(grid / peak, resolution, cls, peak)


# --- delimited output -------------------------------------------------------


def summary_csv_tables(summary: DatasetSummary, hist: CountHistogram) -> Dict[str, str]:
    """CSV texts keyed by file stem."""

    def render(header, rows):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        return buf.getvalue()

    statuses = [s.value for s in CountabilityStatus]
    return {
        "backgrounds": render(
            ["background"] + statuses,
            [[b.value] + [v[s] for s in statuses] for b, v in summary.per_background.items()],
        ),
        "class_instances": render(
            ["class", "instances"], [[c.value, n] for c, n in summary.per_class_instances.items()]
        ),
        "size_buckets": render(
            ["bucket", "boxes"], [[k, v] for k, v in summary.size_buckets.to_dict().items()]
        ),
        "count_histogram": render(
            ["bucket_start", "bucket_end", "samples"],
            [[k, k + hist.bucket_width - 1, v] for k, v in sorted(hist.buckets.items())],
        ),
    }
