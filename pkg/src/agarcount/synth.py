"""Synthetic plates and simulated detector output.

Everything is drawn from ``numpy.random.Generator`` objects derived from
one seed, one child stream per sample, so a config always regenerates the
same dataset.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import List, Mapping, Sequence, Tuple, Union

import numpy as np

from agarcount.core.geometry import iou_matrix
from agarcount.core.types import (
    MICROBE_CLASSES,
    BackgroundCategory,
    BBox,
    ColonyClass,
    Detection,
    Label,
    SampleAnnotation,
)
from agarcount.errors import InfeasiblePlacement, InvalidThreshold
from agarcount.postprocess import WindowDetections
from agarcount.tiler import ImageExtent, TilingPlan, image_to_window

COUNT_RANGES = {"low": (4, 38), "high": (50, 300)}
SIZE_PROFILES = {"small": (16.0, 128.0), "large": (64.0, 512.0)}
UNCOUNTABLE_CAP = 300


@dataclass(frozen=True)
class NoiseConfig:
    jitter_frac: float = 0.05
    dropout_prob: float = 0.02
    spurious_rate: float = 1.0
    score_sigma: float = 0.05
    crowd_penalty: float = 0.0  # score drop of true boxes on a 300-colony plate, linear in count
    spurious_score: Tuple[float, float] = (0.05, 0.5)

    @classmethod
    def zero(cls) -> "NoiseConfig":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        if not 0.0 <= self.dropout_prob <= 1.0:
            raise InvalidThreshold("dropout_prob must be in [0, 1]")
        if self.jitter_frac < 0 or self.spurious_rate < 0 or self.score_sigma < 0:
            raise InvalidThreshold("noise magnitudes must be >= 0")
        lo, hi = self.spurious_score
        if not 0.0 <= lo <= hi <= 1.0:
            raise InvalidThreshold("spurious_score must be an ordered pair in [0, 1]")


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    plate_extent: ImageExtent = ImageExtent(2048, 2048)
    n_samples: int = 10
    count_distribution: Union[str, Tuple[int, int]] = "low"
    bimodal_weight: float = 0.3  # share of plates drawn from the high range
    class_mix: Mapping[ColonyClass, float] = field(default_factory=lambda: {c: 1.0 for c in MICROBE_CLASSES})
    size_profile: Union[str, Tuple[float, float]] = "small"
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    max_overlap_iou: float = 0.1
    two_species_prob: float = 0.3
    non_colony_rate: float = 0.0
    backgrounds: Tuple[BackgroundCategory, ...] = tuple(BackgroundCategory)
    first_sample_id: int = 1
    max_attempts: int = 500

    def __post_init__(self):
        if self.n_samples < 0:
            raise InvalidThreshold("n_samples must be >= 0")
        if not 0.0 <= self.bimodal_weight <= 1.0 or not 0.0 <= self.two_species_prob <= 1.0:
            raise InvalidThreshold("probabilities must be in [0, 1]")
        weights = [w for w in self.class_mix.values()]
        if not weights or any(w < 0 for w in weights) or sum(weights) <= 0:
            raise InvalidThreshold("class_mix weights must be non-negative and not all zero")
        if any(not ColonyClass(c).is_microbe for c in self.class_mix):
            raise InvalidThreshold("class_mix may only name microbe classes")

    def count_range(self, high: bool) -> Tuple[int, int]:
        d = self.count_distribution
        if isinstance(d, str):
            if d == "bimodal":
                return COUNT_RANGES["high" if high else "low"]
            return COUNT_RANGES[d]
        return (int(d[0]), int(d[1]))

    def size_range(self) -> Tuple[float, float]:
        p = self.size_profile
        return SIZE_PROFILES[p] if isinstance(p, str) else (float(p[0]), float(p[1]))

    @classmethod
    def from_dict(cls, obj: Mapping) -> "SynthConfig":
        obj = dict(obj)
        if "plate_extent" in obj:
            pe = obj["plate_extent"]
            obj["plate_extent"] = ImageExtent(int(pe["width"]), int(pe["height"])) if isinstance(pe, Mapping) else ImageExtent(*pe)
        if "noise" in obj:
            noise = dict(obj["noise"])
            if "spurious_score" in noise:
                noise["spurious_score"] = tuple(noise["spurious_score"])
            obj["noise"] = NoiseConfig(**noise)
        if "class_mix" in obj:
            obj["class_mix"] = {ColonyClass.parse(k): float(v) for k, v in obj["class_mix"].items()}
        if "backgrounds" in obj:
            obj["backgrounds"] = tuple(BackgroundCategory.parse(b) for b in obj["backgrounds"])
        for key in ("count_distribution", "size_profile"):
            if isinstance(obj.get(key), list):
                obj[key] = tuple(obj[key])
        return cls(**obj)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["plate_extent"] = {"width": self.plate_extent.width, "height": self.plate_extent.height}
        d["class_mix"] = {ColonyClass(k).value: v for k, v in self.class_mix.items()}
        d["backgrounds"] = [BackgroundCategory(b).value for b in self.backgrounds]
        return d


@dataclass(frozen=True)
class SynthSample:
    annotation: SampleAnnotation
    ideal_detections: Tuple[Detection, ...]
    noisy_detections: Tuple[Detection, ...]


def _random_box(rng, cfg: SynthConfig) -> Tuple[int, int, int, int]:
    lo, hi = cfg.size_range()
    ext = cfg.plate_extent
    side = rng.uniform(lo, hi)
    aspect = math.exp(rng.uniform(-0.2, 0.2))
    w = int(min(max(1, round(side * math.sqrt(aspect))), ext.width))
    h = int(min(max(1, round(side / math.sqrt(aspect))), ext.height))
    x = int(rng.integers(0, ext.width - w + 1))
    y = int(rng.integers(0, ext.height - h + 1))
    return x, y, w, h


def _place(rng, cfg: SynthConfig, n: int) -> np.ndarray:
    placed = np.zeros((0, 4), dtype=float)
    for _ in range(n):
        for _attempt in range(cfg.max_attempts):
            cand = np.array([_random_box(rng, cfg)], dtype=float)
            if placed.shape[0] == 0 or iou_matrix(cand, placed).max() <= cfg.max_overlap_iou:
                placed = np.vstack([placed, cand])
                break
        else:
            raise InfeasiblePlacement(
                f"could not place colony {placed.shape[0] + 1} of {n} within max IoU {cfg.max_overlap_iou}"
            )
    return placed


def _jitter(rng, box: BBox, frac: float, ext: ImageExtent) -> Tuple[BBox, float]:
    if frac == 0:
        return box, 0.0
    d = rng.uniform(-frac, frac, size=4)
    w = box.w * (1 + d[2])
    h = box.h * (1 + d[3])
    x = box.x + d[0] * box.w
    y = box.y + d[1] * box.h
    x = min(max(x, 0.0), ext.width - w)
    y = min(max(y, 0.0), ext.height - h)
    return BBox(x, y, w, h), float(np.abs(d).max())


def _sample_one(rng, cfg: SynthConfig, sample_id: int) -> SynthSample:
    high = cfg.count_distribution == "high" or (
        cfg.count_distribution == "bimodal" and rng.random() < cfg.bimodal_weight
    )
    lo, hi = cfg.count_range(high)
    n = int(rng.integers(lo, hi + 1))
    background = cfg.backgrounds[int(rng.integers(len(cfg.backgrounds)))]

    species = list(cfg.class_mix)
    weights = np.array([cfg.class_mix[c] for c in species], dtype=float)
    n_species = 2 if (rng.random() < cfg.two_species_prob and np.count_nonzero(weights) > 1) else 1
    chosen = list(rng.choice(len(species), size=n_species, replace=False, p=weights / weights.sum()))
    inoculated = tuple(ColonyClass(species[k]) for k in sorted(chosen))

    if n > UNCOUNTABLE_CAP:
        ann = SampleAnnotation(sample_id, background, inoculated, -1, ())
        return SynthSample(ann, (), ())

    n_non = int(rng.poisson(cfg.non_colony_rate)) if cfg.non_colony_rate > 0 else 0
    boxes = _place(rng, cfg, n + n_non)
    labels = []
    for k in range(n + n_non):
        if k < n:
            cls = inoculated[int(rng.integers(len(inoculated)))]
        else:
            cls = ColonyClass.Defect if rng.random() < 0.5 else ColonyClass.Contamination
        x, y, w, h = boxes[k]
        labels.append(Label(k + 1, cls, BBox(float(x), float(y), float(w), float(h))))
    ann = SampleAnnotation(sample_id, background, inoculated, n, tuple(labels))

    ideal = tuple(Detection(lab.box, lab.cls, 1.0) for lab in labels if lab.cls.is_microbe)
    noise = cfg.noise
    noisy = []
    crowd = noise.crowd_penalty * min(n, UNCOUNTABLE_CAP) / UNCOUNTABLE_CAP
    for det in ideal:
        if noise.dropout_prob and rng.random() < noise.dropout_prob:
            continue
        box, penalty = _jitter(rng, det.box, noise.jitter_frac, cfg.plate_extent)
        score = 1.0 - penalty - crowd
        if noise.score_sigma:
            score += rng.normal(0.0, noise.score_sigma)
        noisy.append(Detection(box, det.cls, float(min(max(score, 0.0), 1.0))))
    n_spurious = int(rng.poisson(noise.spurious_rate)) if noise.spurious_rate > 0 else 0
    for _ in range(n_spurious):
        x, y, w, h = _random_box(rng, cfg)
        cls = inoculated[int(rng.integers(len(inoculated)))]
        score = float(rng.uniform(*noise.spurious_score))
        noisy.append(Detection(BBox(float(x), float(y), float(w), float(h)), cls, score))
    return SynthSample(ann, ideal, tuple(noisy))


def generate(cfg: SynthConfig) -> List[SynthSample]:
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.n_samples)
    return [
        _sample_one(np.random.default_rng(ss), cfg, cfg.first_sample_id + i)
        for i, ss in enumerate(children)
    ]


def project_to_windows(
    plan: TilingPlan, detections: Sequence[Detection], patch_scale: float = 1.0
) -> List[WindowDetections]:
    """What a perfect detector would report per window.

    A detection is reported by every window it overlaps, as the whole box in
    window-local coordinates (it may stick out of the window).
    """
    per_window = []
    for k, win in enumerate(plan.windows):
        wx2 = win.x0 + win.side
        wy2 = win.y0 + win.side
        local = tuple(
            Detection(image_to_window(win, d.box, patch_scale), d.cls, d.score)
            for d in detections
            if d.box.x < wx2 and d.box.x2 > win.x0 and d.box.y < wy2 and d.box.y2 > win.y0
        )
        if local:
            per_window.append(WindowDetections(k, local))
    return per_window


def tuning_dataset(samples: Sequence[SynthSample], noisy: bool = True):
    return [(s.annotation, s.noisy_detections if noisy else s.ideal_detections) for s in samples]


def bimodal_tuning_config(seed: int = 7, n_samples: int = 60) -> SynthConfig:
    """Mostly sparse plates plus a share of crowded ones whose true boxes score lower.

    Sparse plates want a high probability threshold to shed spurious boxes;
    crowded plates want a low one to keep their weakly scored colonies.
    """
    return SynthConfig(
        seed=seed,
        n_samples=n_samples,
        count_distribution="bimodal",
        bimodal_weight=0.3,
        size_profile=(16.0, 48.0),
        noise=NoiseConfig(
            jitter_frac=0.0,
            dropout_prob=0.0,
            spurious_rate=3.0,
            score_sigma=0.08,
            crowd_penalty=0.6,
            spurious_score=(0.05, 0.45),
        ),
    )
