"""Domain types: boxes, classes, annotations and detections."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Mapping, Optional, Tuple

from agarcount.errors import InvalidGeometry, InvalidThreshold, UnknownBackground, UnknownClass


def _alias_key(name: str) -> str:
    return re.sub(r"[\s._\-]+", "", name.strip().lower())


class ColonyClass(str, Enum):
    SAureus = "S.aureus"
    BSubtilis = "B.subtilis"
    PAeruginosa = "P.aeruginosa"
    EColi = "E.coli"
    CAlbicans = "C.albicans"
    Defect = "Defect"
    Contamination = "Contamination"

    @property
    def is_microbe(self) -> bool:
        return self not in NON_COLONY_CLASSES

    @classmethod
    def parse(cls, name: str, aliases: Optional[Mapping[str, "ColonyClass"]] = None) -> "ColonyClass":

        if isinstance(name, ColonyClass):
            return name
        if not isinstance(name, str):
            raise UnknownClass(name)
        key = _alias_key(name)
        if aliases:
            for alias, target in aliases.items():
                if _alias_key(alias) == key:
                    return ColonyClass(target)
        try:
            return _CLASS_ALIASES[key]
        except KeyError:
            raise UnknownClass(name) from None


NON_COLONY_CLASSES = frozenset({ColonyClass.Defect, ColonyClass.Contamination})
MICROBE_CLASSES = tuple(c for c in ColonyClass if c not in NON_COLONY_CLASSES)

_CLASS_ALIASES: Dict[str, ColonyClass] = {}
for _c in ColonyClass:
    _CLASS_ALIASES[_alias_key(_c.value)] = _c
    _CLASS_ALIASES[_alias_key(_c.name)] = _c
for _alias, _c in {
    "staphylococcus aureus": ColonyClass.SAureus,
    "bacillus subtilis": ColonyClass.BSubtilis,
    "pseudomonas aeruginosa": ColonyClass.PAeruginosa,
    "escherichia coli": ColonyClass.EColi,
    "candida albicans": ColonyClass.CAlbicans,
    "defects": ColonyClass.Defect,
    "contaminations": ColonyClass.Contamination,
}.items():
    _CLASS_ALIASES[_alias_key(_alias)] = _c


class BackgroundCategory(str, Enum):
    Bright = "bright"
    Dark = "dark"
    Vague = "vague"
    LowerResolution = "lower-resolution"

    @classmethod
    def parse(cls, name: str) -> "BackgroundCategory":

        if isinstance(name, BackgroundCategory):
            return name
        if not isinstance(name, str):
            raise UnknownBackground(name)
        key = _alias_key(name)
        for b in cls:
            if key in (_alias_key(b.value), _alias_key(b.name)):
                return b
        raise UnknownBackground(name)


class CountabilityStatus(str, Enum):
    Empty = "empty"
    Countable = "countable"
    Uncountable = "uncountable"


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box: top-left corner ``(x, y)``, width ``w``, height ``h``."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):

        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise InvalidGeometry(f"non-finite box origin ({self.x}, {self.y})")
        if not (self.w > 0 and self.h > 0) or not (math.isfinite(self.w) and math.isfinite(self.h)):
            raise InvalidGeometry(f"box size must be positive, got {self.w}x{self.h}")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def center(self) -> Tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    def as_xywh(self) -> Tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)

    def contains(self, other: "BBox") -> bool:
        return (
            other.x >= self.x
            and other.y >= self.y
            and other.x2 <= self.x2
            and other.y2 <= self.y2
        )


@dataclass(frozen=True)
class Label:
    id: int
    cls: ColonyClass
    box: BBox
    extra: Dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class Detection:
    box: BBox
    cls: ColonyClass
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise InvalidThreshold(f"detection score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class SampleAnnotation:
    """One Petri-dish photo: background, inoculated species, count and boxes.

    ``colonies_number`` is -1 for uncountable plates. ``extra`` holds unknown
    top-level JSON keys kept by lenient parsing so they survive a rewrite.
    """

    sample_id: int
    background: BackgroundCategory
    classes: Tuple[ColonyClass, ...] = ()
    colonies_number: int = 0
    labels: Tuple[Label, ...] = ()
    extra: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        # accept plain strings and lists from callers building samples by hand
        object.__setattr__(self, "background", BackgroundCategory(self.background))
        object.__setattr__(self, "classes", tuple(ColonyClass(c) for c in self.classes))
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def microbe_labels(self) -> Tuple[Label, ...]:
        return tuple(lab for lab in self.labels if lab.cls.is_microbe)

    @property
    def status(self) -> CountabilityStatus:
        return countability(self)


def countability(sample: SampleAnnotation) -> CountabilityStatus:
    if sample.colonies_number == -1:
        return CountabilityStatus.Uncountable
    if sample.colonies_number == 0 and not sample.microbe_labels:
        return CountabilityStatus.Empty
    return CountabilityStatus.Countable
