"""Reading and writing per-sample AGAR annotation JSON files."""

from __future__ import annotations

import json
import warnings
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Tuple

from agarcount.core.types import BackgroundCategory, BBox, ColonyClass, Label, SampleAnnotation
from agarcount.errors import (
    AgarError,
    CountMismatch,
    CountMismatchWarning,
    DuplicateLabelId,
    MalformedJson,
    MissingField,
    UnknownField,
)

SAMPLE_KEYS = ("background", "classes", "colonies_number", "labels", "sample_id")
LABEL_KEYS = ("id", "class", "height", "width", "x", "y")


def _number(value, name, context):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise MalformedJson(f"field {name!r} in {context} must be a number, got {value!r}")
    return value


def _integer(value, name, context):
    if isinstance(value, float) and value.is_integer():
        value = int(value)
    if isinstance(value, bool) or not isinstance(value, int):
        raise MalformedJson(f"field {name!r} in {context} must be an integer, got {value!r}")
    return value


def _split_extra(obj: Mapping[str, Any], known, strict: bool) -> Dict[str, Any]:
    extra = {k: v for k, v in obj.items() if k not in known}
    if extra and strict:
        raise UnknownField(sorted(extra)[0])
    return extra


def _label_from_dict(obj, strict, aliases, context) -> Label:
    if not isinstance(obj, dict):
        raise MalformedJson(f"label entry in {context} is not an object")
    for key in LABEL_KEYS:
        if key not in obj:
            raise MissingField(key, f"label of {context}")
    lid = _integer(obj["id"], "id", context)
    box = BBox(
        float(_number(obj["x"], "x", context)),
        float(_number(obj["y"], "y", context)),
        float(_number(obj["width"], "width", context)),
        float(_number(obj["height"], "height", context)),
    )
    return Label(
        id=lid,
        cls=ColonyClass.parse(obj["class"], aliases),
        box=box,
        extra=_split_extra(obj, LABEL_KEYS, strict),
    )


def sample_from_dict(
    obj: Mapping[str, Any],
    strict: bool = False,
    aliases: Optional[Mapping[str, ColonyClass]] = None,
) -> SampleAnnotation:
    if not isinstance(obj, dict):
        raise MalformedJson("annotation root must be a JSON object")
    for key in SAMPLE_KEYS:
        if key not in obj:
            raise MissingField(key)
    sample_id = _integer(obj["sample_id"], "sample_id", "annotation")
    context = f"sample {sample_id}"
    if not isinstance(obj["classes"], list):
        raise MalformedJson(f"'classes' in {context} must be a list")
    if not isinstance(obj["labels"], list):
        raise MalformedJson(f"'labels' in {context} must be a list")
    colonies_number = _integer(obj["colonies_number"], "colonies_number", context)
    if colonies_number < -1:
        raise CountMismatch(f"{context}: colonies_number {colonies_number} is below -1")

    labels = tuple(_label_from_dict(lab, strict, aliases, context) for lab in obj["labels"])
    seen = set()
    for lab in labels:
        if lab.id in seen:
            raise DuplicateLabelId(f"{context}: label id {lab.id} appears twice")
        seen.add(lab.id)

    sample = SampleAnnotation(
        sample_id=sample_id,
        background=BackgroundCategory.parse(obj["background"]),
        classes=tuple(ColonyClass.parse(c, aliases) for c in obj["classes"]),
        colonies_number=colonies_number,
        labels=labels,
        extra=_split_extra(obj, SAMPLE_KEYS, strict),
    )
    n_microbes = len(sample.microbe_labels)
    if colonies_number >= 0 and colonies_number != n_microbes:
        msg = f"{context}: colonies_number is {colonies_number} but {n_microbes} microbe labels are present"
        if strict:
            raise CountMismatch(msg)
        warnings.warn(msg, CountMismatchWarning, stacklevel=3)
    return sample


def parse_agar(
    json_text: str,
    strict: bool = False,
    aliases: Optional[Mapping[str, ColonyClass]] = None,
) -> SampleAnnotation:
    """Parse one annotation file.

    In strict mode unknown keys and a ``colonies_number`` that disagrees with
    the microbe labels raise; in lenient mode unknown keys are kept in
    ``extra`` and the count mismatch becomes a :class:`CountMismatchWarning`.
    Class names are matched case-insensitively, ignoring dots, spaces,
    underscores and dashes; ``aliases`` adds further spellings.
    """
    try:
        obj = json.loads(json_text)
    except (json.JSONDecodeError, TypeError) as exc:
        raise MalformedJson(str(exc)) from None
    return sample_from_dict(obj, strict=strict, aliases=aliases)


def _plain_number(v: float):
    return int(v) if float(v).is_integer() else float(v)


def sample_to_dict(sample: SampleAnnotation) -> Dict[str, Any]:
    labels = []
    for lab in sample.labels:
        entry = dict(lab.extra)
        entry.update(
            {
                "id": lab.id,
                "class": lab.cls.value,
                "x": _plain_number(lab.box.x),
                "y": _plain_number(lab.box.y),
                "width": _plain_number(lab.box.w),
                "height": _plain_number(lab.box.h),
            }
        )
        labels.append(entry)
    out = dict(sample.extra)
    out.update(
        {
            "background": sample.background.value,
            "classes": [c.value for c in sample.classes],
            "colonies_number": sample.colonies_number,
            "labels": labels,
            "sample_id": sample.sample_id,
        }
    )
    return out


def write_agar(sample: SampleAnnotation) -> str:
    return json.dumps(sample_to_dict(sample), sort_keys=True, indent=4) + "\n"


def load_annotation_dir(
    path, strict: bool = False, aliases=None
) -> Tuple[List[SampleAnnotation], List[Tuple[str, AgarError]]]:
    """Parse every ``*.json`` file below ``path``.

    Returns the parsed samples (sorted by sample id) and a list of
    ``(filename, error)`` pairs for files that failed.
    """
    samples, failures = [], []
    for f in sorted(Path(path).glob("*.json")):
        try:
            samples.append(parse_agar(f.read_text(encoding="utf-8"), strict=strict, aliases=aliases))
        except AgarError as exc:
            failures.append((f.name, exc))
    samples.sort(key=lambda s: s.sample_id)
    return samples, failures


def write_annotation_dir(samples: Iterable[SampleAnnotation], path) -> List[Path]:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for s in samples:
        f = out / f"{s.sample_id}.json"
        f.write_text(write_agar(s), encoding="utf-8")
        written.append(f)
    return written
