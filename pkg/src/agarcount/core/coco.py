"""COCO-style export of AGAR annotations."""

from __future__ import annotations

import json
from typing import Any, Dict, Mapping, Optional, Sequence

from agarcount.core.types import ColonyClass, SampleAnnotation
from agarcount.errors import DuplicateSampleId

CATEGORY_IDS: Dict[ColonyClass, int] = {c: i + 1 for i, c in enumerate(ColonyClass)}

COCO_SCHEMA: Dict[str, Any] = {
    "type": "object",
    "required": ["images", "annotations", "categories"],
    "properties": {
        "images": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "file_name", "background"],
                "properties": {
                    "id": {"type": "integer"},
                    "file_name": {"type": "string"},
                    "background": {"enum": ["bright", "dark", "vague", "lower-resolution"]},
                    "width": {"type": "integer", "exclusiveMinimum": 0},
                    "height": {"type": "integer", "exclusiveMinimum": 0},
                },
            },
        },
        "annotations": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "image_id", "category_id", "bbox", "area", "iscrowd"],
                "properties": {
                    "id": {"type": "integer"},
                    "image_id": {"type": "integer"},
                    "category_id": {"type": "integer", "minimum": 1, "maximum": 7},
                    "bbox": {
                        "type": "array",
                        "items": {"type": "number"},
                        "minItems": 4,
                        "maxItems": 4,
                    },
                    "area": {"type": "number", "exclusiveMinimum": 0},
                    "iscrowd": {"enum": [0, 1]},
                },
            },
        },
        "categories": {
            "type": "array",
            "minItems": 7,
            "maxItems": 7,
            "items": {
                "type": "object",
                "required": ["id", "name", "supercategory"],
                "properties": {
                    "id": {"type": "integer"},
                    "name": {"type": "string"},
                    "supercategory": {"type": "string"},
                },
            },
        },
    },
}


def _num(v):
    return int(v) if float(v).is_integer() else float(v)


def coco_document(
    samples: Sequence[SampleAnnotation],
    extents: Optional[Mapping[int, tuple]] = None,
    file_suffix: str = ".jpg",
) -> Dict[str, Any]:
    """Build the COCO dictionary.

    Each image record carries the sample's ``background`` and
    ``colonies_number``. ``extents`` optionally maps sample id to
    ``(width, height)``; without it images have no size fields.
    """
    seen = set()
    for s in samples:
        if s.sample_id in seen:
            raise DuplicateSampleId(f"sample_id {s.sample_id} appears more than once")
        seen.add(s.sample_id)

    images, annotations = [], []
    ann_id = 1
    for s in sorted(samples, key=lambda s: s.sample_id):
        image = {
            "id": s.sample_id,
            "file_name": f"{s.sample_id}{file_suffix}",
            "background": s.background.value,
            "colonies_number": s.colonies_number,
        }
        if extents and s.sample_id in extents:
            image["width"], image["height"] = (int(v) for v in extents[s.sample_id])
        images.append(image)
        for lab in s.labels:
            b = lab.box
            annotations.append(
                {
                    "id": ann_id,
                    "image_id": s.sample_id,
                    "category_id": CATEGORY_IDS[lab.cls],
                    "bbox": [_num(b.x), _num(b.y), _num(b.w), _num(b.h)],
                    "area": _num(b.w * b.h),
                    "iscrowd": 0,
                    "agar_label_id": lab.id,
                }
            )
            ann_id += 1
    categories = [
        {
            "id": CATEGORY_IDS[c],
            "name": c.value,
            "supercategory": "microbe" if c.is_microbe else "non-colony",
        }
        for c in ColonyClass
    ]
    return {"images": images, "annotations": annotations, "categories": categories}


def to_coco(samples: Sequence[SampleAnnotation], extents=None) -> str:
    return json.dumps(coco_document(samples, extents), sort_keys=True, indent=2) + "\n"


def validate_coco(doc) -> None:
    """Raise ``jsonschema.ValidationError`` if ``doc`` is not a well-formed export."""
    import jsonschema

    if isinstance(doc, str):
        doc = json.loads(doc)
    jsonschema.validate(doc, COCO_SCHEMA)
    image_ids = {im["id"] for im in doc["images"]}
    if len(image_ids) != len(doc["images"]):
        raise jsonschema.ValidationError("duplicate image ids")
    ann_ids = [a["id"] for a in doc["annotations"]]
    if len(set(ann_ids)) != len(ann_ids):
        raise jsonschema.ValidationError("duplicate annotation ids")
    for a in doc["annotations"]:
        if a["image_id"] not in image_ids:
            raise jsonschema.ValidationError(f"annotation {a['id']} references unknown image")
