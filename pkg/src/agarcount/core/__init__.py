from agarcount.core.agar_json import (
    load_annotation_dir,
    parse_agar,
    sample_from_dict,
    sample_to_dict,
    write_agar,
    write_annotation_dir,
)
from agarcount.core.coco import coco_document, to_coco, validate_coco
from agarcount.core.geometry import intersection, iou, iou_matrix, transform_box
from agarcount.core.types import (
    MICROBE_CLASSES,
    NON_COLONY_CLASSES,
    BackgroundCategory,
    BBox,
    ColonyClass,
    CountabilityStatus,
    Detection,
    Label,
    SampleAnnotation,
    countability,
)
