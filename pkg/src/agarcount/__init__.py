"""Colony detection and counting pipeline tooling for AGAR-style plate photos."""

from agarcount.core import (
    MICROBE_CLASSES,
    BackgroundCategory,
    BBox,
    ColonyClass,
    CountabilityStatus,
    Detection,
    Label,
    SampleAnnotation,
    iou,
    parse_agar,
    to_coco,
    transform_box,
    write_agar,
)
from agarcount.metrics import count_report, map_report
from agarcount.postprocess import (
    FilterConfig,
    NmsConfig,
    NmsMethod,
    Priority,
    WindowDetections,
    apply_filters,
    area_priority_soft_nms,
    merge_windows,
    predict_counts,
)
from agarcount.tiler import ImageExtent, TilingPlan, plan_test_windows, plan_train_patches
from agarcount.tuner import GridSpec, ThresholdPair, fit_dual_policy, grid_search

__version__ = "0.1.0"
