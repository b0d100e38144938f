"""Model-agnostic attribution maps for document image classifiers.

The pipeline segments a binarized page into background grid patches and
dilation-consolidated foreground components, ablates each group against a
polarity-aware baseline, and folds the area-normalized per-kernel scores
into a single signed attribution map. Occlusion and random baselines plus
a faithfulness metric suite (AOPC/ABPC, sensitivity, infidelity,
continuity) round out the toolkit.
"""

from .attribution import (
    MODE_FG,
    MODE_FG_BG,
    AttributionMap,
    GroupScore,
    ablate_group,
    attribute,
    attribute_mask,
    baseline_for,
    occlusion_map,
    random_map,
)
from .estimators import (
    DocumentSegmenter,
    DocXplainAttributor,
    OcclusionAttributor,
    RandomAttributor,
)
from .imaging import (
    load_image,
    morph_dilate,
    morph_open,
    otsu_binarize,
    resize_nearest,
    to_grayscale,
)
from .metrics import (
    LERF,
    MORF,
    MetricReport,
    PerturbationCurve,
    abpc,
    aopc_curve,
    continuity,
    infidelity,
    sensitivity,
)
from .model import (
    ClassifierHandle,
    ConstantClassifier,
    MultiRegionLinearClassifier,
    OnnxClassifier,
    ProtocolError,
    RegionDensityClassifier,
    SubprocessClassifier,
    synthetic_classifier,
)
from .segmentation import (
    KernelConfig,
    SegmentationMask,
    build_masks,
    combine_masks,
    default_kernels,
    postprocess,
    segment_background,
    segment_foreground,
)

__version__ = "0.1.0"

__all__ = [
    "AttributionMap",
    "ClassifierHandle",
    "ConstantClassifier",
    "DocumentSegmenter",
    "DocXplainAttributor",
    "GroupScore",
    "KernelConfig",
    "LERF",
    "MORF",
    "MetricReport",
    "MODE_FG",
    "MODE_FG_BG",
    "MultiRegionLinearClassifier",
    "OcclusionAttributor",
    "OnnxClassifier",
    "PerturbationCurve",
    "ProtocolError",
    "RandomAttributor",
    "RegionDensityClassifier",
    "SegmentationMask",
    "SubprocessClassifier",
    "abpc",
    "ablate_group",
    "aopc_curve",
    "attribute",
    "attribute_mask",
    "baseline_for",
    "build_masks",
    "combine_masks",
    "continuity",
    "default_kernels",
    "infidelity",
    "load_image",
    "morph_dilate",
    "morph_open",
    "occlusion_map",
    "otsu_binarize",
    "postprocess",
    "random_map",
    "resize_nearest",
    "segment_background",
    "segment_foreground",
    "sensitivity",
    "synthetic_classifier",
    "to_grayscale",
]
