"""Volumetric lesion assembly from per-slice detections, segmentation metrics,
and MRI slice preprocessing / augmentation."""

from .assembly import (
    AssemblyConfig,
    DetectionPool,
    Lesion3D,
    assemble_from_detections,
    assemble_lesion,
    dsc_nms_slice,
    estimate_mean_prostate_box,
    extract_top_lesions,
    find_correlated,
    select_prostate_slices,
)
from .errors import (
    ContractError,
    GridMismatchError,
    IntegrityError,
    Lesion3DError,
    ParseError,
    UndefinedMetricError,
    UnsupportedRankError,
)
from .metaimage import load_mask, load_volume, save_volume
from .metrics import (
    MetricsReport,
    agreement_rate,
    directed_hd_percentile,
    dsc,
    hd95,
    pixel_sens_spec,
    slice_sens_spec,
    surface_points,
)
from .rle import RleMask, rle_decode, rle_encode
from .volume import CaseCounts, Detection, Mask, Volume, extract_slice

__version__ = "0.1.0"

__all__ = [
    "agreement_rate",
    "assemble_from_detections",
    "assemble_lesion",
    "AssemblyConfig",
    "CaseCounts",
    "ContractError",
    "Detection",
    "DetectionPool",
    "directed_hd_percentile",
    "dsc",
    "dsc_nms_slice",
    "estimate_mean_prostate_box",
    "extract_slice",
    "extract_top_lesions",
    "find_correlated",
    "GridMismatchError",
    "hd95",
    "IntegrityError",
    "Lesion3D",
    "Lesion3DError",
    "load_mask",
    "load_volume",
    "Mask",
    "MetricsReport",
    "ParseError",
    "pixel_sens_spec",
    "rle_decode",
    "rle_encode",
    "RleMask",
    "save_volume",
    "select_prostate_slices",
    "slice_sens_spec",
    "surface_points",
    "UndefinedMetricError",
    "UnsupportedRankError",
    "Volume",
]
