"""Segmentation metrics: Dice, 95th-percentile Hausdorff, sensitivity/specificity, agreement."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import ContractError, UndefinedMetricError
from .volume import CaseCounts, Mask, check_same_grid

FACE_NEIGHBOURS = ndimage.generate_binary_structure(3, 1)
AGREEMENT_DSC = 0.2


@dataclass(frozen=True, eq=False)
class SurfacePointSet:
    """Boundary voxel centres in physical coordinates, shape ``(n, 3)`` in mm."""

    points: np.ndarray

    def __len__(self):
        return int(self.points.shape[0])


def overlap_dsc(a: np.ndarray, b: np.ndarray) -> float:
    """Dice of two boolean arrays of equal shape; raises if both are empty."""
    na = int(np.count_nonzero(a))
    nb = int(np.count_nonzero(b))
    if na + nb == 0:
        raise UndefinedMetricError("DSC is undefined when both masks are empty")
    inter = int(np.count_nonzero(np.logical_and(a, b)))
    return 2.0 * inter / (na + nb)


def dsc(y_true: Mask, y_pred: Mask) -> float:
    check_same_grid(y_true, y_pred)
    return overlap_dsc(y_true.data, y_pred.data)


def surface_voxels(data: np.ndarray) -> np.ndarray:
    """Foreground voxels with at least one 6-neighbour that is background or outside the grid."""
    data = np.asarray(data, dtype=bool)
    eroded = ndimage.binary_erosion(data, structure=FACE_NEIGHBOURS, border_value=0)
    return data & ~eroded


def surface_points(m: Mask) -> SurfacePointSet:
    if m.count == 0:
        raise UndefinedMetricError("surface of an empty mask is undefined")
    idx = np.argwhere(surface_voxels(m.data)).astype(np.float64)
    pts = np.asarray(m.origin) + idx * np.asarray(m.spacing)
    return SurfacePointSet(pts)


def nearest_rank_index(pct: float, n: int) -> int:
    """0-based index of the nearest-rank percentile among ``n`` sorted values."""
    # exact rational arithmetic: 0.95 * 20 must give 19, not 19.000000000000004
    k = math.ceil(Fraction(pct) * n / 100)
    return min(max(k, 1), n) - 1


def directed_hd_percentile(a: SurfacePointSet, b: SurfacePointSet, pct: float = 95.0) -> float:
    """Nearest-rank ``pct`` percentile over ``a`` of the distance to the closest point of ``b``.

    ``pct=100`` gives the directed Hausdorff distance.
    """
    if len(a) == 0 or len(b) == 0:
        raise UndefinedMetricError("Hausdorff distance needs two non-empty point sets")
    if not 0 < pct <= 100:
        raise ContractError(f"percentile must lie in (0, 100], got {pct}")
    _, nearest = cKDTree(b.points).query(a.points, k=1)
    # recompute with the plain Euclidean formula so results match the all-pairs reference
    diff = a.points - b.points[nearest]
    d = np.sort(np.sqrt(np.sum(diff * diff, axis=1)))
    return float(d[nearest_rank_index(pct, d.size)])


def hd95(y_true: Mask, y_pred: Mask, symmetric: bool = True, pct: float = 95.0) -> float:
    """95th-percentile Hausdorff distance in mm.

    The directed form measures truth surface to prediction surface; the
    symmetric form is the larger of both directions.
    """
    check_same_grid(y_true, y_pred)
    if y_true.count == 0 or y_pred.count == 0:
        raise UndefinedMetricError("HD95 is undefined for an empty mask")
    a = surface_points(y_true)
    b = surface_points(y_pred)
    forward = directed_hd_percentile(a, b, pct)
    if not symmetric:
        return forward
    return max(forward, directed_hd_percentile(b, a, pct))


def _ratio(num: int, den: int) -> Optional[float]:
    return num / den if den > 0 else None


def slice_sens_spec(truth: Mask, per_slice_detected: Sequence[bool]):
    """Slice-level sensitivity/specificity; ``None`` where the denominator is zero."""
    detected = np.asarray(per_slice_detected, dtype=bool)
    if detected.shape != (truth.nz,):
        raise ContractError(f"expected {truth.nz} per-slice flags, got {detected.shape}")
    present = truth.data.any(axis=(0, 1))
    tp = int(present.sum())
    tn = truth.nz - tp
    dtp = int(np.count_nonzero(detected & present))
    dtn = int(np.count_nonzero(~detected & ~present))
    return _ratio(dtp, tp), _ratio(dtn, tn), CaseCounts(dtp, dtn, tp, tn)


def pixel_sens_spec(truth: Mask, pred: Mask, prostate: Mask):
    """Voxel-level sensitivity/specificity counted inside ``prostate`` only."""
    check_same_grid(truth, pred)
    check_same_grid(truth, prostate)
    if prostate.count == 0:
        raise ContractError("prostate mask is empty")
    inside = prostate.data
    t = truth.data & inside
    nt = ~truth.data & inside
    tp = int(np.count_nonzero(t))
    tn = int(np.count_nonzero(nt))
    dtp = int(np.count_nonzero(pred.data & t))
    dtn = int(np.count_nonzero(~pred.data & nt))
    return _ratio(dtp, tp), _ratio(dtn, tn), CaseCounts(dtp, dtn, tp, tn)


def agreement_rate(gt_lesions: Sequence[Mask], pred_lesions: Sequence[Mask], threshold: float = AGREEMENT_DSC):
    """Fraction of ground-truth lesions matched one-to-one by a prediction with DSC > ``threshold``.

    Pairs are accepted greedily in order of decreasing DSC (ties: lower
    ground-truth index, then lower prediction index). Returns the rate and
    the accepted ``(gt_index, pred_index, dsc)`` triples.
    """
    if len(gt_lesions) == 0:
        raise UndefinedMetricError("agreement is undefined without ground-truth lesions")
    for m in list(gt_lesions[1:]) + list(pred_lesions):
        check_same_grid(gt_lesions[0], m)
    pairs = []
    for gi, g in enumerate(gt_lesions):
        ng = g.count
        for pi, p in enumerate(pred_lesions):
            denom = ng + p.count
            if denom == 0:
                continue
            inter = int(np.count_nonzero(g.data & p.data))
            if inter == 0:
                continue
            pairs.append((2.0 * inter / denom, gi, pi))
    pairs.sort(key=lambda t: (-t[0], t[1], t[2]))
    used_gt, used_pred, matched = set(), set(), []
    for d, gi, pi in pairs:
        if d <= threshold:
            break
        if gi in used_gt or pi in used_pred:
            continue
        used_gt.add(gi)
        used_pred.add(pi)
        matched.append((gi, pi, d))
    return len(used_gt) / len(gt_lesions), matched


def _sig6(x):
    if x is None:
        return None
    return float(f"{x:.6g}")


@dataclass
class MetricsReport:
    """All metrics for one case in one evaluation mode."""

    mode: str
    dsc: Optional[float]
    counts: CaseCounts
    hd95_mm: Optional[float] = None
    hd95_symmetric: bool = True
    sensitivity: Optional[float] = None
    specificity: Optional[float] = None
    agreement: Optional[float] = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in ("prostate-slice", "lesion-pixel"):
            raise ContractError(f"unknown report mode {self.mode!r}")
        for name in ("dsc", "sensitivity", "specificity", "agreement"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ContractError(f"{name} out of range: {v}")
        if self.hd95_mm is not None and self.hd95_mm < 0:
            raise ContractError(f"hd95_mm must be >= 0, got {self.hd95_mm}")

    def to_dict(self) -> dict:
        out = {
            "dsc": _sig6(self.dsc),
            "hd95_mm": _sig6(self.hd95_mm),
            "hd95_symmetric": bool(self.hd95_symmetric),
            "sensitivity": _sig6(self.sensitivity),
            "specificity": _sig6(self.specificity),
            "agreement": _sig6(self.agreement),
            "counts": self.counts.to_dict(),
            "mode": self.mode,
        }
        out.update(self.extra)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        known = {"dsc", "hd95_mm", "hd95_symmetric", "sensitivity", "specificity", "agreement", "counts", "mode"}
        return cls(
            mode=d["mode"],
            dsc=d.get("dsc"),
            counts=CaseCounts(**d["counts"]),
            hd95_mm=d.get("hd95_mm"),
            hd95_symmetric=d.get("hd95_symmetric", True),
            sensitivity=d.get("sensitivity"),
            specificity=d.get("specificity"),
            agreement=d.get("agreement"),
            extra={k: v for k, v in d.items() if k not in known},
        )
