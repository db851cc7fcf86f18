"""Turning per-slice detections into ranked 3D lesion candidates.

Pipeline: per-slice Dice-driven merging of overlapping contours, then
repeated extraction of the highest-scoring remaining detection as a seed,
followed slice by slice upward and downward while adjacent detections are
correlated with the current chain end.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ContractError
from .metrics import overlap_dsc
from .rle import rle_encode
from .volume import Detection, Mask, Volume, tight_bbox


@dataclass(frozen=True)
class AssemblyConfig:
    nms_dsc_threshold: float = 0.5
    score_threshold: float = 0.7
    link_dsc_threshold: float = 0.41
    max_lesions: int = 5

    def __post_init__(self):
        for name in ("nms_dsc_threshold", "score_threshold", "link_dsc_threshold"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ContractError(f"{name} must lie in [0, 1], got {v}")
        if int(self.max_lesions) < 1:
            raise ContractError(f"max_lesions must be >= 1, got {self.max_lesions}")

    @classmethod
    def from_dict(cls, d: dict) -> "AssemblyConfig":
        names = {"nms_dsc_threshold", "score_threshold", "link_dsc_threshold", "max_lesions"}
        unknown = set(d) - names
        if unknown:
            raise ContractError(f"unknown assembly config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True, eq=False)
class Lesion3D:
    """One assembled lesion: contiguous per-slice masks keyed by slice index."""

    slices: dict
    score: float
    rank: int = 1
    constituent_scores: tuple = ()

    @property
    def z_range(self) -> tuple[int, int]:
        """Inclusive ``(first, last)`` slice indices."""
        zs = sorted(self.slices)
        return zs[0], zs[-1]

    @property
    def n_slices(self) -> int:
        return len(self.slices)

    def to_mask(self, grid: Volume) -> Mask:
        data = np.zeros(grid.dims, dtype=bool)
        for z, m in self.slices.items():
            data[:, :, z] = m
        return Mask.like(grid, data)

    def to_dict(self) -> dict:
        z0, z1 = self.z_range
        return {
            "rank": self.rank,
            "score": self.score,
            "slice_range": [z0, z1],
            "constituent_scores": list(self.constituent_scores),
            "slices": {str(z): rle_encode(self.slices[z]).to_dict() for z in sorted(self.slices)},
        }


@dataclass(frozen=True)
class ProstateSliceDecision:
    slice: int
    present: bool
    chosen: Optional[Detection] = None

    def __post_init__(self):
        if self.present != (self.chosen is not None):
            raise ContractError("present must be True exactly when a detection is chosen")


# ---------------------------------------------------------------------------
# Per-slice merging
# ---------------------------------------------------------------------------


def dsc_nms_slice(dets: Sequence[Detection], cfg: AssemblyConfig = AssemblyConfig()) -> list[Detection]:
    """Merge overlapping contours on one slice until no pair has DSC above the threshold.

    Each round merges the pair with the highest mask DSC (ties: higher summed
    score, then earlier input position). The merged detection takes the mask
    union and the larger score, and inherits the earlier input position.
    """
    if not dets:
        return []
    z = dets[0].slice
    shape = dets[0].shape
    for d in dets:
        if d.slice != z:
            raise ContractError(f"detections from slices {z} and {d.slice} passed to one NMS call")
        if d.shape != shape:
            raise ContractError("detections on one slice must share the image extent")

    # (input position, detection), kept sorted by position
    items = list(enumerate(dets))
    while len(items) > 1:
        best = None
        best_key = None
        for a in range(len(items)):
            pa, da = items[a]
            for b in range(a + 1, len(items)):
                pb, db = items[b]
                d = overlap_dsc(da.mask, db.mask)
                key = (d, da.score + db.score, -pa, -pb)
                if best_key is None or key > best_key:
                    best_key, best = key, (a, b)
        if best_key[0] <= cfg.nms_dsc_threshold:
            break
        a, b = best
        (pa, da), (_, db) = items[a], items[b]
        lead = da if da.score >= db.score else db
        merged = Detection(z, da.mask | db.mask, max(da.score, db.score), lead.label)
        items = [it for k, it in enumerate(items) if k not in (a, b)]
        items.append((pa, merged))
        items.sort(key=lambda it: it[0])
    return [d for _, d in items]


# ---------------------------------------------------------------------------
# Detection pool
# ---------------------------------------------------------------------------


class DetectionPool:
    """Per-slice detection lists plus the set of detections already used by a lesion.

    ``slices[z]`` is the (already merged) list for slice ``z``. Extraction
    mutates :attr:`consumed`; use :meth:`fresh` for an untouched copy.
    """

    def __init__(self, slices: dict[int, list[Detection]]):
        self.slices = {int(z): list(v) for z, v in slices.items() if v}
        self.consumed: set[tuple[int, int]] = set()

    @classmethod
    def from_detections(
        cls, dets: Iterable[Detection], cfg: AssemblyConfig = AssemblyConfig(), label: Optional[str] = "lesion"
    ) -> "DetectionPool":
        """Group by slice (keeping input order), optionally filter by label, and merge per slice."""
        grouped: dict[int, list[Detection]] = {}
        for d in dets:
            if label is None or d.label == label:
                grouped.setdefault(d.slice, []).append(d)
        return cls({z: dsc_nms_slice(v, cfg) for z, v in sorted(grouped.items())})

    def fresh(self) -> "DetectionPool":
        return DetectionPool(self.slices)

    def locate(self, det: Detection) -> tuple[int, int]:
        for i, d in enumerate(self.slices.get(det.slice, ())):
            if d is det:
                return det.slice, i
        raise ContractError("detection is not part of this pool")

    def available(self, z: int) -> list[Detection]:
        return [d for i, d in enumerate(self.slices.get(z, ())) if (z, i) not in self.consumed]

    def remaining(self) -> int:
        return sum(len(v) for v in self.slices.values()) - len(self.consumed)

    def __iter__(self):
        for z in sorted(self.slices):
            yield from self.slices[z]


# ---------------------------------------------------------------------------
# Cross-slice linking
# ---------------------------------------------------------------------------


def find_correlated(
    ref: Detection, candidates: Sequence[Detection], cfg: AssemblyConfig = AssemblyConfig()
) -> Optional[Detection]:
    """Best continuation of ``ref`` on an adjacent slice, or ``None``.

    The best-overlapping candidate (highest DSC with ``ref``, at least the
    link threshold; ties: higher score, then earlier position) is returned
    only if its score also reaches the score threshold.
    """
    best = None
    best_key = None
    for pos, c in enumerate(candidates):
        if abs(c.slice - ref.slice) != 1:
            raise ContractError(f"candidate on slice {c.slice} is not adjacent to slice {ref.slice}")
        d = overlap_dsc(ref.mask, c.mask)
        if d < cfg.link_dsc_threshold:
            continue
        key = (d, c.score, -pos)
        if best_key is None or key > best_key:
            best_key, best = key, c
    if best is None or best.score < cfg.score_threshold:
        return None
    return best


def assemble_lesion(seed: Detection, pool: DetectionPool, cfg: AssemblyConfig = AssemblyConfig()) -> Lesion3D:
    """Grow a lesion from ``seed`` upward then downward through adjacent slices.

    The most recently linked detection is the reference for the next step.
    Every linked detection, the seed included, is marked consumed in ``pool``.
    """
    key = pool.locate(seed)
    if key in pool.consumed:
        raise ContractError("seed detection was already consumed")
    pool.consumed.add(key)
    chain = {seed.slice: seed}
    for step in (1, -1):
        ref = seed
        while True:
            z = ref.slice + step
            if z < 0:
                break
            nxt = find_correlated(ref, pool.available(z), cfg)
            if nxt is None:
                break
            pool.consumed.add(pool.locate(nxt))
            chain[z] = nxt
            ref = nxt
    zs = sorted(chain)
    scores = tuple(chain[z].score for z in zs)
    return Lesion3D({z: chain[z].mask for z in zs}, max(scores), 1, scores)


def _next_seed(pool: DetectionPool) -> Optional[Detection]:
    best = None
    best_key = None
    for z in sorted(pool.slices):
        for i, d in enumerate(pool.slices[z]):
            if (z, i) in pool.consumed:
                continue
            key = (-d.score, z, i)
            if best_key is None or key < best_key:
                best_key, best = key, d
    return best


def extract_top_lesions(pool: DetectionPool, cfg: AssemblyConfig = AssemblyConfig()) -> list[Lesion3D]:
    """Up to ``cfg.max_lesions`` lesions, each seeded at the highest remaining score."""
    lesions = []
    for rank in range(1, cfg.max_lesions + 1):
        seed = _next_seed(pool)
        if seed is None:
            break
        lesions.append(replace(assemble_lesion(seed, pool, cfg), rank=rank))
    return lesions


def assemble_from_detections(
    dets: Iterable[Detection], cfg: AssemblyConfig = AssemblyConfig(), prostate: Optional[Mask] = None
) -> list[Lesion3D]:
    """Full lesion pipeline on raw detections: label filter, optional prostate gate, merge, extract."""
    dets = [d for d in dets if d.label == "lesion"]
    if prostate is not None:
        dets = [d for d in dets if d.slice < prostate.nz and (d.mask & prostate.data[:, :, d.slice]).any()]
    return extract_top_lesions(DetectionPool.from_detections(dets, cfg), cfg)


def lesions_to_label_volume(lesions: Sequence[Lesion3D], grid: Volume) -> Volume:
    """Voxel value = lesion rank. Lesions never share a detection but may still overlap in space;
    the better (lower) rank wins."""
    data = np.zeros(grid.dims, dtype=np.float64)
    for les in sorted(lesions, key=lambda l: -l.rank):
        for z, m in les.slices.items():
            data[:, :, z][m] = les.rank
    return Volume(data, grid.spacing, grid.origin)


# ---------------------------------------------------------------------------
# Prostate slices
# ---------------------------------------------------------------------------


def group_by_slice(dets: Iterable[Detection], nz: int, label: Optional[str] = None) -> list[list[Detection]]:
    out: list[list[Detection]] = [[] for _ in range(nz)]
    for d in dets:
        if label is not None and d.label != label:
            continue
        if d.slice >= nz:
            raise ContractError(f"detection on slice {d.slice} outside volume with {nz} slices")
        out[d.slice].append(d)
    return out


def select_prostate_slices(per_slice_dets: Sequence[Sequence[Detection]]) -> list[ProstateSliceDecision]:
    """Per slice, keep the single highest-scoring detection (ties: earliest)."""
    decisions = []
    for z, dets in enumerate(per_slice_dets):
        chosen = None
        for d in dets:
            if chosen is None or d.score > chosen.score:
                chosen = d
        decisions.append(ProstateSliceDecision(z, chosen is not None, chosen))
    return decisions


def decisions_to_mask(decisions: Sequence[ProstateSliceDecision], grid: Volume) -> Mask:
    data = np.zeros(grid.dims, dtype=bool)
    for dec in decisions:
        if dec.present:
            data[:, :, dec.slice] = dec.chosen.mask
    return Mask.like(grid, data)


def estimate_mean_prostate_box(masks: Sequence[Mask]) -> tuple[float, tuple[float, float]]:
    """Mean enclosing-square side and mean box centre over every prostate-bearing slice.

    Boxes span pixel edges, so a box covering columns ``x0 .. x1-1`` has
    centre ``(x0 + x1) / 2``.
    """
    sides, cxs, cys = [], [], []
    for m in masks:
        for z in range(m.nz):
            plane = m.data[:, :, z]
            if not plane.any():
                continue
            x0, y0, x1, y1 = tight_bbox(plane)
            sides.append(max(x1 - x0, y1 - y0))
            cxs.append((x0 + x1) / 2)
            cys.append((y0 + y1) / 2)
    if not sides:
        raise ContractError("no slice contains prostate")
    return float(np.mean(sides)), (float(np.mean(cxs)), float(np.mean(cys)))


def mean_box_region(side: float, center: tuple[float, float], shape: tuple[int, int]) -> np.ndarray:
    """Square region used to label slices without prostate as the negative class."""
    cx, cy = center
    half = side / 2
    xs = (np.arange(shape[0]) + 0.5)[:, None]
    ys = (np.arange(shape[1]) + 0.5)[None, :]
    return (np.abs(xs - cx) <= half) & (np.abs(ys - cy) <= half)
