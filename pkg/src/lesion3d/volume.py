"""Core data model: volumes, masks, per-slice detections and case counts.

Arrays are indexed ``[x, y, z]`` (shape ``(nx, ny, nz)``); a slice is the
``[x, y]`` plane. On disk and in run-length encodings the x index varies
fastest, which for these arrays is Fortran order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ContractError, GridMismatchError

GRID_TOL_MM = 1e-6


def _triple(values, name: str) -> tuple[float, float, float]:
    out = tuple(float(v) for v in values)
    if len(out) != 3:
        raise ContractError(f"{name} must have 3 components, got {len(out)}")
    if not all(np.isfinite(out)):
        raise ContractError(f"{name} must be finite, got {out}")
    return out  # type: ignore[return-value]


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Volume:
    """Scalar 3D grid with physical spacing (mm) and origin (mm)."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ContractError(f"volume data must be 3D, got shape {data.shape}")
        if min(data.shape) < 1:
            raise ContractError(f"volume dims must be >= 1, got {data.shape}")
        spacing = _triple(self.spacing, "spacing")
        if min(spacing) <= 0:
            raise ContractError(f"spacing must be > 0, got {spacing}")
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", _triple(self.origin, "origin"))
        object.__setattr__(self, "data", _frozen(self._coerce(data)))

    def _coerce(self, data: np.ndarray) -> np.ndarray:
        return data.astype(np.float64, copy=False)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)  # type: ignore[return-value]

    @property
    def nz(self) -> int:
        return int(self.data.shape[2])

    def physical(self, i, j, k):
        """Physical coordinates (mm) of voxel indices; accepts arrays."""
        ox, oy, oz = self.origin
        sx, sy, sz = self.spacing
        return (ox + np.asarray(i) * sx, oy + np.asarray(j) * sy, oz + np.asarray(k) * sz)

    def same_grid(self, other: "Volume", tol: float = GRID_TOL_MM) -> bool:
        return (
            self.dims == other.dims
            and np.allclose(self.spacing, other.spacing, rtol=0, atol=tol)
            and np.allclose(self.origin, other.origin, rtol=0, atol=tol)
        )

    def with_data(self, data: np.ndarray) -> "Volume":
        return type(self)(data, self.spacing, self.origin)

    def __eq__(self, other):
        if not isinstance(other, Volume):
            return NotImplemented
        return (
            self.dims == other.dims
            and self.spacing == other.spacing
            and self.origin == other.origin
            and self.data.dtype == other.data.dtype
            and self.data.tobytes() == other.data.tobytes()
        )

    __hash__ = None  # type: ignore[assignment]


class Mask(Volume):
    """Binary volume; data stored as ``bool``."""

    def _coerce(self, data: np.ndarray) -> np.ndarray:
        if data.dtype != np.bool_:
            if not np.isin(data, (0, 1)).all():
                raise ContractError("mask values must be 0 or 1")
            data = data.astype(np.bool_)
        return data

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.data))

    @classmethod
    def like(cls, grid: Volume, data=None) -> "Mask":
        if data is None:
            data = np.zeros(grid.dims, dtype=bool)
        return cls(data, grid.spacing, grid.origin)


def check_same_grid(a: Volume, b: Volume) -> None:
    """Raise :class:`GridMismatchError` unless ``a`` and ``b`` share dims, spacing and origin."""
    if not a.same_grid(b):
        raise GridMismatchError(
            f"grid mismatch: dims {a.dims} vs {b.dims}, spacing {a.spacing} vs {b.spacing}, "
            f"origin {a.origin} vs {b.origin}"
        )


def extract_slice(v: Volume, z: int) -> np.ndarray:
    """Copy of the x-y plane at index ``z``, shape ``(nx, ny)``."""
    nz = v.nz
    if not isinstance(z, (int, np.integer)) or not 0 <= z < nz:
        raise IndexError(f"slice index {z} out of range [0, {nz})")
    return v.data[:, :, int(z)].copy()


def stack_slices(slices: Sequence[np.ndarray], like: Volume | None = None, mask: bool = False):
    """Reassemble 2D planes into a Volume (or Mask) along z."""
    data = np.stack([np.asarray(s) for s in slices], axis=2)
    cls = Mask if mask else Volume
    if like is None:
        return cls(data)
    return cls(data, like.spacing, like.origin)


def tight_bbox(mask2d: np.ndarray) -> tuple[int, int, int, int]:
    """``(x_min, y_min, x_max, y_max)``, max bounds exclusive."""
    xs = np.flatnonzero(mask2d.any(axis=1))
    ys = np.flatnonzero(mask2d.any(axis=0))
    if xs.size == 0:
        raise ContractError("bounding box of an empty mask is undefined")
    return int(xs[0]), int(ys[0]), int(xs[-1]) + 1, int(ys[-1]) + 1


@dataclass(frozen=True, eq=False)
class Detection:
    """One detector output on one slice.

    The bounding box is always derived from the mask foreground.
    """

    slice: int
    mask: np.ndarray
    score: float
    label: str = "lesion"
    bbox: tuple[int, int, int, int] = field(init=False)

    def __post_init__(self):
        m = np.asarray(self.mask)
        if m.ndim != 2:
            raise ContractError(f"detection mask must be 2D, got shape {m.shape}")
        if m.dtype != np.bool_:
            if not np.isin(m, (0, 1)).all():
                raise ContractError("detection mask values must be 0 or 1")
            m = m.astype(np.bool_)
        if not m.any():
            raise ContractError("detection mask has no foreground pixel")
        score = float(self.score)
        if not 0.0 <= score <= 1.0:
            raise ContractError(f"score must lie in [0, 1], got {score}")
        if int(self.slice) < 0:
            raise ContractError(f"slice index must be >= 0, got {self.slice}")
        object.__setattr__(self, "slice", int(self.slice))
        object.__setattr__(self, "score", score)
        object.__setattr__(self, "mask", _frozen(m))
        object.__setattr__(self, "bbox", tight_bbox(m))

    @property
    def area(self) -> int:
        return int(np.count_nonzero(self.mask))

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape  # type: ignore[return-value]


@dataclass(frozen=True)
class CaseCounts:
    dtp: int
    dtn: int
    tp: int
    tn: int

    def __post_init__(self):
        for name in ("dtp", "dtn", "tp", "tn"):
            if getattr(self, name) < 0:
                raise ContractError(f"{name} must be non-negative")
        if self.dtp > self.tp or self.dtn > self.tn:
            raise ContractError(f"detected counts exceed totals: {self}")

    def __add__(self, other: "CaseCounts") -> "CaseCounts":
        return CaseCounts(
            self.dtp + other.dtp, self.dtn + other.dtn, self.tp + other.tp, self.tn + other.tn
        )

    def to_dict(self) -> dict:
        return {"dtp": self.dtp, "dtn": self.dtn, "tp": self.tp, "tn": self.tn}
