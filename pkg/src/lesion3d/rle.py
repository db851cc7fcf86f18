"""Run-length encoding of 2D binary masks.

Runs alternate background/foreground starting with background, in row-major
order with x varying fastest (a row is one value of y). A mask that starts
with foreground therefore has a leading zero-length run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, IntegrityError


@dataclass(frozen=True)
class RleMask:
    width: int
    height: int
    runs: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "runs", tuple(int(r) for r in self.runs))
        if self.width < 1 or self.height < 1:
            raise ContractError(f"RLE extent must be positive, got {self.width}x{self.height}")
        if any(r < 0 for r in self.runs):
            raise IntegrityError("negative run length")

    def to_dict(self) -> dict:
        return {"width": self.width, "height": self.height, "runs": list(self.runs)}

    @classmethod
    def from_dict(cls, d: dict) -> "RleMask":
        return cls(int(d["width"]), int(d["height"]), tuple(d["runs"]))


def rle_encode(mask2d: np.ndarray) -> RleMask:
    """Canonical RLE of a ``(width, height)``-shaped binary array indexed ``[x, y]``."""
    m = np.asarray(mask2d)
    if m.ndim != 2:
        raise ContractError(f"expected a 2D mask, got shape {m.shape}")
    if m.dtype != np.bool_ and not np.isin(m, (0, 1)).all():
        raise ContractError("mask values must be 0 or 1")
    flat = m.astype(np.int8).ravel(order="F")
    # positions where the value changes, plus both ends
    change = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0] == 1:
        runs.insert(0, 0)
    return RleMask(int(m.shape[0]), int(m.shape[1]), tuple(runs))


def rle_decode(r: RleMask) -> np.ndarray:
    """Inverse of :func:`rle_encode`; returns a bool array of shape ``(width, height)``."""
    total = r.width * r.height
    if sum(r.runs) != total:
        raise IntegrityError(f"runs sum to {sum(r.runs)}, expected {total}")
    if any(run == 0 for run in r.runs[1:]):
        raise IntegrityError("zero-length run after the first position")
    values = np.arange(len(r.runs)) % 2 == 1
    flat = np.repeat(values, r.runs)
    return flat.reshape((r.width, r.height), order="F")
