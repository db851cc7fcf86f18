"""In-plane rigid registration by maximising normalised mutual information.

The optimiser is a coordinate pattern search run coarse to fine over a
block-averaged image pyramid. Parameters are tracked in full-resolution
pixels and degrees throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .preprocess import RigidTransform2D, sample_bilinear


@dataclass(frozen=True)
class RegistrationOptions:
    bins: int = 64
    levels: tuple = (4, 2, 1)
    initial_steps: tuple = (8.0, 8.0, 8.0)  # px, px, degrees
    min_steps: tuple = (0.1, 0.1, 0.1)
    max_evals_per_level: int = 500


def _bin_index(values: np.ndarray, lo: float, hi: float, bins: int) -> np.ndarray:
    idx = ((values - lo) * (bins / (hi - lo))).astype(np.intp)
    return np.clip(idx, 0, bins - 1)


def nmi(a: np.ndarray, b: np.ndarray, bins: int = 64, ranges=None, valid=None) -> float:
    """Normalised mutual information ``(H(A) + H(B)) / H(A, B)`` on a ``bins x bins`` joint histogram.

    ``ranges`` fixes the intensity range of each image (default: own min/max);
    ``valid`` restricts the pixels that are counted.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if valid is not None:
        a = a[valid]
        b = b[valid]
    a = a.ravel()
    b = b.ravel()
    if a.size == 0:
        return 0.0
    (alo, ahi), (blo, bhi) = ranges if ranges is not None else ((a.min(), a.max()), (b.min(), b.max()))
    if ahi <= alo or bhi <= blo:
        raise ContractError("mutual information is undefined for a constant image")
    ia = _bin_index(a, alo, ahi, bins)
    ib = _bin_index(b, blo, bhi, bins)
    joint = np.bincount(ia * bins + ib, minlength=bins * bins).astype(np.float64)
    joint /= joint.sum()
    pa = joint.reshape(bins, bins).sum(axis=1)
    pb = joint.reshape(bins, bins).sum(axis=0)

    def entropy(p):
        p = p[p > 0]
        return float(-(p * np.log(p)).sum())

    h_joint = entropy(joint)
    if h_joint == 0.0:
        return 2.0
    return (entropy(pa) + entropy(pb)) / h_joint


def _downsample(img: np.ndarray, f: int) -> np.ndarray:
    if f == 1:
        return img
    nx, ny = (img.shape[0] // f) * f, (img.shape[1] // f) * f
    return img[:nx, :ny].reshape(nx // f, f, ny // f, f).mean(axis=(1, 3))


class _Objective:
    """NMI between the warped moving image and the fixed image at one pyramid level."""

    def __init__(self, moving, fixed, factor, bins, ranges):
        self.moving = moving
        self.fixed = fixed
        self.factor = factor
        self.bins = bins
        self.ranges = ranges
        nx, ny = moving.shape
        self.centre = np.array([(nx - 1) / 2, (ny - 1) / 2])
        self.gx, self.gy = np.meshgrid(np.arange(nx, dtype=np.float64), np.arange(ny, dtype=np.float64), indexing="ij")
        self.evals = 0

    def __call__(self, params) -> float:
        self.evals += 1
        tx, ty, theta_deg = params
        f = self.factor
        inv = RigidTransform2D(tx / f, ty / f, math.radians(theta_deg)).inverse()
        c, s = math.cos(inv.theta), math.sin(inv.theta)
        dx = self.gx - self.centre[0]
        dy = self.gy - self.centre[1]
        xs = c * dx - s * dy + self.centre[0] + inv.tx
        ys = s * dx + c * dy + self.centre[1] + inv.ty
        nx, ny = self.moving.shape
        valid = (xs >= 0) & (xs <= nx - 1) & (ys >= 0) & (ys <= ny - 1)
        if valid.sum() < 16:
            return 0.0
        warped = sample_bilinear(self.moving, xs, ys, outside="clamp")
        return nmi(warped, self.fixed, self.bins, self.ranges, valid)


def _pattern_search(objective: _Objective, start, opts: RegistrationOptions):
    params = list(start)
    best = objective(params)
    steps = list(opts.initial_steps)
    while any(s >= m for s, m in zip(steps, opts.min_steps)):
        improved = False
        for axis in range(3):
            for sign in (1.0, -1.0):
                if objective.evals >= opts.max_evals_per_level:
                    return params, best
                trial = list(params)
                trial[axis] += sign * steps[axis]
                value = objective(trial)
                if value > best:
                    params, best, improved = trial, value, True
                    break
        if not improved:
            steps = [s / 2 for s in steps]
    return params, best


def register_rigid(moving: np.ndarray, fixed: np.ndarray, opts: RegistrationOptions = RegistrationOptions()) -> RigidTransform2D:
    """Rigid transform ``t`` such that ``apply_rigid(moving, t)`` best matches ``fixed``."""
    moving = np.asarray(moving, dtype=np.float64)
    fixed = np.asarray(fixed, dtype=np.float64)
    if moving.shape != fixed.shape or moving.ndim != 2:
        raise ContractError(f"images must share one 2D grid, got {moving.shape} and {fixed.shape}")
    if moving.max() == moving.min() or fixed.max() == fixed.min():
        raise ContractError("mutual information is undefined for a constant image")
    ranges = ((moving.min(), moving.max()), (fixed.min(), fixed.max()))
    params = [0.0, 0.0, 0.0]
    for f in opts.levels:
        m = _downsample(moving, f)
        x = _downsample(fixed, f)
        if min(m.shape) < 8:
            continue
        params, _ = _pattern_search(_Objective(m, x, f, opts.bins, ranges), params, opts)
    return RigidTransform2D(params[0], params[1], math.radians(params[2]))
