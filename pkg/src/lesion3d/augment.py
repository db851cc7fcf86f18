"""Seeded, replayable training-data augmentation.

A record is sampled first (every random draw happens there, in a fixed
order), then applied. Applying the same record to the same input is
bit-identical, so records double as a reproducibility log.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy import ndimage

from .errors import ContractError
from .preprocess import sample_bilinear, sample_nearest

MODE_DEFAULTS = {
    "prostate": {"rotation_deg": (-20.0, 20.0), "translation_px": (0.0, 50.0), "flip_ud": False},
    "lesion": {"rotation_deg": (-80.0, 80.0), "translation_px": (0.0, 20.0), "flip_ud": True},
}
STEP_ORDER = ("flip_lr", "flip_ud", "noise", "blur", "rotation", "translation", "scale")


@dataclass(frozen=True)
class AugmentConfig:
    mode: str = "prostate"
    apply_prob: float = 0.5
    noise_sigma: tuple = (0.05, 0.1)
    blur_sigma: tuple = (0.8, 1.3)
    rotation_deg: Optional[tuple] = None
    translation_px: Optional[tuple] = None
    scale: tuple = (0.9, 1.1)
    flip_ud: Optional[bool] = None
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODE_DEFAULTS:
            raise ContractError(f"mode must be 'prostate' or 'lesion', got {self.mode!r}")
        defaults = MODE_DEFAULTS[self.mode]
        for name in ("rotation_deg", "translation_px", "flip_ud"):
            if getattr(self, name) is None:
                object.__setattr__(self, name, defaults[name])
        if not 0.0 <= self.apply_prob <= 1.0:
            raise ContractError(f"apply_prob must lie in [0, 1], got {self.apply_prob}")
        for name in ("noise_sigma", "blur_sigma", "rotation_deg", "translation_px", "scale"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ContractError(f"{name}: lower bound {lo} exceeds upper bound {hi}")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if self.blur_sigma[0] <= 0 or self.scale[0] <= 0 or self.noise_sigma[0] < 0:
            raise ContractError("blur sigma and scale must be positive, noise sigma non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class AugmentRecord:
    """Sampled steps in application order; each step is a dict with ``op`` and ``applied``."""

    steps: tuple

    @property
    def applied(self) -> list[str]:
        return [s["op"] for s in self.steps if s["applied"]]

    def to_dict(self) -> dict:
        return {"steps": [dict(s) for s in self.steps]}

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentRecord":
        return cls(tuple(dict(s) for s in d["steps"]))

    @classmethod
    def identity(cls) -> "AugmentRecord":
        return cls(())


def sample_stream(seed: int, index: int) -> np.random.Generator:
    """Independent generator for sample ``index`` of a dataset seeded with ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(index),)))


def sample_augmentation(cfg: AugmentConfig, rng: np.random.Generator) -> AugmentRecord:
    """Draw one record. Parameters are drawn whether or not a step is applied,
    so the stream position never depends on earlier coin flips."""
    p = cfg.apply_prob

    def coin():
        return bool(rng.random() < p)

    steps = [{"op": "flip_lr", "applied": coin()}]
    if cfg.flip_ud:
        steps.append({"op": "flip_ud", "applied": coin()})
    applied = coin()
    steps.append({
        "op": "noise",
        "applied": applied,
        "sigma": float(rng.uniform(*cfg.noise_sigma)),
        "noise_seed": int(rng.integers(0, 2**63 - 1)),
    })
    applied = coin()
    steps.append({"op": "blur", "applied": applied, "sigma": float(rng.uniform(*cfg.blur_sigma))})
    applied = coin()
    steps.append({"op": "rotation", "applied": applied, "degrees": float(rng.uniform(*cfg.rotation_deg))})
    applied = coin()
    axis = "x" if rng.random() < 0.5 else "y"
    steps.append({"op": "translation", "applied": applied, "axis": axis, "pixels": float(rng.uniform(*cfg.translation_px))})
    applied = coin()
    steps.append({"op": "scale", "applied": applied, "factor": float(rng.uniform(*cfg.scale))})
    return AugmentRecord(tuple(steps))


# ---------------------------------------------------------------------------
# Application
# ---------------------------------------------------------------------------


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur over axes 0 and 1, radius ``ceil(3 sigma)``, border clamped."""
    k = gaussian_kernel(sigma)
    out = ndimage.convolve1d(np.asarray(img, dtype=np.float64), k, axis=0, mode="nearest")
    return ndimage.convolve1d(out, k, axis=1, mode="nearest")


def _homog(rot=None, shift=None, scale=None, centre=(0.0, 0.0)) -> np.ndarray:
    c = np.asarray(centre)
    m = np.eye(3)
    if rot is not None:
        cs, sn = math.cos(rot), math.sin(rot)
        m[:2, :2] = [[cs, -sn], [sn, cs]]
    if scale is not None:
        m[:2, :2] = np.eye(2) * scale
    if rot is not None or scale is not None:
        m[:2, 2] = c - m[:2, :2] @ c
    if shift is not None:
        m[:2, 2] += shift
    return m


def geometric_map(steps, shape) -> np.ndarray:
    """Forward homogeneous map (pixel coordinates) composed from the applied geometric steps."""
    centre = ((shape[0] - 1) / 2, (shape[1] - 1) / 2)
    fwd = np.eye(3)
    for s in steps:
        if not s["applied"]:
            continue
        if s["op"] == "rotation":
            fwd = _homog(rot=math.radians(s["degrees"]), centre=centre) @ fwd
        elif s["op"] == "translation":
            shift = (s["pixels"], 0.0) if s["axis"] == "x" else (0.0, s["pixels"])
            fwd = _homog(shift=shift) @ fwd
        elif s["op"] == "scale":
            fwd = _homog(scale=s["factor"], centre=centre) @ fwd
    return fwd


def _warp_planes(arr: np.ndarray, inv: np.ndarray, nearest: bool) -> np.ndarray:
    nx, ny = arr.shape[:2]
    gx, gy = np.meshgrid(np.arange(nx, dtype=np.float64), np.arange(ny, dtype=np.float64), indexing="ij")
    xs = inv[0, 0] * gx + inv[0, 1] * gy + inv[0, 2]
    ys = inv[1, 0] * gx + inv[1, 1] * gy + inv[1, 2]
    planes = arr[..., None] if arr.ndim == 2 else arr
    out = []
    for z in range(planes.shape[2]):
        if nearest:
            out.append(sample_nearest(planes[:, :, z], xs, ys, outside="zero"))
        else:
            out.append(sample_bilinear(planes[:, :, z], xs, ys, outside="zero"))
    res = np.stack(out, axis=2)
    return res[:, :, 0] if arr.ndim == 2 else res


_GEOMETRIC = {"rotation", "translation", "scale"}


def apply_augmentation(img: np.ndarray, mask: Optional[np.ndarray], rec: AugmentRecord):
    """Apply ``rec`` to an image (2D, or 3D with the same record on every slice) and optional mask.

    Intensity steps touch the image only; geometric steps use bilinear
    sampling for the image and nearest for the mask, filling with 0.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim not in (2, 3):
        raise ContractError(f"expected a 2D or 3D image, got shape {img.shape}")
    if mask is not None:
        mask = np.asarray(mask)
        if mask.shape != img.shape:
            raise ContractError(f"image shape {img.shape} and mask shape {mask.shape} differ")
    img = img.copy()
    steps = list(rec.steps)
    i = 0
    while i < len(steps):
        s = steps[i]
        op = s["op"]
        if op in _GEOMETRIC:
            # consecutive geometric steps are composed into one resampling
            j = i
            while j < len(steps) and steps[j]["op"] in _GEOMETRIC:
                j += 1
            fwd = geometric_map(steps[i:j], img.shape)
            if not np.array_equal(fwd, np.eye(3)):
                inv = np.linalg.inv(fwd)
                img = _warp_planes(img, inv, nearest=False)
                if mask is not None:
                    mask = _warp_planes(mask, inv, nearest=True)
            i = j
            continue
        if s["applied"]:
            if op == "flip_lr":
                img = img[::-1].copy()
                mask = None if mask is None else mask[::-1].copy()
            elif op == "flip_ud":
                img = img[:, ::-1].copy()
                mask = None if mask is None else mask[:, ::-1].copy()
            elif op == "noise":
                noise_rng = np.random.default_rng(s["noise_seed"])
                img = img + noise_rng.normal(0.0, s["sigma"], size=img.shape)
            elif op == "blur":
                img = gaussian_blur(img, s["sigma"])
            else:
                raise ContractError(f"unknown augmentation step {op!r}")
        i += 1
    return img, mask


def augment_dataset(img, mask, cfg: AugmentConfig, count: int):
    """Yield ``(index, record, image, mask)`` for ``count`` samples with per-sample streams."""
    for k in range(count):
        rec = sample_augmentation(cfg, sample_stream(cfg.seed, k))
        out_img, out_mask = apply_augmentation(img, mask, rec)
        yield k, rec, out_img, out_mask
