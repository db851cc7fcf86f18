"""Slice preprocessing: aspect-preserving resize + zero pad, per-slice min-max
normalisation, histogram equalisation, bilinear resampling and rigid warps.

All 2D arrays are indexed ``[x, y]``. Pixel ``i`` has its centre at
coordinate ``i``; geometric maps are expressed in these coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .volume import Mask, Volume


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def sample_bilinear(img: np.ndarray, xs: np.ndarray, ys: np.ndarray, outside: str = "clamp") -> np.ndarray:
    """Bilinear samples of ``img`` at fractional indices.

    ``outside="clamp"`` clamps coordinates to the border; ``"zero"`` treats
    every pixel beyond the grid as 0.
    """
    img = np.asarray(img, dtype=np.float64)
    nx, ny = img.shape
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if outside == "clamp":
        xs = np.clip(xs, 0, nx - 1)
        ys = np.clip(ys, 0, ny - 1)
        x0 = np.minimum(np.floor(xs), max(nx - 2, 0)).astype(np.intp)
        y0 = np.minimum(np.floor(ys), max(ny - 2, 0)).astype(np.intp)
        fx = xs - x0
        fy = ys - y0
        x1 = np.minimum(x0 + 1, nx - 1)
        y1 = np.minimum(y0 + 1, ny - 1)
        return (
            img[x0, y0] * (1 - fx) * (1 - fy)
            + img[x1, y0] * fx * (1 - fy)
            + img[x0, y1] * (1 - fx) * fy
            + img[x1, y1] * fx * fy
        )
    if outside != "zero":
        raise ContractError(f"unknown outside mode {outside!r}")
    x0f = np.floor(xs)
    y0f = np.floor(ys)
    fx = xs - x0f
    fy = ys - y0f
    x0 = x0f.astype(np.intp)
    y0 = y0f.astype(np.intp)
    out = np.zeros(xs.shape, dtype=np.float64)
    for dx, wx in ((0, 1 - fx), (1, fx)):
        for dy, wy in ((0, 1 - fy), (1, fy)):
            xi = x0 + dx
            yi = y0 + dy
            ok = (xi >= 0) & (xi < nx) & (yi >= 0) & (yi < ny)
            vals = np.where(ok, img[np.clip(xi, 0, nx - 1), np.clip(yi, 0, ny - 1)], 0.0)
            out += vals * wx * wy
    return out


def sample_nearest(img: np.ndarray, xs: np.ndarray, ys: np.ndarray, outside: str = "zero") -> np.ndarray:
    img = np.asarray(img)
    nx, ny = img.shape
    xi = np.floor(np.asarray(xs) + 0.5).astype(np.intp)
    yi = np.floor(np.asarray(ys) + 0.5).astype(np.intp)
    if outside == "clamp":
        return img[np.clip(xi, 0, nx - 1), np.clip(yi, 0, ny - 1)]
    ok = (xi >= 0) & (xi < nx) & (yi >= 0) & (yi < ny)
    vals = img[np.clip(xi, 0, nx - 1), np.clip(yi, 0, ny - 1)]
    return np.where(ok, vals, np.zeros((), dtype=img.dtype))


def warp_affine(img: np.ndarray, matrix, offset, interpolation: str = "bilinear") -> np.ndarray:
    """Output pixel ``p`` takes the input value at ``matrix @ p + offset`` (0 outside the grid)."""
    img = np.asarray(img)
    nx, ny = img.shape
    gx, gy = np.meshgrid(np.arange(nx, dtype=np.float64), np.arange(ny, dtype=np.float64), indexing="ij")
    a = np.asarray(matrix, dtype=np.float64)
    xs = a[0, 0] * gx + a[0, 1] * gy + offset[0]
    ys = a[1, 0] * gx + a[1, 1] * gy + offset[1]
    if interpolation == "nearest":
        return sample_nearest(img, xs, ys, outside="zero")
    if interpolation != "bilinear":
        raise ContractError(f"unknown interpolation {interpolation!r}")
    return sample_bilinear(img, xs, ys, outside="zero")


# ---------------------------------------------------------------------------
# Rigid transforms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RigidTransform2D:
    """Rotation by ``theta`` (radians) about the image centre, then translation ``(tx, ty)`` pixels."""

    tx: float = 0.0
    ty: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.tx, self.ty, self.theta)):
            raise ContractError(f"non-finite rigid transform {self}")

    def inverse(self) -> "RigidTransform2D":
        c, s = math.cos(self.theta), math.sin(self.theta)
        # p = R^T (p' - c - t) + c  ->  rotate by -theta about c, translate by -R^T t
        return RigidTransform2D(-(c * self.tx + s * self.ty), -(-s * self.tx + c * self.ty), -self.theta)

    def forward_points(self, pts: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
        """Map ``(n, 2)`` points through the transform for an image of ``shape``."""
        centre = (np.asarray(shape, dtype=np.float64) - 1) / 2
        c, s = math.cos(self.theta), math.sin(self.theta)
        rot = np.array([[c, -s], [s, c]])
        return (np.asarray(pts, dtype=np.float64) - centre) @ rot.T + centre + (self.tx, self.ty)

    def sampling_map(self, shape: tuple[int, int]):
        """``(matrix, offset)`` taking output pixels to input sample locations."""
        inv = self.inverse()
        centre = (np.asarray(shape, dtype=np.float64) - 1) / 2
        c, s = math.cos(inv.theta), math.sin(inv.theta)
        rot = np.array([[c, -s], [s, c]])
        return rot, centre - rot @ centre + (inv.tx, inv.ty)

    def to_dict(self) -> dict:
        return {"tx": self.tx, "ty": self.ty, "theta": self.theta, "theta_deg": math.degrees(self.theta)}


def apply_rigid(img2d: np.ndarray, t: RigidTransform2D, interpolation: str = "bilinear") -> np.ndarray:
    matrix, offset = t.sampling_map(np.shape(img2d))
    return warp_affine(img2d, matrix, offset, interpolation)


# ---------------------------------------------------------------------------
# Resize and pad
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ResizeSpec:
    target_long: int = 384
    pad_value: float = 0.0
    interpolation: str = "bilinear"

    def __post_init__(self):
        if self.target_long < 1:
            raise ContractError(f"target_long must be >= 1, got {self.target_long}")
        if self.interpolation not in ("bilinear", "nearest"):
            raise ContractError(f"unknown interpolation {self.interpolation!r}")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def resized_shape(shape: tuple[int, int], target_long: int) -> tuple[float, tuple[int, int]]:
    scale = target_long / max(shape)
    return scale, tuple(max(1, min(target_long, _round_half_up(n * scale))) for n in shape)  # type: ignore[return-value]


def resize_pad(img: np.ndarray, spec: ResizeSpec = ResizeSpec()):
    """Scale so the long side equals ``spec.target_long`` and pad the short side symmetrically.

    Returns ``(image, scale, (pad_x, pad_y))``; an odd padding remainder goes
    to the high side. Masks should use ``interpolation="nearest"``.
    """
    img = np.asarray(img)
    if img.ndim != 2 or min(img.shape) < 1:
        raise ContractError(f"resize_pad needs a non-empty 2D image, got shape {img.shape}")
    scale, (mx, my) = resized_shape(img.shape, spec.target_long)
    xs = (np.arange(mx) + 0.5) / scale - 0.5
    ys = (np.arange(my) + 0.5) / scale - 0.5
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    if spec.interpolation == "nearest":
        resized = sample_nearest(img, gx, gy, outside="clamp")
        out_dtype = img.dtype
    else:
        resized = sample_bilinear(img, gx, gy, outside="clamp")
        out_dtype = np.float64
    px = (spec.target_long - mx) // 2
    py = (spec.target_long - my) // 2
    out = np.full((spec.target_long, spec.target_long), spec.pad_value, dtype=out_dtype)
    out[px : px + mx, py : py + my] = resized
    return out, scale, (px, py)


def to_source_coords(pts, scale: float, offsets) -> np.ndarray:
    """Map pixel-centre coordinates of a :func:`resize_pad` output back to the input image."""
    return (np.asarray(pts, dtype=np.float64) - np.asarray(offsets) + 0.5) / scale - 0.5


def to_target_coords(pts, scale: float, offsets) -> np.ndarray:
    return (np.asarray(pts, dtype=np.float64) + 0.5) * scale - 0.5 + np.asarray(offsets)


# ---------------------------------------------------------------------------
# Intensity
# ---------------------------------------------------------------------------


def normalize_slice(img2d: np.ndarray) -> np.ndarray:
    """Min-max scale to [0, 1]; a constant slice becomes all zeros."""
    img = np.asarray(img2d, dtype=np.float64)
    if img.size == 0:
        raise ContractError("cannot normalise an empty slice")
    lo, hi = img.min(), img.max()
    if hi == lo:
        return np.zeros_like(img)
    return (img - lo) / (hi - lo)


def hist_equalize(img2d: np.ndarray, levels: int = 256) -> np.ndarray:
    """Histogram equalisation of an image in [0, 1] over ``levels`` bins.

    Each value maps to ``(cdf - cdf_min) / (1 - cdf_min)`` where ``cdf_min``
    is the cumulative fraction at the lowest occupied bin.
    """
    img = np.asarray(img2d, dtype=np.float64)
    if levels < 2:
        raise ContractError(f"levels must be >= 2, got {levels}")
    if img.size == 0 or not np.isfinite(img).all() or img.min() < 0 or img.max() > 1:
        raise ContractError("histogram equalisation expects finite values in [0, 1]")
    q = np.minimum((img * levels).astype(np.intp), levels - 1)
    hist = np.bincount(q.ravel(), minlength=levels)
    cdf = np.cumsum(hist) / img.size
    cdf_min = cdf[q.min()]
    if cdf_min >= 1.0:
        return np.zeros_like(img)
    lut = np.clip((cdf - cdf_min) / (1.0 - cdf_min), 0.0, 1.0)
    return lut[q]


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------


def resample_bilinear(img2d: np.ndarray, src_spacing, dst_spacing) -> np.ndarray:
    """Resample onto a grid with ``dst_spacing`` covering the same physical extent.

    Output pixel centres are located physically and interpolated from the
    four surrounding source pixels, clamping at the border.
    """
    img = np.asarray(img2d, dtype=np.float64)
    src = tuple(float(s) for s in src_spacing)
    dst = tuple(float(s) for s in dst_spacing)
    if min(src) <= 0 or min(dst) <= 0:
        raise ContractError(f"spacings must be positive, got {src} and {dst}")
    if src == dst:
        return img.copy()
    shape = tuple(max(1, _round_half_up(n * s / d)) for n, s, d in zip(img.shape, src, dst))
    xs = (np.arange(shape[0]) + 0.5) * dst[0] / src[0] - 0.5
    ys = (np.arange(shape[1]) + 0.5) * dst[1] / src[1] - 0.5
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return sample_bilinear(img, gx, gy, outside="clamp")


# ---------------------------------------------------------------------------
# Volume-level helpers
# ---------------------------------------------------------------------------


def preprocess_volume(vol: Volume, target_long: int = 384, hist_eq: bool = True, levels: int = 256, normalize: bool = True):
    """Apply resize/pad, normalisation and equalisation slice by slice.

    Returns the new volume and a metadata dict recording the geometry
    (scale, offsets) and the intensity choices.
    """
    spec = ResizeSpec(target_long, 0.0, "bilinear")
    is_mask = isinstance(vol, Mask)
    if is_mask:
        spec = ResizeSpec(target_long, 0.0, "nearest")
    planes = []
    scale = offsets = None
    for z in range(vol.nz):
        plane = vol.data[:, :, z]
        # intensity steps run before padding so the zero border does not enter the histogram
        if not is_mask and normalize:
            plane = normalize_slice(plane)
        if not is_mask and hist_eq:
            plane = hist_equalize(plane if normalize else normalize_slice(plane), levels)
        out, scale, offsets = resize_pad(plane, spec)
        planes.append(out)
    data = np.stack(planes, axis=2)
    sx, sy, sz = vol.spacing
    ox, oy, oz = vol.origin
    # physical position of output pixel 0 under the resize_pad coordinate map
    src0 = to_source_coords(np.zeros(2), scale, offsets)
    spacing = (sx / scale, sy / scale, sz)
    origin = (ox + src0[0] * sx, oy + src0[1] * sy, oz)
    cls = Mask if is_mask else Volume
    meta = {
        "scale": scale,
        "offsets": list(offsets),
        "target_long": target_long,
        "input_dims": list(vol.dims),
        "normalization": "per-slice min-max" if normalize else "none",
        "hist_eq": {"enabled": hist_eq and not is_mask, "levels": levels, "variant": "global CDF, lowest occupied bin mapped to 0"},
    }
    return cls(data, spacing, origin), meta


def resample_volume_inplane(vol: Volume, dst_spacing_xy) -> Volume:
    planes = [resample_bilinear(vol.data[:, :, z], vol.spacing[:2], dst_spacing_xy) for z in range(vol.nz)]
    src = vol.spacing
    shift = [(d / s - 1) * s / 2 for s, d in zip(src[:2], dst_spacing_xy)]
    origin = (vol.origin[0] + shift[0], vol.origin[1] + shift[1], vol.origin[2])
    return Volume(np.stack(planes, axis=2), (dst_spacing_xy[0], dst_spacing_xy[1], src[2]), origin)
