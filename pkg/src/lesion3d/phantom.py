"""Synthetic prostate phantoms with planted lesions and simulated detector output.

Geometry is given in voxel index units. Lesions are ellipsoids; giving the z
radius as ``k + 0.5`` keeps the end slices large enough to link to their
neighbours.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

from .errors import ContractError
from .volume import Detection, Mask, Volume


@dataclass
class LesionSpec:
    center: tuple
    radii: tuple
    peak_score: float
    score_jitter: float = 0.0
    mask_jitter: float = 0.0


@dataclass
class PhantomSpec:
    dims: tuple = (96, 96, 24)
    spacing: tuple = (1.0, 1.0, 3.6)
    prostate_center: tuple = (48.0, 48.0, 12.0)
    prostate_radii: tuple = (32.0, 28.0, 8.5)
    lesions: list = field(default_factory=list)
    noise: float = 0.02
    seed: int = 0

    def __post_init__(self):
        self.lesions = [l if isinstance(l, LesionSpec) else LesionSpec(**l) for l in self.lesions]
        for l in self.lesions:
            if not 0.0 <= l.peak_score <= 1.0:
                raise ContractError(f"lesion peak score {l.peak_score} outside [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        d = dict(d)
        d["lesions"] = [LesionSpec(**l) for l in d.get("lesions", [])]
        return cls(**d)


@dataclass
class PhantomCase:
    t2: Volume
    prostate: Mask
    lesions: list  # list[Mask], same order as spec.lesions
    detections: list  # list[Detection]
    spec: PhantomSpec


def ellipsoid(dims, center, radii) -> np.ndarray:
    gx, gy, gz = np.meshgrid(*(np.arange(n, dtype=np.float64) for n in dims), indexing="ij")
    r = ((gx - center[0]) / radii[0]) ** 2 + ((gy - center[1]) / radii[1]) ** 2 + ((gz - center[2]) / radii[2]) ** 2
    return r <= 1.0


def _slice_scores(peak: float, zs, zc: float, half: float) -> np.ndarray:
    # peak on the centre slice, falling linearly but staying above 0.7
    frac = 1.0 - np.abs(np.asarray(zs) - zc) / (half + 1.0)
    return 0.7 + (peak - 0.7) * np.clip(frac, 0.0, 1.0) if peak > 0.7 else np.full(len(zs), peak)


def _jitter_mask(m: np.ndarray, amount: float, rng: np.random.Generator) -> np.ndarray:
    """Random one-pixel shift and dilation/erosion with probability ``amount`` each."""
    if amount <= 0:
        return m
    out = m
    if rng.random() < amount:
        out = np.roll(out, (int(rng.integers(-1, 2)), int(rng.integers(-1, 2))), axis=(0, 1))
    if rng.random() < amount:
        op = ndimage.binary_dilation if rng.random() < 0.5 else ndimage.binary_erosion
        trial = op(out)
        if trial.any():
            out = trial
    return out if out.any() else m


def generate_phantom(spec: PhantomSpec) -> PhantomCase:
    """Deterministic phantom: T2-like image, ground-truth masks and per-slice detections."""
    rng = np.random.default_rng(spec.seed)
    dims = tuple(int(n) for n in spec.dims)
    prostate = ellipsoid(dims, spec.prostate_center, spec.prostate_radii)
    if not prostate.any():
        raise ContractError("prostate ellipsoid lies outside the grid")

    lesion_masks = []
    for i, les in enumerate(spec.lesions):
        m = ellipsoid(dims, les.center, les.radii)
        if not m.any():
            raise ContractError(f"lesion {i} lies outside the grid")
        if (m & ~prostate).any():
            raise ContractError(f"lesion {i} extends outside the prostate")
        lesion_masks.append(m)

    # T2-like image: smooth background, bright gland, dark lesions, noise
    body = ellipsoid(dims, spec.prostate_center, (dims[0] * 0.48, dims[1] * 0.45, dims[2] * 10))
    background = ndimage.gaussian_filter(rng.normal(size=dims), sigma=(6, 6, 1))
    background = 0.1 * background / (np.abs(background).max() + 1e-12)
    img = 0.2 + 0.25 * body + 0.3 * prostate + background
    for m in lesion_masks:
        img = img - 0.35 * m
    img = ndimage.gaussian_filter(img, sigma=(0.7, 0.7, 0))
    img = img + spec.noise * rng.normal(size=dims)

    detections = []
    for z in range(dims[2]):
        plane = prostate[:, :, z]
        if plane.any():
            score = float(np.clip(0.95 + 0.04 * rng.random(), 0, 1))
            detections.append(Detection(z, plane, score, "prostate"))
    for les, m in zip(spec.lesions, lesion_masks):
        zs = [z for z in range(dims[2]) if m[:, :, z].any()]
        half = les.radii[2]
        scores = _slice_scores(les.peak_score, zs, les.center[2], half)
        for z, s in zip(zs, scores):
            if les.score_jitter > 0 and abs(z - les.center[2]) > 0.5:
                s = s + rng.normal(0.0, les.score_jitter)
            mask = _jitter_mask(m[:, :, z], les.mask_jitter, rng)
            detections.append(Detection(z, mask, float(np.clip(s, 0.0, 1.0)), "lesion"))

    grid = dict(spacing=spec.spacing, origin=(0.0, 0.0, 0.0))
    return PhantomCase(
        t2=Volume(img, **grid),
        prostate=Mask(prostate, **grid),
        lesions=[Mask(m, **grid) for m in lesion_masks],
        detections=detections,
        spec=spec,
    )


def random_phantom_spec(
    seed: int,
    n_lesions: int,
    dims=(96, 96, 24),
    score_jitter: float = 0.0,
    mask_jitter: float = 0.0,
    max_tries: int = 5000,
) -> PhantomSpec:
    """Place ``n_lesions`` non-touching lesions inside a centred prostate, with distinct peak scores."""
    rng = np.random.default_rng(seed)
    nx, ny, nz = dims
    pc = (nx / 2 - 0.5, ny / 2 - 0.5, nz / 2 - 0.5)
    pr = (nx * 0.36, ny * 0.32, nz * 0.36)
    prostate = ellipsoid(dims, pc, pr)
    # peak scores spaced at least 0.02 apart
    peaks = np.sort(rng.choice(np.arange(0.75, 0.99, 0.02), size=n_lesions, replace=False))[::-1]
    boxes: list[np.ndarray] = []
    lesions = []
    for peak in peaks:
        for _ in range(max_tries):
            rxy = rng.uniform(3.5, 6.0, size=2)
            half = int(rng.integers(1, 3))
            radii = (float(rxy[0]), float(rxy[1]), half + 0.5)
            centre = (
                float(rng.integers(int(pc[0] - pr[0]), int(pc[0] + pr[0]))),
                float(rng.integers(int(pc[1] - pr[1]), int(pc[1] + pr[1]))),
                float(rng.integers(int(pc[2] - pr[2]), int(pc[2] + pr[2]) + 1)),
            )
            lo = np.floor(np.subtract(centre, radii)) - 1
            hi = np.ceil(np.add(centre, radii)) + 1
            if any(np.all(lo <= b[1]) and np.all(b[0] <= hi) for b in boxes):
                continue
            m = ellipsoid(dims, centre, radii)
            if not m.any() or (m & ~prostate).any():
                continue
            boxes.append(np.array([lo, hi]))
            lesions.append(LesionSpec(centre, radii, float(round(peak, 4)), score_jitter, mask_jitter))
            break
        else:
            raise ContractError(f"could not place {n_lesions} lesions in the phantom prostate")
    return PhantomSpec(dims=tuple(dims), prostate_center=pc, prostate_radii=pr, lesions=lesions, seed=seed)


def structured_phantom_2d(shape=(128, 128), seed: Optional[int] = 0) -> np.ndarray:
    """Asymmetric smooth test image (ellipses of distinct intensity on a gradient), values in [0, 1]."""
    rng = np.random.default_rng(seed)
    nx, ny = shape
    gx, gy = np.meshgrid(np.arange(nx, dtype=np.float64), np.arange(ny, dtype=np.float64), indexing="ij")
    img = 0.15 * gx / nx + 0.05 * gy / ny
    body = ((gx - nx / 2) / (nx * 0.42)) ** 2 + ((gy - ny / 2) / (ny * 0.36)) ** 2 <= 1
    img = img + 0.3 * body
    for _ in range(6):
        cx, cy = rng.uniform(0.25, 0.75) * nx, rng.uniform(0.25, 0.75) * ny
        ax, ay = rng.uniform(0.04, 0.14) * nx, rng.uniform(0.04, 0.14) * ny
        ang = rng.uniform(0, np.pi)
        u = (gx - cx) * np.cos(ang) + (gy - cy) * np.sin(ang)
        v = -(gx - cx) * np.sin(ang) + (gy - cy) * np.cos(ang)
        img = img + rng.uniform(-0.3, 0.4) * (((u / ax) ** 2 + (v / ay) ** 2) <= 1)
    img = ndimage.gaussian_filter(img, 1.5)
    img -= img.min()
    return img / img.max()
