"""Static PNG overlays: grayscale slice, mask contours, bounding boxes, rank/score labels."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image, ImageDraw
from scipy import ndimage

from .preprocess import normalize_slice
from .volume import tight_bbox

# contour colours are never used for boxes/text, so contour pixels stay identifiable
CONTOUR_COLORS = [(255, 0, 0), (0, 255, 0), (0, 128, 255), (255, 0, 255), (0, 255, 255), (255, 160, 0)]
BOX_COLOR = (255, 255, 0)


@dataclass
class Overlay:
    mask: np.ndarray  # [x, y]
    color: tuple = CONTOUR_COLORS[0]
    text: Optional[str] = None
    box: bool = True


def contour(mask2d: np.ndarray) -> np.ndarray:
    """Inner boundary: foreground pixels with a 4-neighbour that is background or off-image."""
    m = np.asarray(mask2d, dtype=bool)
    return m & ~ndimage.binary_erosion(m, structure=ndimage.generate_binary_structure(2, 1), border_value=0)


def render_slice(img2d: np.ndarray, overlays: Sequence[Overlay] = ()) -> Image.Image:
    gray = (normalize_slice(img2d) * 255).round().astype(np.uint8)
    rgb = np.repeat(gray.T[:, :, None], 3, axis=2)  # PNG rows are y
    im = Image.fromarray(rgb, "RGB")
    draw = ImageDraw.Draw(im)
    for ov in overlays:
        if not np.asarray(ov.mask).any():
            continue
        x0, y0, x1, y1 = tight_bbox(np.asarray(ov.mask, dtype=bool))
        if ov.box:
            # one pixel outside the tight box so it never covers mask pixels
            draw.rectangle([x0 - 1, y0 - 1, x1, y1], outline=BOX_COLOR)
        if ov.text:
            draw.text((x0, max(y0 - 12, 0)), ov.text, fill=BOX_COLOR)
    arr = np.array(im)
    for ov in overlays:
        edge = contour(ov.mask)
        arr[edge.T] = ov.color
    return Image.fromarray(arr, "RGB")


def write_overlays(volume_data: np.ndarray, per_slice: dict, out_dir, prefix: str = "slice") -> list[Path]:
    """Write one PNG per slice. ``per_slice`` maps slice index to a list of :class:`Overlay`."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for z in range(volume_data.shape[2]):
        path = out_dir / f"{prefix}_{z:03d}.png"
        render_slice(volume_data[:, :, z], per_slice.get(z, ())).save(path)
        paths.append(path)
    return paths
