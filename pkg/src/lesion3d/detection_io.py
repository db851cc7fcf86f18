"""Detection JSON-lines files: one detection per line, mask stored as RLE."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable

from .errors import Lesion3DError, ParseError
from .rle import RleMask, rle_decode, rle_encode
from .volume import Detection


def detection_to_dict(det: Detection) -> dict:
    return {
        "slice": det.slice,
        "score": det.score,
        "label": det.label,
        "bbox": list(det.bbox),
        "mask": rle_encode(det.mask).to_dict(),
    }


def detection_from_dict(d: dict) -> Detection:
    det = Detection(
        slice=int(d["slice"]),
        mask=rle_decode(RleMask.from_dict(d["mask"])),
        score=float(d["score"]),
        label=str(d.get("label", "lesion")),
    )
    if "bbox" in d and tuple(int(v) for v in d["bbox"]) != det.bbox:
        raise ParseError(f"bbox {d['bbox']} is not the tight box {list(det.bbox)} of the mask", key="bbox")
    return det


def read_detections(path) -> list[Detection]:
    """Parse a JSON-lines file; blank lines are skipped. Errors name the 1-based line."""
    out = []
    with open(Path(path), encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(detection_from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError, Lesion3DError) as exc:
                raise ParseError(f"{path}: line {lineno}: {exc}", line=lineno) from exc
    return out


def write_detections(dets: Iterable[Detection], path) -> None:
    with open(Path(path), "w", encoding="utf-8") as fh:
        for det in dets:
            fh.write(json.dumps(detection_to_dict(det), separators=(",", ":")) + "\n")
