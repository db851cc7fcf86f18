"""Case- and cohort-level workflows behind the command-line interface."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import metrics as M
from .assembly import (
    AssemblyConfig,
    assemble_from_detections,
    decisions_to_mask,
    group_by_slice,
    lesions_to_label_volume,
    select_prostate_slices,
)
from .detection_io import read_detections
from .errors import ContractError, Lesion3DError
from .metaimage import load_mask, load_volume
from .volume import CaseCounts, Mask, Volume

log = logging.getLogger(__name__)

SUMMARY_METRICS = ("dsc", "hd95_mm", "sensitivity", "specificity", "agreement")


@dataclass
class CaseManifest:
    case_id: str
    t2: Optional[Path] = None
    adc: Optional[Path] = None
    prostate: Optional[Path] = None
    lesions: list = field(default_factory=list)
    detections: Optional[Path] = None
    pred_prostate: Optional[Path] = None
    pred_lesions: Optional[list] = None
    spacing: Optional[tuple] = None

    @classmethod
    def from_dict(cls, d: dict, base_dir=".") -> "CaseManifest":
        base = Path(base_dir)

        def p(v):
            return None if v is None else base / v

        if "case_id" not in d:
            raise ContractError("manifest entry without case_id")
        pred_lesions = d.get("pred_lesions")
        return cls(
            case_id=str(d["case_id"]),
            t2=p(d.get("t2")),
            adc=p(d.get("adc")),
            prostate=p(d.get("prostate")),
            lesions=[base / v for v in d.get("lesions", [])],
            detections=p(d.get("detections")),
            pred_prostate=p(d.get("pred_prostate")),
            pred_lesions=None if pred_lesions is None else [base / v for v in pred_lesions],
            spacing=None if d.get("spacing") is None else tuple(float(s) for s in d["spacing"]),
        )

    def referenced_files(self) -> list[Path]:
        files = [self.t2, self.adc, self.prostate, self.detections, self.pred_prostate]
        files += list(self.lesions) + list(self.pred_lesions or [])
        return [f for f in files if f is not None]


def load_manifest(path) -> list[CaseManifest]:
    path = Path(path)
    entries = json.loads(path.read_text())
    if not isinstance(entries, list):
        raise ContractError("cohort manifest must be a JSON array")
    cases = [CaseManifest.from_dict(e, path.parent) for e in entries]
    ids = [c.case_id for c in cases]
    if len(set(ids)) != len(ids):
        raise ContractError("duplicate case_id in manifest")
    return cases


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def _override(v, spacing):
    if spacing is None:
        return v
    return type(v)(v.data, spacing, v.origin)


def _maybe_hd(a: Mask, b: Mask, symmetric: bool):
    if a.count == 0 or b.count == 0:
        return None
    return M.hd95(a, b, symmetric=symmetric)


def _maybe_dsc(a: Mask, b: Mask):
    if a.count + b.count == 0:
        return None
    return M.dsc(a, b)


def evaluate_case(case: CaseManifest, cfg: AssemblyConfig = AssemblyConfig(), symmetric: bool = True) -> list[M.MetricsReport]:
    """Prostate (slice-level) and lesion (pixel-level) reports for one case, as available."""
    for f in case.referenced_files():
        if not f.exists():
            raise FileNotFoundError(f"{case.case_id}: missing file {f}")
    sp = case.spacing
    gt_prostate = None if case.prostate is None else _override(load_mask(case.prostate), sp)
    gt_lesions = [_override(load_mask(p), sp) for p in case.lesions]
    candidates = [gt_prostate, *gt_lesions]
    if case.t2 is not None:
        candidates.insert(0, _override(load_volume(case.t2), sp))
    grid: Optional[Volume] = next((c for c in candidates if c is not None), None)
    if grid is None:
        raise ContractError(f"{case.case_id}: no volume to define the grid")
    dets = read_detections(case.detections) if case.detections is not None else None

    pred_prostate = None
    decisions = None
    if case.pred_prostate is not None:
        pred_prostate = _override(load_mask(case.pred_prostate), sp)
    elif dets is not None:
        decisions = select_prostate_slices(group_by_slice(dets, grid.nz, label="prostate"))
        pred_prostate = decisions_to_mask(decisions, grid)

    reports = []
    extra = {"case_id": case.case_id}
    if gt_prostate is not None and pred_prostate is not None:
        M.check_same_grid(gt_prostate, pred_prostate)
        if decisions is not None:
            detected = [d.present for d in decisions]
        else:
            detected = list(pred_prostate.data.any(axis=(0, 1)))
        sens, spec, counts = M.slice_sens_spec(gt_prostate, detected)
        reports.append(M.MetricsReport(
            mode="prostate-slice",
            dsc=_maybe_dsc(gt_prostate, pred_prostate),
            counts=counts,
            hd95_mm=_maybe_hd(gt_prostate, pred_prostate, symmetric),
            hd95_symmetric=symmetric,
            sensitivity=sens,
            specificity=spec,
            extra=dict(extra),
        ))

    if gt_lesions:
        if case.pred_lesions is not None:
            preds = [_override(load_mask(p), sp) for p in case.pred_lesions]
        elif dets is not None:
            has_prostate_dets = pred_prostate is not None and pred_prostate.count > 0
            lesions = assemble_from_detections(dets, cfg, pred_prostate if has_prostate_dets else None)
            preds = [l.to_mask(grid) for l in lesions]
        else:
            preds = []
        truth_union = Mask.like(grid, np.logical_or.reduce([g.data for g in gt_lesions]))
        pred_union = Mask.like(grid, np.logical_or.reduce([p.data for p in preds]) if preds else None)
        agreement, matched = M.agreement_rate(gt_lesions, preds)
        if gt_prostate is not None:
            sens, spec, counts = M.pixel_sens_spec(truth_union, pred_union, gt_prostate)
        else:
            sens = spec = None
            counts = CaseCounts(0, 0, 0, 0)
        reports.append(M.MetricsReport(
            mode="lesion-pixel",
            dsc=_maybe_dsc(truth_union, pred_union),
            counts=counts,
            hd95_mm=_maybe_hd(truth_union, pred_union, symmetric),
            hd95_symmetric=symmetric,
            sensitivity=sens,
            specificity=spec,
            agreement=agreement,
            extra=dict(extra, matched=[[g, p, round(d, 6)] for g, p, d in matched], n_predicted=len(preds)),
        ))
    return reports


def mean_sd(values) -> tuple[float, float]:
    """Mean and population standard deviation."""
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std(ddof=0))


def summarize(reports: list[dict]) -> dict:
    """Cohort summary from serialized per-case reports, grouped by mode (sorted by case_id)."""
    out: dict = {"sd": "population", "modes": {}}
    by_mode: dict = {}
    for r in sorted(reports, key=lambda r: (r["mode"], r.get("case_id", ""))):
        by_mode.setdefault(r["mode"], []).append(r)
    for mode, rs in by_mode.items():
        entry: dict = {"n_cases": len(rs), "cases": [r.get("case_id") for r in rs]}
        for name in SUMMARY_METRICS:
            vals = [r[name] for r in rs if r.get(name) is not None]
            if vals:
                mu, sd = mean_sd(vals)
                entry[name] = {"mean": mu, "sd": sd, "n": len(vals)}
        pooled = {k: sum(r["counts"][k] for r in rs) for k in ("dtp", "dtn", "tp", "tn")}
        entry["pooled_counts"] = pooled
        entry["pooled_sensitivity"] = pooled["dtp"] / pooled["tp"] if pooled["tp"] else None
        entry["pooled_specificity"] = pooled["dtn"] / pooled["tn"] if pooled["tn"] else None
        out["modes"][mode] = entry
    return out


def run_metrics(cases: list[CaseManifest], out_dir, cfg=AssemblyConfig(), symmetric=True, jobs: int = 1):
    """Evaluate every case, write ``<case_id>.json`` and ``summary.json``; return ``(summary, failures)``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def one(case):
        try:
            return case, [r.to_dict() for r in evaluate_case(case, cfg, symmetric)], None
        except (Lesion3DError, OSError, ValueError, KeyError) as exc:
            return case, None, f"{type(exc).__name__}: {exc}"

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        results = list(pool.map(one, cases))

    all_reports, failures = [], {}
    for case, reports, err in sorted(results, key=lambda t: t[0].case_id):
        payload = {"case_id": case.case_id}
        if err is not None:
            log.error("case %s failed: %s", case.case_id, err)
            failures[case.case_id] = err
            payload["error"] = err
        else:
            payload["reports"] = reports
            all_reports.extend(reports)
        (out_dir / f"{case.case_id}.json").write_text(json.dumps(payload, indent=2))
    summary = summarize(all_reports)
    summary["failures"] = failures
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2))
    return summary, failures


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------


def run_assemble(det_path, out_dir, cfg=AssemblyConfig(), prostate_path=None, reference_path=None, nz=None):
    """Assemble lesions from a detection file; writes ``lesions.json`` and, when a grid is known, ``lesion_labels.mha``."""
    from .metaimage import save_volume

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dets = read_detections(det_path)
    prostate = load_mask(prostate_path) if prostate_path else None
    lesions = assemble_from_detections(dets, cfg, prostate)
    doc = {"config": cfg.__dict__, "lesions": [l.to_dict() for l in lesions]}
    (out_dir / "lesions.json").write_text(json.dumps(doc, indent=2))

    grid = None
    if reference_path:
        grid = load_volume(reference_path)
    elif prostate is not None:
        grid = prostate
    elif dets:
        depth = nz or (max(d.slice for d in dets) + 1)
        w, h = dets[0].shape
        grid = Volume(np.zeros((w, h, depth)))
    if grid is not None:
        save_volume(lesions_to_label_volume(lesions, grid), out_dir / "lesion_labels.mha", "MET_UCHAR")
    return lesions


def run_prostate_select(det_path, reference_path, out_dir, truth_path=None):
    from .metaimage import save_volume

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    grid = load_volume(reference_path)
    decisions = select_prostate_slices(group_by_slice(read_detections(det_path), grid.nz, label="prostate"))
    mask = decisions_to_mask(decisions, grid)
    save_volume(mask, out_dir / "prostate_pred.mha")
    doc = {
        "decisions": [
            {"slice": d.slice, "present": d.present, "score": d.chosen.score if d.present else None,
             "bbox": list(d.chosen.bbox) if d.present else None}
            for d in decisions
        ]
    }
    if truth_path:
        sens, spec, counts = M.slice_sens_spec(load_mask(truth_path), [d.present for d in decisions])
        doc.update(sensitivity=sens, specificity=spec, counts=counts.to_dict())
    (out_dir / "prostate_decisions.json").write_text(json.dumps(doc, indent=2))
    return decisions


# ---------------------------------------------------------------------------
# Phantom
# ---------------------------------------------------------------------------


def write_phantom_case(case, out_dir, case_id: str = "phantom") -> dict:
    """Write a generated phantom to disk and return its manifest entry (paths relative to ``out_dir``)."""
    from .detection_io import write_detections
    from .metaimage import save_volume

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_volume(case.t2, out_dir / f"{case_id}_t2.mha")
    save_volume(case.prostate, out_dir / f"{case_id}_prostate.mha")
    lesion_files = []
    for i, m in enumerate(case.lesions):
        name = f"{case_id}_lesion_{i:02d}.mha"
        save_volume(m, out_dir / name)
        lesion_files.append(name)
    write_detections(case.detections, out_dir / f"{case_id}_detections.jsonl")
    (out_dir / f"{case_id}_spec.json").write_text(json.dumps(case.spec.to_dict(), indent=2))
    return {
        "case_id": case_id,
        "t2": f"{case_id}_t2.mha",
        "prostate": f"{case_id}_prostate.mha",
        "lesions": lesion_files,
        "detections": f"{case_id}_detections.jsonl",
    }

