"""Command-line entry point: ``lesion3d <subcommand> ...``.

Subcommands: metrics, assemble, prostate-select, preprocess, augment, phantom, overlay.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .assembly import AssemblyConfig
from .errors import Lesion3DError

log = logging.getLogger("lesion3d")

_ASSEMBLY_FLAGS = {
    "nms_dsc": "nms_dsc_threshold",
    "score_thresh": "score_threshold",
    "link_dsc": "link_dsc_threshold",
    "max_lesions": "max_lesions",
}


def _load_config(path) -> dict:
    if not path:
        return {}
    return json.loads(Path(path).read_text())


def _assembly_config(args) -> AssemblyConfig:
    cfg = _load_config(args.config)
    section = cfg.get("assembly", {k: v for k, v in cfg.items() if k in _ASSEMBLY_FLAGS.values()})
    values = dict(section)
    for flag, name in _ASSEMBLY_FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[name] = v
    return AssemblyConfig.from_dict(values)


def _add_assembly_flags(p):
    p.add_argument("--nms-dsc", type=float, help="DSC above which same-slice contours merge (default 0.5)")
    p.add_argument("--score-thresh", type=float, help="minimum adjacent-slice score (default 0.7)")
    p.add_argument("--link-dsc", type=float, help="minimum adjacent-slice DSC (default 0.41)")
    p.add_argument("--max-lesions", type=int, help="number of lesions to extract (default 5)")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_metrics(args) -> int:
    from .workflows import load_manifest, run_metrics

    cases = load_manifest(args.manifest)
    summary, failures = run_metrics(
        cases, args.out_dir, _assembly_config(args), symmetric=not args.hd_directed, jobs=args.jobs
    )
    for mode, entry in summary["modes"].items():
        parts = [f"{mode}: n={entry['n_cases']}"]
        for name in ("dsc", "hd95_mm", "agreement"):
            if name in entry:
                parts.append(f"{name} {entry[name]['mean']:.4g} ± {entry[name]['sd']:.3g}")
        print("  ".join(parts))
    if failures:
        print(f"{len(failures)} case(s) failed: {', '.join(sorted(failures))}", file=sys.stderr)
        return 1
    return 0


def cmd_assemble(args) -> int:
    from .workflows import run_assemble

    lesions = run_assemble(
        args.detections, args.out_dir, _assembly_config(args), args.prostate_mask, args.reference, args.nz
    )
    for les in lesions:
        z0, z1 = les.z_range
        print(f"rank {les.rank}: score {les.score:.4f} slices {z0}-{z1}")
    return 0


def cmd_prostate_select(args) -> int:
    from .workflows import run_prostate_select

    decisions = run_prostate_select(args.detections, args.reference, args.out_dir, args.truth)
    print(f"{sum(d.present for d in decisions)}/{len(decisions)} slices contain prostate")
    return 0


def cmd_preprocess(args) -> int:
    from .metaimage import load_volume, save_volume
    from .preprocess import apply_rigid, preprocess_volume, resample_volume_inplane
    from .registration import RegistrationOptions, register_rigid
    from .volume import Volume

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sidecar = {"volumes": {}}
    for path in args.inputs:
        vol = load_volume(path)
        res, meta = preprocess_volume(vol, args.target_long, args.hist_eq, args.levels)
        name = Path(path).stem + "_pre.mha"
        save_volume(res, out / name)
        sidecar["volumes"][name] = meta
    if args.register:
        moving_path, fixed_path = args.register
        moving = load_volume(moving_path)
        fixed = load_volume(fixed_path)
        moving = resample_volume_inplane(moving, fixed.spacing[:2])
        # nearest moving slice (by physical z) for every fixed slice, cropped/padded to the fixed grid
        zs_fixed = fixed.origin[2] + np.arange(fixed.nz) * fixed.spacing[2]
        zs_moving = moving.origin[2] + np.arange(moving.nz) * moving.spacing[2]
        pick = np.abs(zs_fixed[:, None] - zs_moving[None, :]).argmin(axis=1)
        data = np.zeros(fixed.dims)
        nx, ny = min(fixed.dims[0], moving.dims[0]), min(fixed.dims[1], moving.dims[1])
        data[:nx, :ny, :] = moving.data[:nx, :ny, pick]
        t = register_rigid(data.mean(axis=2), fixed.data.mean(axis=2), RegistrationOptions())
        warped = np.stack([apply_rigid(data[:, :, z], t) for z in range(fixed.nz)], axis=2)
        name = Path(moving_path).stem + "_registered.mha"
        save_volume(Volume(warped, fixed.spacing, fixed.origin), out / name)
        sidecar["registration"] = {
            "moving": str(moving_path),
            "fixed": str(fixed_path),
            "output": name,
            "transform": t.to_dict(),
            "similarity": "normalized mutual information, 64x64 bins",
            "scope": "single in-plane transform shared by all slices",
        }
    (out / "preprocess.json").write_text(json.dumps(sidecar, indent=2))
    return 0


def cmd_augment(args) -> int:
    from .augment import AugmentConfig, augment_dataset
    from .metaimage import load_mask, load_volume, save_volume
    from .volume import Mask, Volume

    section = _load_config(args.config).get("augment", {})
    cfg = AugmentConfig(**{**section, "mode": args.mode, "seed": args.seed})
    img = load_volume(args.image)
    mask = load_mask(args.mask) if args.mask else None
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for k, rec, aug_img, aug_mask in augment_dataset(img.data, None if mask is None else mask.data, cfg, args.count):
        save_volume(Volume(aug_img, img.spacing, img.origin), out / f"sample_{k:04d}_image.mha")
        if aug_mask is not None:
            save_volume(Mask(aug_mask, img.spacing, img.origin), out / f"sample_{k:04d}_mask.mha")
        doc = {"index": k, "config": cfg.to_dict(), **rec.to_dict()}
        (out / f"sample_{k:04d}_record.json").write_text(json.dumps(doc, indent=2))
    print(f"wrote {args.count} samples to {out}")
    return 0


def cmd_phantom(args) -> int:
    from .phantom import PhantomSpec, generate_phantom, random_phantom_spec
    from .workflows import write_phantom_case

    cfg = _load_config(args.config)
    entries = []
    for i in range(args.cases):
        seed = args.seed + i
        if "phantom" in cfg:
            spec = PhantomSpec.from_dict({**cfg["phantom"], "seed": seed})
        else:
            spec = random_phantom_spec(
                seed, args.lesions, tuple(args.dims), score_jitter=args.jitter, mask_jitter=args.mask_jitter
            )
        case_id = f"case_{i:03d}"
        entries.append(write_phantom_case(generate_phantom(spec), args.out_dir, case_id))
    (Path(args.out_dir) / "manifest.json").write_text(json.dumps(entries, indent=2))
    print(f"wrote {len(entries)} phantom case(s) and manifest.json to {args.out_dir}")
    return 0


def cmd_overlay(args) -> int:
    from .detection_io import read_detections
    from .metaimage import load_mask, load_volume
    from .overlay import CONTOUR_COLORS, Overlay, write_overlays
    from .rle import RleMask, rle_decode

    vol = load_volume(args.volume)
    per_slice: dict = {}
    for mpath in args.mask or []:
        m = load_mask(mpath)
        if not m.same_grid(vol):
            raise Lesion3DError(f"{mpath} does not share the volume grid")
        for z in range(m.nz):
            if m.data[:, :, z].any():
                per_slice.setdefault(z, []).append(Overlay(m.data[:, :, z], CONTOUR_COLORS[1], None, False))
    if args.lesions:
        doc = json.loads(Path(args.lesions).read_text())
        for les in doc["lesions"]:
            color = CONTOUR_COLORS[(les["rank"] - 1) % len(CONTOUR_COLORS)]
            for z, r in les["slices"].items():
                per_slice.setdefault(int(z), []).append(
                    Overlay(rle_decode(RleMask.from_dict(r)), color, f"#{les['rank']} {les['score']:.2f}")
                )
    if args.detections:
        for d in read_detections(args.detections):
            if d.label == "prostate":
                per_slice.setdefault(d.slice, []).append(Overlay(d.mask, CONTOUR_COLORS[2], f"prostate {d.score:.2f}"))
    paths = write_overlays(vol.data, per_slice, args.out_dir)
    print(f"wrote {len(paths)} PNG files to {args.out_dir}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--jobs", type=int, default=1, help="parallel cases (metrics)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out-dir", default="out")
    common.add_argument("--config", help="JSON config file")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="lesion3d", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("metrics", parents=[common], help="evaluate a cohort manifest")
    p.add_argument("manifest")
    p.add_argument("--hd-directed", action="store_true", help="truth->prediction HD95 instead of symmetric")
    _add_assembly_flags(p)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("assemble", parents=[common], help="assemble 3D lesions from detections")
    p.add_argument("detections")
    p.add_argument("--prostate-mask", help="keep only detections touching this mask")
    p.add_argument("--reference", help="volume defining the output grid")
    p.add_argument("--nz", type=int, help="slice count when no reference grid is given")
    _add_assembly_flags(p)
    p.set_defaults(func=cmd_assemble)

    p = sub.add_parser("prostate-select", parents=[common], help="pick the best prostate detection per slice")
    p.add_argument("detections")
    p.add_argument("--reference", required=True, help="volume defining the grid")
    p.add_argument("--truth", help="ground-truth prostate mask for slice sensitivity/specificity")
    p.set_defaults(func=cmd_prostate_select)

    p = sub.add_parser("preprocess", parents=[common], help="resize/pad, normalise, equalise, register")
    p.add_argument("inputs", nargs="*")
    p.add_argument("--target-long", type=int, default=384)
    p.add_argument("--hist-eq", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--levels", type=int, default=256)
    p.add_argument("--register", nargs=2, metavar=("MOVING", "FIXED"))
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("augment", parents=[common], help="write seeded augmented samples")
    p.add_argument("image")
    p.add_argument("--mask")
    p.add_argument("--mode", choices=("prostate", "lesion"), default="prostate")
    p.add_argument("--count", type=int, default=1)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("phantom", parents=[common], help="generate synthetic test cases")
    p.add_argument("--cases", type=int, default=1)
    p.add_argument("--lesions", type=int, default=2)
    p.add_argument("--dims", type=int, nargs=3, default=(96, 96, 24))
    p.add_argument("--jitter", type=float, default=0.0, help="per-slice score jitter (SD)")
    p.add_argument("--mask-jitter", type=float, default=0.0, help="per-slice mask jitter probability")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("overlay", parents=[common], help="render PNG overlays")
    p.add_argument("volume")
    p.add_argument("--mask", action="append", help="mask volume to contour (repeatable)")
    p.add_argument("--lesions", help="lesions.json from 'assemble'")
    p.add_argument("--detections", help="detections file (prostate entries are drawn)")
    p.set_defaults(func=cmd_overlay)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (Lesion3DError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
