"""Command line entry point: ``dispfield <stage> [options]``.

Exit codes: 0 success, 2 configuration error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import PipelineConfig, defaults_json, load_config
from .errors import ConfigError, DispFieldError, StageError
from .field import DisplacementField, write_report
from .imgcore import load_image, load_mask, save_image, save_mask
from .mesh import Mesh, conformity_report

log = logging.getLogger("dispfield")

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3
STAGES = ("synth", "stitch", "segment", "mesh", "solve", "eval", "pipeline", "sweep-mesh")


def _common(p):
    p.add_argument("--config", type=Path, help="JSON configuration file")
    p.add_argument("--seed", type=int, help="override the synth, registration and segmentation seeds")
    p.add_argument("--threads", type=int, default=1, help="worker threads for node matching")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")


def build_parser():
    parser = argparse.ArgumentParser(prog="dispfield", description="Structural displacement fields from images.")
    parser.add_argument("--version", action="version", version=f"dispfield {__version__}")
    parser.add_argument("--print-defaults", action="store_true", help="print the default configuration and exit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("synth", help="render the synthetic cantilever fixture")
    _common(p)

    p = sub.add_parser("stitch", help="stitch ordered views into a panorama")
    _common(p)
    p.add_argument("--views", nargs="+", type=Path, required=True, help="view images, left to right")
    p.add_argument("--poses", type=Path, help="pose CSV for foreshortening correction")
    p.add_argument("--transforms", type=Path, help="reuse transforms.json instead of registering")
    p.add_argument("--name", default="panorama")

    p = sub.add_parser("segment", help="GrabCut foreground mask")
    _common(p)
    p.add_argument("--image", type=Path, required=True)
    p.add_argument("--rect", help="x,y,w,h (defaults to segment.rect in the config)")

    p = sub.add_parser("mesh", help="mesh a foreground mask")
    _common(p)
    p.add_argument("--mask", type=Path, required=True)
    p.add_argument("--cell", type=int, help="cell size in px (defaults to mesh.cell)")
    p.add_argument("--image", type=Path, help="background for the overlay figure")

    p = sub.add_parser("solve", help="node displacements and the interpolated field")
    _common(p)
    p.add_argument("--reference", type=Path, required=True)
    p.add_argument("--deformed", type=Path, required=True)
    p.add_argument("--mesh", type=Path, required=True)
    p.add_argument("--mask", type=Path, required=True)
    p.add_argument("--coefficient", type=float, help="mm per px for the mm field")
    p.add_argument("--subpixel", action="store_true", help="enable parabola peak refinement")
    p.add_argument("--name", default="case")

    p = sub.add_parser("eval", help="compare a measured field with a reference field")
    _common(p)
    p.add_argument("--measured", type=Path, required=True)
    p.add_argument("--truth", type=Path, required=True)

    p = sub.add_parser("pipeline", help="synth -> stitch -> segment -> mesh -> solve -> eval")
    _common(p)

    p = sub.add_parser("sweep-mesh", help="full pipeline plus the mesh-size sweep")
    _common(p)
    return parser


def _config(args):
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg.synth.seed = args.seed
        cfg.registration.seed = args.seed
        cfg.segment.seed = args.seed
    if args.threads < 1:
        raise ConfigError("--threads must be at least 1")
    return cfg


def _parse_rect(text):
    try:
        vals = [int(v) for v in text.split(",")]
    except ValueError as exc:
        raise ConfigError(f"bad rectangle {text!r}") from exc
    if len(vals) != 4 or vals[2] <= 0 or vals[3] <= 0:
        raise ConfigError("rectangle must be x,y,w,h with positive size")
    return vals


def cmd_synth(args, cfg, manifest):
    from .pipeline import _Timer, synth_stage, write_synth

    with _Timer(manifest, "synth"):
        bundle = synth_stage(cfg)
        write_synth(bundle, args.out, cfg, manifest)
    print(f"wrote synthetic scene to {args.out}")


def cmd_stitch(args, cfg, manifest):
    from .pipeline import _Timer, stitch_stage, write_panorama
    from .stitch import load_transforms, read_pose_csv, render_views

    manifest.add_inputs(*args.views)
    with _Timer(manifest, "stitch"):
        views = [load_image(p) for p in args.views]
        if args.transforms:
            manifest.add_inputs(args.transforms)
            t = load_transforms(args.transforms)
            if len(t["transforms"]) != len(views):
                raise ConfigError("transforms.json lists a different number of views")
            pano = render_views(views, t["transforms"], t["width"], t["height"])
            pano.offset = tuple(t["offset"])
            write_panorama(pano, args.out, args.name, manifest, with_transforms=False)
        else:
            poses = None
            if args.poses:
                manifest.add_inputs(args.poses)
                poses = read_pose_csv(args.poses)
            pano = stitch_stage(views, cfg, poses)
            write_panorama(pano, args.out, args.name, manifest)
    print(f"panorama {pano.shape[1]}x{pano.shape[0]} written to {args.out}")


def cmd_segment(args, cfg, manifest):
    from .pipeline import _Timer, segment_stage
    from .segment import apply_mask

    rect = _parse_rect(args.rect) if args.rect else cfg.segment.rect
    if rect is None:
        raise ConfigError("segment needs --rect or segment.rect in the config")
    manifest.add_inputs(args.image)
    with _Timer(manifest, "segment"):
        img = load_image(args.image)
        res = segment_stage(img, rect, cfg)
        args.out.mkdir(parents=True, exist_ok=True)
        save_mask(args.out / "mask.png", res.mask)
        save_image(args.out / "foreground.png", apply_mask(img, res.mask))
        (args.out / "segment.json").write_text(json.dumps({"rect": rect, "energies": res.energies}, indent=2))
        manifest.add_outputs(args.out / "mask.png", args.out / "foreground.png", args.out / "segment.json")
    print(f"foreground: {int(res.mask.sum())} px")


def cmd_mesh(args, cfg, manifest):
    from .pipeline import _Timer, mesh_stage
    from .plotting import plot_mesh

    manifest.add_inputs(args.mask)
    with _Timer(manifest, "mesh"):
        mask = load_mask(args.mask)
        mesh = mesh_stage(mask, args.cell or cfg.mesh.cell, cfg.mesh.origin)
        args.out.mkdir(parents=True, exist_ok=True)
        mesh.save(args.out / "mesh.json")
        manifest.add_outputs(args.out / "mesh.json")
        if args.image:
            plot_mesh(mesh, load_image(args.image), args.out / "mesh.png")
            manifest.add_outputs(args.out / "mesh.png")
        conf = conformity_report(mesh)
        if any(conf.values()):
            manifest.warn(f"mesh conformity issues: {conf}")
        if mesh.dropped:
            manifest.warn(f"mesh: {len(mesh.dropped)} boundary fragment(s) below the area floor dropped")
    print(f"mesh: {len(mesh.nodes)} nodes, {len(mesh.elements)} elements")


def cmd_solve(args, cfg, manifest):
    from .pipeline import _field_outputs, _Timer, solve_stage

    if args.subpixel:
        cfg.match.subpixel = True
    coef = args.coefficient if args.coefficient is not None else cfg.field.coefficient
    if coef is not None and not coef > 0:
        raise ConfigError("--coefficient must be positive")
    manifest.add_inputs(args.reference, args.deformed, args.mesh, args.mask)
    with _Timer(manifest, "solve"):
        ref = load_image(args.reference)
        dfm = load_image(args.deformed)
        mesh = Mesh.load(args.mesh)
        mask = load_mask(args.mask)
        results, fld = solve_stage(ref, dfm, mesh, mask, cfg, args.threads)
        args.out.mkdir(parents=True, exist_ok=True)
        _field_outputs(fld, results, args.out, args.name, manifest, coef)
    print(f"{sum(r.valid for r in results)}/{len(results)} nodes matched")


def cmd_eval(args, cfg, manifest):
    from .pipeline import _Timer, eval_stage

    manifest.add_inputs(args.measured, args.truth)
    with _Timer(manifest, "eval"):
        measured = DisplacementField.from_csv(args.measured)
        truth = DisplacementField.from_csv(args.truth)
        if measured.u.shape != truth.u.shape or not (np.array_equal(measured.xs, truth.xs)
                                                     and np.array_equal(measured.ys, truth.ys)):
            raise ConfigError("measured and truth fields use different sample grids")
        if measured.units != truth.units:
            raise ConfigError(f"unit mismatch: {measured.units} vs {truth.units}")
        report = eval_stage(measured, truth)
        args.out.mkdir(parents=True, exist_ok=True)
        write_report(args.out / "report.json", report)
        manifest.add_outputs(args.out / "report.json")
    print(json.dumps({k: report[k] for k in ("R_u", "R_v", "D_u", "D_v", "units", "valid_fraction")}, indent=2))


def cmd_pipeline(args, cfg, manifest, sweep=False):
    from .pipeline import run_pipeline

    man, summary = run_pipeline(cfg, args.out, threads=args.threads, cells=cfg.sweep.cells if sweep else None)
    manifest.__dict__.update(man.__dict__)
    for name, rep in summary["cases"].items():
        print(f"{name}: R_v={rep['R_v']:.6f} D_v={rep['D_v']:.4f} {rep['units']} "
              f"({100 * (rep['D_v_rel'] or 0):.3f}% of max)")
    if sweep:
        for name, rows in summary["sweep"]["cases"].items():
            print(f"{name}: R spread {rows['R_spread']:.2e}, D relative spread {100 * rows['D_rel_spread']:.2f}%")


COMMANDS = {
    "synth": cmd_synth, "stitch": cmd_stitch, "segment": cmd_segment, "mesh": cmd_mesh,
    "solve": cmd_solve, "eval": cmd_eval, "pipeline": cmd_pipeline,
    "sweep-mesh": lambda a, c, m: cmd_pipeline(a, c, m, sweep=True),
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.print_defaults:
        print(defaults_json())
        return EXIT_OK
    if not args.command:
        parser.print_help()
        return EXIT_CONFIG
    from .pipeline import RunManifest

    code = EXIT_OK
    try:
        cfg = _config(args)
        manifest = RunManifest(config=cfg.to_dict())
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        manifest = RunManifest(config={}, status="failed")
        manifest.warn(str(exc))
        code = EXIT_CONFIG
    try:
        if code == EXIT_OK:
            COMMANDS[args.command](args, cfg, manifest)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        manifest.status = "failed"
        code = EXIT_CONFIG
    except StageError as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        manifest.status = "failed"
        code = EXIT_STAGE
    except (DispFieldError, OSError, ValueError) as exc:
        print(f"{args.command} failed: {exc}", file=sys.stderr)
        manifest.status = "failed"
        code = EXIT_STAGE
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        manifest.save(args.out / "manifest.json")
    except OSError as exc:
        print(f"cannot write manifest: {exc}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
