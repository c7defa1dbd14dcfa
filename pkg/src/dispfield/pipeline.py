"""Stage orchestration: synth -> stitch -> segment -> mesh -> solve -> eval.

Each stage has an in-memory function and a file-writing wrapper used by the
CLI. Stage outputs are plain files, so any stage can be rerun on its own.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import __version__
from .config import PipelineConfig
from .errors import DispFieldError, StageError
from .field import DisplacementField, assemble_field, compare_fields, sample_grid, scale_to_mm, write_report
from .imgcore import apply_homography, as_gray, dilate3x3, load_image, load_mask, save_image, save_mask
from .mesh import GridSpec, Mesh, conformity_report, mesh_structure
from .nodematch import MatchParams, fill_invalid, nodal_arrays, node_displacements, write_nodes_csv
from .registration import DetectorParams
from .segment import apply_mask, grabcut
from .stitch import (
    Panorama,
    RegistrationParams,
    conversion_coefficient,
    find_dots,
    load_transforms,
    render_views,
    save_transforms,
    stitch_all,
)
from .synth import (
    BeamModel,
    BeamRenderer,
    BeamSpec,
    SceneSpec,
    analytic_field,
    beam_extent_px,
    random_distortions,
    scene_json,
    slice_views,
    tip_load_for,
    true_mask,
    view_layout,
)

log = logging.getLogger("dispfield")


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    config: dict
    version: str = __version__
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    stages: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    status: str = "ok"

    def add_inputs(self, *paths):
        for p in paths:
            self.inputs[str(p)] = sha256_file(p)

    def add_outputs(self, *paths):
        for p in paths:
            self.outputs[str(p)] = sha256_file(p)

    def warn(self, msg):
        log.warning(msg)
        self.warnings.append(msg)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.__dict__, fh, indent=2, sort_keys=True)


class _Timer:
    def __init__(self, manifest, name):
        self.manifest, self.name = manifest, name

    def __enter__(self):
        self.t0 = time.perf_counter()
        log.info("stage %s", self.name)
        return self

    def __exit__(self, exc_type, exc, tb):
        entry = {"name": self.name, "seconds": round(time.perf_counter() - self.t0, 3),
                 "ok": exc_type is None}
        self.manifest.stages.append(entry)
        if exc_type is not None and issubclass(exc_type, DispFieldError) and not isinstance(exc, StageError):
            raise StageError(self.name, str(exc)) from exc
        return False


# --------------------------------------------------------------------------
# in-memory stages

def scene_from(cfg: PipelineConfig):
    s = cfg.synth
    return SceneSpec(width=s.width, height=s.height, mm_per_px=s.mm_per_px, seed=s.seed,
                     background=s.background, noise_sigma=s.noise_sigma,
                     dot_diameter_mm=cfg.field.dot_diameter_mm)


def beam_for(scene):
    """Default beam scaled to the scene: 90% of the width, a third of the height."""
    length = 0.9 * scene.width * scene.mm_per_px
    height = round(scene.height / 3) * scene.mm_per_px
    return BeamSpec(length=length, height=height, inertia=20.0 * height ** 3 / 12.0)


def place_beam(scene, beam):
    x0 = int(round((scene.width - beam.length / scene.mm_per_px) / 2))
    y0 = int(round((scene.height - beam.height / scene.mm_per_px) / 2))
    scene.beam_x, scene.beam_y = x0, y0
    rows = (max(int(y0 * 0.35), 12), scene.height - max(int(y0 * 0.35), 12))
    scene.dot_rows = rows
    return scene


@dataclass
class SynthBundle:
    scene: SceneSpec
    beam: BeamSpec
    reference: np.ndarray
    cases: list  # (name, tip_px, beam, image)
    distortions: list
    views: dict  # name -> ViewSet

    def case_beam(self, name):
        return {c[0]: c[2] for c in self.cases}[name]


def synth_stage(cfg: PipelineConfig):
    scene = scene_from(cfg)
    beam = beam_for(scene)
    place_beam(scene, beam)
    ref, _ = BeamRenderer(beam, scene).render(deflected=False)
    cases = []
    for k, tip in enumerate(cfg.synth.tips_px, start=1):
        b = BeamSpec(beam.length, beam.height, beam.modulus, beam.inertia, tip_load_for(tip, beam, scene))
        img, _ = BeamRenderer(b, scene).render(deflected=True)
        cases.append((f"case{k}", float(tip), b, img))
    n = cfg.synth.n_views
    vw, _ = view_layout(scene.width, n, cfg.synth.overlap)
    if cfg.synth.distortion_px > 0:
        dist = random_distortions(n, (vw, scene.height), cfg.synth.distortion_seed, cfg.synth.distortion_px)
    else:
        dist = [np.eye(3)] * n
    views = {"reference": slice_views(ref, n, cfg.synth.overlap, dist)}
    for name, _, _, img in cases:
        views[name] = slice_views(img, n, cfg.synth.overlap, dist)
    return SynthBundle(scene, beam, ref, cases, dist, views)


def registration_params(cfg):
    r = cfg.registration
    det = DetectorParams(n_octaves=r.n_octaves, scales_per_octave=r.n_scales, sigma=r.sigma,
                         contrast_threshold=r.contrast_threshold, edge_ratio=r.edge_ratio,
                         max_features=r.max_features)
    return RegistrationParams(det, r.ratio_threshold, r.ransac_threshold_px, r.ransac_iters, r.seed)


def stitch_stage(views, cfg, poses=None):
    return stitch_all(views, poses=poses, params=registration_params(cfg))


def rerender(views, pano: Panorama):
    """Warp another set of views through an existing panorama's transforms."""
    h, w = pano.shape
    out = render_views(views, pano.transforms, w, h)
    out.offset = pano.offset
    return out


def auto_rect(scene, beam, pano, margin):
    """Beam rectangle from the scene mapped into the panorama, padded and clipped."""
    x0, y0, bw, bh = beam_extent_px(beam, scene)
    ox, oy = pano.offset
    h, w = pano.shape
    x = max(x0 + ox - margin, 0)
    y = max(y0 + oy - margin, 0)
    x1 = min(x0 + ox + bw + margin, w)
    y1 = min(y0 + oy + bh + margin, h)
    return [int(x), int(y), int(x1 - x), int(y1 - y)]


def segment_stage(image, rect, cfg):
    g = cfg.segment
    return grabcut(image, rect, iterations=g.iterations, k=g.components, gamma=g.gamma, seed=g.seed)


def mesh_stage(mask, cell, origin=(0, 0)):
    return mesh_structure(mask, GridSpec(int(cell), tuple(int(o) for o in origin)))


def match_params(cfg):
    m = cfg.match
    return MatchParams(m.template_size, m.search_radius, m.quality_threshold, m.subpixel)


def solve_stage(reference, deformed, mesh, mask, cfg, threads=1):
    """Node results and the interpolated pixel field."""
    results = node_displacements(reference, deformed, mesh, match_params(cfg), workers=threads)
    fill_invalid(results, mesh)
    uv, ok = nodal_arrays(results)
    fld = assemble_field(mesh, uv, cfg.field.spacing, dilate3x3(mask), node_ok=ok)
    return results, fld


def measure_coefficient(image, mask, cfg):
    """mm/px from the fiducial dots, ignoring everything near the structure."""
    excl = ndimage.binary_dilation(mask, iterations=max(cfg.field.dot_exclusion_px, 1))
    dots = find_dots(image, exclude=excl)
    coef, spread = conversion_coefficient(dots, cfg.field.dot_diameter_mm)
    return coef, spread, dots


def stitch_fidelity(bundle: SynthBundle, pano: Panorama, pano_dots, coefficient, cfg, match_px=5.0):
    """Fiducial round-trip error of the stitched reference and the recovered scale.

    Dots are detected the same way in the master image and the panorama, so
    detector bias cancels; the expected panorama position of a master dot is
    its master position shifted by the canvas offset.
    """
    excl = ndimage.binary_dilation(true_mask(bundle.beam, bundle.scene),
                                   iterations=max(cfg.field.dot_exclusion_px, 1))
    master = find_dots(bundle.reference, exclude=excl)
    ox, oy = pano.offset
    got = np.array([(d.x, d.y) for d in pano_dots]).reshape(-1, 2)
    errors, missed = [], 0
    for d in master:
        if got.size == 0:
            missed += 1
            continue
        dist = np.hypot(got[:, 0] - d.x - ox, got[:, 1] - d.y - oy)
        k = int(np.argmin(dist))
        if dist[k] <= match_px:
            errors.append(float(dist[k]))
        else:
            missed += 1
    err = np.array(errors)
    truth = bundle.scene.mm_per_px
    return {
        "n_master_dots": len(master),
        "n_matched": len(errors),
        "n_missed": missed,
        "max_error_px": float(err.max()) if err.size else None,
        "mean_error_px": float(err.mean()) if err.size else None,
        "coefficient_mm_per_px": coefficient,
        "true_mm_per_px": truth,
        "scale_rel_error": abs(coefficient / truth - 1.0),
    }


def panorama_truth(bundle: SynthBundle, beam, pano: Panorama, spacing):
    """Exact field (px) at panorama samples.

    Each sample is traced back through every view that covers it to the
    master position it shows; the covering views' master positions are
    averaged, mirroring the blend.
    """
    h, w = pano.shape
    xs, ys = sample_grid(w, h, spacing)
    X, Y = np.meshgrid(xs, ys)
    q = np.stack([X.ravel(), Y.ravel()], axis=1)
    vs = bundle.views["reference"]
    acc = np.zeros_like(q)
    cnt = np.zeros(len(q))
    for i, t in enumerate(pano.transforms):
        p = apply_homography(np.linalg.inv(t), q)
        inside = (p[:, 0] >= 0) & (p[:, 0] <= vs.view_width - 1) & (p[:, 1] >= 0) & (p[:, 1] <= h - 1)
        inside &= np.all(np.isfinite(p), axis=1)
        if not inside.any():
            continue
        m = apply_homography(vs.view_to_master(i), p[inside])
        acc[inside] += m
        cnt[inside] += 1
    covered = cnt > 0
    master = np.where(covered[:, None], acc / np.maximum(cnt, 1)[:, None], -1e9)
    sc = bundle.scene
    x0, y0, bw, bh = beam_extent_px(beam, sc)
    mx, my = master[:, 0], master[:, 1]
    inside = covered & (mx >= x0 - 0.5) & (mx <= x0 + bw - 0.5) & (my >= y0 - 0.5) & (my <= y0 + bh - 0.5)
    v = np.where(inside, BeamModel(beam, sc).v_px(np.clip(mx, 0, sc.width)), 0.0)
    shape = (len(ys), len(xs))
    return DisplacementField(xs, ys, np.zeros(shape), v.reshape(shape), inside.reshape(shape), units="px")


def eval_stage(measured: DisplacementField, truth: DisplacementField):
    report = compare_fields(measured, truth)
    tv = np.abs(truth.v[truth.valid])
    report["max_truth_v"] = float(tv.max()) if tv.size else 0.0
    if report["D_v"] is not None and report["max_truth_v"] > 0:
        report["D_v_rel"] = report["D_v"] / report["max_truth_v"]
    else:
        report["D_v_rel"] = None
    return report


# --------------------------------------------------------------------------
# file-writing wrappers

def write_synth(bundle: SynthBundle, out: Path, cfg, manifest: RunManifest):
    out.mkdir(parents=True, exist_ok=True)
    (out / "views").mkdir(exist_ok=True)
    paths = []
    save_image(out / "reference.png", bundle.reference)
    paths.append(out / "reference.png")
    save_mask(out / "truth_mask.png", true_mask(bundle.beam, bundle.scene))
    paths.append(out / "truth_mask.png")
    for name, tip, beam, img in bundle.cases:
        save_image(out / f"{name}.png", img)
        gt = analytic_field(beam, bundle.scene, cfg.field.spacing)
        gt.field.to_csv(out / f"truth_{name}.csv")
        paths += [out / f"{name}.png", out / f"truth_{name}.csv"]
    for name, vs in bundle.views.items():
        for i, v in enumerate(vs.views):
            p = out / "views" / f"{name}_v{i}.png"
            save_image(p, v)
            paths.append(p)
    extra = {"tips_px": [c[1] for c in bundle.cases],
             "loads_N": [c[2].load for c in bundle.cases],
             "case_names": [c[0] for c in bundle.cases],
             "view_starts": bundle.views["reference"].starts,
             "view_width": bundle.views["reference"].view_width,
             "distortions": [np.asarray(d).tolist() for d in bundle.distortions],
             "config": cfg.to_dict()}
    (out / "scene.json").write_text(scene_json(bundle.scene, bundle.beam, [c[1] for c in bundle.cases], extra))
    paths.append(out / "scene.json")
    manifest.add_outputs(*paths)


def write_panorama(pano: Panorama, out: Path, name, manifest, with_transforms=True):
    out.mkdir(parents=True, exist_ok=True)
    save_image(out / f"{name}.png", pano.image)
    save_mask(out / f"{name}_validity.png", pano.validity)
    paths = [out / f"{name}.png", out / f"{name}_validity.png"]
    if with_transforms:
        save_transforms(out / "transforms.json", pano)
        paths.append(out / "transforms.json")
    manifest.add_outputs(*paths)


def _field_outputs(fld, results, out, name, manifest, coefficient):
    from .plotting import plot_field

    write_nodes_csv(out / f"{name}_nodes.csv", results)
    fld.to_csv(out / f"{name}_field_px.csv")
    paths = [out / f"{name}_nodes.csv", out / f"{name}_field_px.csv"]
    shown = fld
    if coefficient:
        shown = scale_to_mm(fld, coefficient)
        shown.to_csv(out / f"{name}_field_mm.csv")
        paths.append(out / f"{name}_field_mm.csv")
    plot_field(shown, out / f"{name}_v.png", "v", title=f"{name}: vertical displacement")
    paths.append(out / f"{name}_v.png")
    manifest.add_outputs(*paths)
    n_filled = sum(r.filled for r in results)
    n_bad = sum(not (r.valid or r.filled) for r in results)
    n_clip = sum(r.note == "search region clipped" for r in results)
    if n_filled:
        manifest.warn(f"{name}: {n_filled} node(s) filled from neighbours")
    if n_bad:
        manifest.warn(f"{name}: {n_bad} node(s) without a usable displacement")
    if n_clip:
        manifest.warn(f"{name}: {n_clip} node search region(s) clipped at the image edge")


@dataclass
class CaseResult:
    name: str
    tip_px: float
    report: dict
    report_px: dict


def run_pipeline(cfg: PipelineConfig, out, threads=1, cells=None):
    """Full synthetic run. Returns ``(manifest, summary)``; writes everything under ``out``.

    ``cells`` switches on the mesh-size sweep: every cell size is meshed
    and solved for every load case after the main run.
    """
    from .plotting import plot_case_metrics, plot_mesh, plot_profile, plot_sweep

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(config=cfg.to_dict())
    summary = {"cases": {}, "conversion": {}}
    try:
        with _Timer(manifest, "synth"):
            bundle = synth_stage(cfg)
            write_synth(bundle, out / "synth", cfg, manifest)
        with _Timer(manifest, "stitch"):
            ref_pano = stitch_stage(bundle.views["reference"].views, cfg)
            write_panorama(ref_pano, out / "stitch", "reference", manifest)
            panos = {}
            for name, *_ in bundle.cases:
                panos[name] = rerender(bundle.views[name].views, ref_pano)
                write_panorama(panos[name], out / "stitch", name, manifest, with_transforms=False)
            summary["stitch"] = {"pair_inliers": ref_pano.pair_inliers, "offset": list(ref_pano.offset),
                                 "shape": list(ref_pano.shape)}
        with _Timer(manifest, "segment"):
            rect = cfg.segment.rect or auto_rect(bundle.scene, bundle.beam, ref_pano, cfg.segment.rect_margin)
            seg = segment_stage(ref_pano.image, rect, cfg)
            seg_dir = out / "segment"
            seg_dir.mkdir(exist_ok=True)
            save_mask(seg_dir / "mask.png", seg.mask)
            save_image(seg_dir / "foreground.png", apply_mask(ref_pano.image, seg.mask))
            (seg_dir / "segment.json").write_text(json.dumps({"rect": rect, "energies": seg.energies}, indent=2))
            manifest.add_outputs(seg_dir / "mask.png", seg_dir / "foreground.png", seg_dir / "segment.json")
            mask = seg.mask
            if any(b > a + 1e-9 * max(1.0, abs(a)) for a, b in zip(seg.energies, seg.energies[1:])):
                manifest.warn("segmentation energy increased between iterations")
        with _Timer(manifest, "mesh"):
            mesh = mesh_stage(mask, cfg.mesh.cell, cfg.mesh.origin)
            mesh_dir = out / "mesh"
            mesh_dir.mkdir(exist_ok=True)
            mesh.save(mesh_dir / "mesh.json")
            plot_mesh(mesh, ref_pano.image, mesh_dir / "mesh.png")
            manifest.add_outputs(mesh_dir / "mesh.json", mesh_dir / "mesh.png")
            if mesh.dropped:
                manifest.warn(f"mesh: {len(mesh.dropped)} boundary fragment(s) below the area floor dropped")
            conf = conformity_report(mesh)
            if any(conf.values()):
                manifest.warn(f"mesh conformity issues: {conf}")
        with _Timer(manifest, "solve"):
            coef = cfg.field.coefficient
            spread = None
            if coef is None:
                coef, spread, dots = measure_coefficient(ref_pano.image, mask, cfg)
                summary["conversion"] = {"coefficient_mm_per_px": coef, "relative_spread": spread,
                                         "n_dots": len(dots), "source": "fiducials"}
                summary["stitch"]["fiducials"] = stitch_fidelity(bundle, ref_pano, dots, coef, cfg)
            else:
                summary["conversion"] = {"coefficient_mm_per_px": coef, "source": "config"}
            solve_dir = out / "solve"
            solve_dir.mkdir(exist_ok=True)
            fields_px = {}
            for name, *_ in bundle.cases:
                results, fld = solve_stage(ref_pano.image, panos[name].image, mesh, mask, cfg, threads)
                fields_px[name] = fld
                _field_outputs(fld, results, solve_dir, name, manifest, coef)
        with _Timer(manifest, "eval"):
            ev_dir = out / "eval"
            ev_dir.mkdir(exist_ok=True)
            names, rs, ds = [], [], []
            for name, tip, beam, _ in bundle.cases:
                truth_px = panorama_truth(bundle, beam, ref_pano, cfg.field.spacing)
                truth_px.to_csv(ev_dir / f"{name}_truth_px.csv")
                rep_px = eval_stage(fields_px[name], truth_px)
                truth_mm = scale_to_mm(truth_px, bundle.scene.mm_per_px)
                meas_mm = scale_to_mm(fields_px[name], coef)
                rep = eval_stage(meas_mm, truth_mm)
                rep["case"] = name
                rep["tip_px"] = tip
                rep["coefficient_mm_per_px"] = coef
                rep["px"] = rep_px
                write_report(ev_dir / f"{name}_report.json", rep)
                row = len(truth_px.ys) // 2
                plot_profile(truth_px.xs[truth_px.valid[row]], fields_px[name].v[row][truth_px.valid[row]],
                             truth_px.v[row][truth_px.valid[row]], ev_dir / f"{name}_profile.png",
                             title=f"{name}: v along the beam axis")
                manifest.add_outputs(ev_dir / f"{name}_truth_px.csv", ev_dir / f"{name}_report.json",
                                     ev_dir / f"{name}_profile.png")
                summary["cases"][name] = rep
                names.append(name)
                rs.append(rep["R_v"] if rep["R_v"] is not None else 0.0)
                ds.append(rep["D_v"] if rep["D_v"] is not None else 0.0)
            if names:
                plot_case_metrics(names, rs, ds, ev_dir / "metrics.png", d_units="mm")
                manifest.add_outputs(ev_dir / "metrics.png")
        if cells:
            with _Timer(manifest, "sweep"):
                summary["sweep"] = sweep(bundle, ref_pano, panos, mask, coef, cfg, cells, out / "sweep",
                                         manifest, threads)
                series_r = {n: summary["sweep"]["cases"][n]["R_v"] for n in summary["sweep"]["cases"]}
                series_d = {n: summary["sweep"]["cases"][n]["D_v"] for n in summary["sweep"]["cases"]}
                plot_sweep(cells, series_r, out / "sweep" / "sweep_R.png", "R_v")
                plot_sweep(cells, series_d, out / "sweep" / "sweep_D.png", "D_v (mm)")
                manifest.add_outputs(out / "sweep" / "sweep_R.png", out / "sweep" / "sweep_D.png")
        with open(out / "summary.json", "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
        manifest.add_outputs(out / "summary.json")
    except StageError:
        manifest.status = "failed"
        manifest.save(out / "manifest.json")
        raise
    manifest.save(out / "manifest.json")
    return manifest, summary


def sweep(bundle, ref_pano, panos, mask, coef, cfg, cells, out, manifest, threads=1):
    """Re-mesh and re-solve every case for each cell size."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    res = {"cells": list(cells), "cases": {}}
    for name, tip, beam, _ in bundle.cases:
        truth_px = panorama_truth(bundle, beam, ref_pano, cfg.field.spacing)
        truth_mm = scale_to_mm(truth_px, bundle.scene.mm_per_px)
        rows = {"R_v": [], "D_v": [], "n_nodes": []}
        for cell in cells:
            mesh = mesh_stage(mask, cell, cfg.mesh.origin)
            results, fld = solve_stage(ref_pano.image, panos[name].image, mesh, mask, cfg, threads)
            rep = eval_stage(scale_to_mm(fld, coef), truth_mm)
            rows["R_v"].append(rep["R_v"])
            rows["D_v"].append(rep["D_v"])
            rows["n_nodes"].append(int(mesh.n_nodes))
        r, d = np.array(rows["R_v"]), np.array(rows["D_v"])
        rows["R_spread"] = float(r.max() - r.min())
        rows["D_rel_spread"] = float((d.max() - d.min()) / d.mean()) if d.mean() > 0 else 0.0
        res["cases"][name] = rows
    with open(out / "sweep.json", "w") as fh:
        json.dump(res, fh, indent=2, sort_keys=True)
    manifest.add_outputs(out / "sweep.json")
    return res
