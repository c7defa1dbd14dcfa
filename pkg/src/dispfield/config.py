"""Strict JSON configuration for the pipeline.

Every section is a dataclass; unknown keys, wrong types and out-of-range
values raise :class:`ConfigError`. ``defaults_json()`` prints the full
schema with default values.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigError


@dataclass
class SynthConfig:
    width: int = 2000
    height: int = 600
    mm_per_px: float = 1.25
    seed: int = 7
    background: str = "gradient"
    noise_sigma: float = 0.0
    tips_px: list = field(default_factory=lambda: [5.0, 10.0, 15.0, 20.0])
    n_views: int = 4
    overlap: float = 0.3
    distortion_px: float = 4.0
    distortion_seed: int = 11


@dataclass
class RegistrationConfig:
    n_octaves: int | None = None
    n_scales: int = 3
    sigma: float = 1.6
    contrast_threshold: float = 0.03
    edge_ratio: float = 10.0
    max_features: int | None = None
    ratio_threshold: float = 0.75
    ransac_threshold_px: float = 3.0
    ransac_iters: int = 2000
    seed: int = 0


@dataclass
class SegmentConfig:
    rect: list | None = None  # x, y, w, h in panorama pixels; None derives it from the synthetic scene
    rect_margin: int = 20
    iterations: int = 5
    components: int = 5
    gamma: float = 50.0
    seed: int = 0


@dataclass
class MeshConfig:
    cell: int = 50
    origin: list = field(default_factory=lambda: [0, 0])


@dataclass
class MatchConfig:
    template_size: int = 81
    search_radius: int = 50
    quality_threshold: float = 0.8
    subpixel: bool = False


@dataclass
class FieldConfig:
    spacing: int = 10
    coefficient: float | None = None  # mm/px; None measures it from the fiducial dots
    dot_diameter_mm: float = 30.0
    dot_exclusion_px: int = 10


@dataclass
class SweepConfig:
    cells: list = field(default_factory=lambda: [50, 69, 88, 106, 125])


@dataclass
class PipelineConfig:
    synth: SynthConfig = dataclasses.field(default_factory=SynthConfig)
    registration: RegistrationConfig = dataclasses.field(default_factory=RegistrationConfig)
    segment: SegmentConfig = dataclasses.field(default_factory=SegmentConfig)
    mesh: MeshConfig = dataclasses.field(default_factory=MeshConfig)
    match: MatchConfig = dataclasses.field(default_factory=MatchConfig)
    field: FieldConfig = dataclasses.field(default_factory=FieldConfig)
    sweep: SweepConfig = dataclasses.field(default_factory=SweepConfig)

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


SECTIONS = {f.name: f.default_factory for f in fields(PipelineConfig)}


def _check_type(section, name, value, default):
    where = f"{section}.{name}"
    if value is None:
        if default is None or name in ("rect",):
            return None
        raise ConfigError(f"{where} may not be null")
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be a boolean")
    elif isinstance(default, int) or (default is None and name in ("n_octaves", "max_features")):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer")
    elif isinstance(default, float) or (default is None and name == "coefficient"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number")
        value = float(value)
    elif isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string")
    elif isinstance(default, list) or name == "rect":
        if not isinstance(value, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                                                  for v in value):
            raise ConfigError(f"{where} must be a list of numbers")
    return value


def _validate(cfg):
    s, r, g, m, t, f = cfg.synth, cfg.registration, cfg.segment, cfg.mesh, cfg.match, cfg.field
    checks = [
        (s.width >= 64 and s.height >= 64, "synth.width/height must be at least 64"),
        (s.mm_per_px > 0, "synth.mm_per_px must be positive"),
        (s.background in ("gradient", "noise"), "synth.background must be 'gradient' or 'noise'"),
        (s.noise_sigma >= 0, "synth.noise_sigma must be non-negative"),
        (all(v >= 0 for v in s.tips_px), "synth.tips_px must be non-negative"),
        (s.n_views >= 1, "synth.n_views must be at least 1"),
        (s.n_views == 1 or 0.1 < s.overlap < 0.9, "synth.overlap must lie in (0.1, 0.9)"),
        (s.distortion_px >= 0, "synth.distortion_px must be non-negative"),
        (r.n_octaves is None or r.n_octaves >= 1, "registration.n_octaves must be at least 1"),
        (r.n_scales >= 1, "registration.n_scales must be at least 1"),
        (r.sigma > 0, "registration.sigma must be positive"),
        (0 < r.ratio_threshold <= 1, "registration.ratio_threshold must lie in (0, 1]"),
        (r.ransac_threshold_px > 0, "registration.ransac_threshold_px must be positive"),
        (r.ransac_iters >= 1, "registration.ransac_iters must be at least 1"),
        (g.rect is None or (len(g.rect) == 4 and g.rect[2] > 0 and g.rect[3] > 0),
         "segment.rect must be [x, y, w, h] with positive size"),
        (g.iterations >= 1, "segment.iterations must be at least 1"),
        (g.components >= 1, "segment.components must be at least 1"),
        (g.gamma >= 0, "segment.gamma must be non-negative"),
        (m.cell >= 8, "mesh.cell must be at least 8"),
        (len(m.origin) == 2, "mesh.origin must be [x, y]"),
        (t.template_size >= 3 and t.template_size % 2 == 1, "match.template_size must be odd and >= 3"),
        (t.search_radius >= 1, "match.search_radius must be at least 1"),
        (-1 <= t.quality_threshold <= 1, "match.quality_threshold must lie in [-1, 1]"),
        (f.spacing >= 1, "field.spacing must be at least 1"),
        (f.coefficient is None or f.coefficient > 0, "field.coefficient must be positive"),
        (f.dot_diameter_mm > 0, "field.dot_diameter_mm must be positive"),
        (all(c >= 8 for c in cfg.sweep.cells) and len(cfg.sweep.cells) >= 1, "sweep.cells must be >= 8"),
    ]
    for ok, msg in checks:
        if not ok:
            raise ConfigError(msg)


def config_from_dict(data):
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    cfg = PipelineConfig()
    for sec, body in data.items():
        if sec not in SECTIONS:
            raise ConfigError(f"unknown configuration section {sec!r}")
        if not isinstance(body, dict):
            raise ConfigError(f"section {sec!r} must be an object")
        target = getattr(cfg, sec)
        known = {f.name: getattr(target, f.name) for f in fields(target)}
        for key, value in body.items():
            if key not in known:
                raise ConfigError(f"unknown key {sec}.{key}")
            setattr(target, key, _check_type(sec, key, value, known[key]))
    _validate(cfg)
    return cfg


def load_config(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    return config_from_dict(data)


def defaults_json():
    return PipelineConfig().to_json()
