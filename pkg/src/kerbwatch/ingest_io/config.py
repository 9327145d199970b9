"""Pipeline configuration file (JSON).

Minimal example::

    {
      "camera_id": "cam-01",
      "frame": {"width": 1920, "height": 1080},
      "correspondences": [
        {"u": 200, "v": 1000, "lat": 40.6400, "lon": -8.6540},
        ...four entries in total...
      ]
    }

Optional sections and their defaults are listed in ``DEFAULTS``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

from ..exceptions import ConfigError, DegenerateConfigurationError, InvariantViolation, SingularSystemError
from ..geo import DistortionModel, GeoFrame, GeoPoint, PixelPoint, solve_geoframe

DEFAULTS = {
    "thresholds": {
        "confidence": 0.6,
        "iou_association": 0.3,
        "alert": 0.5,
        "margin_m": 2.0,
        "horizon_s": 5.0,
        "max_misses": 5,
    },
    "friction": {"mu": 0.6, "g": 9.8},
    "windows": {"road_state_s": 60.0, "order_tolerance_s": 1.0},
    "sinks": {"mqtt_url": None, "csv_dir": None, "buffer_limit": 10_000},
    "zone_history": None,
}

_DISTORTION_FIELDS = ("fx", "fy", "cx", "cy", "k1", "k2", "k3", "p1", "p2")


@dataclass
class PipelineConfig:
    camera_id: str
    frame_width: int
    frame_height: int
    geoframe: GeoFrame
    distortion: Optional[DistortionModel] = None
    confidence_threshold: float = 0.6
    iou_threshold: float = 0.3
    alert_threshold: float = 0.5
    margin_m: float = 2.0
    horizon_s: float = 5.0
    max_misses: int = 5
    mu: float = 0.6
    g: float = 9.8
    window_s: float = 60.0
    order_tolerance_s: float = 1.0
    mqtt_url: Optional[str] = None
    csv_dir: Optional[str] = None
    buffer_limit: int = 10_000
    zone_history: Optional[str] = None
    extra: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        d = {
            "camera_id": self.camera_id,
            "frame": {"width": self.frame_width, "height": self.frame_height},
            "correspondences": [
                {"u": p.u, "v": p.v, "lat": g.lat, "lon": g.lon} for p, g in self.geoframe.correspondences
            ],
            "thresholds": {
                "confidence": self.confidence_threshold,
                "iou_association": self.iou_threshold,
                "alert": self.alert_threshold,
                "margin_m": self.margin_m,
                "horizon_s": self.horizon_s,
                "max_misses": self.max_misses,
            },
            "friction": {"mu": self.mu, "g": self.g},
            "windows": {"road_state_s": self.window_s, "order_tolerance_s": self.order_tolerance_s},
            "sinks": {"mqtt_url": self.mqtt_url, "csv_dir": self.csv_dir, "buffer_limit": self.buffer_limit},
            "zone_history": self.zone_history,
        }
        if self.distortion is not None:
            d["distortion"] = asdict(self.distortion)
        return d


def _require(doc, key, where=""):
    if not isinstance(doc, dict) or key not in doc:
        name = f"{where}.{key}" if where else key
        raise ConfigError(f"missing required field '{name}'", field=name)
    return doc[key]


def _number(value, name, *, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigError(f"field '{name}' must be a finite number, got {value!r}", field=name)
    if integer and int(value) != value:
        raise ConfigError(f"field '{name}' must be an integer, got {value!r}", field=name)
    return int(value) if integer else float(value)


def _section(doc, name):
    sec = dict(DEFAULTS[name])
    given = doc.get(name) or {}
    if not isinstance(given, dict):
        raise ConfigError(f"field '{name}' must be an object", field=name)
    unknown = set(given) - set(sec)
    if unknown:
        raise ConfigError(f"unknown keys in '{name}': {sorted(unknown)}", field=f"{name}.{sorted(unknown)[0]}")
    sec.update(given)
    return sec


def _check(cond, invariant, message):
    if not cond:
        raise ConfigError(message, invariant=invariant)


def parse_correspondences(items) -> list:
    if not isinstance(items, list) or len(items) != 4:
        n = len(items) if isinstance(items, list) else "non-list"
        raise ConfigError(f"field 'correspondences' must hold exactly 4 entries, got {n}", field="correspondences")
    pairs = []
    for i, c in enumerate(items):
        vals = [_number(_require(c, k, f"correspondences[{i}]"), f"correspondences[{i}].{k}")
                for k in ("u", "v", "lat", "lon")]
        try:
            pairs.append((PixelPoint(vals[0], vals[1]), GeoPoint(vals[2], vals[3])))
        except InvariantViolation as exc:
            raise ConfigError(str(exc), invariant=f"correspondences[{i}].range") from exc
    return pairs


def build_geoframe(pairs) -> GeoFrame:
    try:
        return solve_geoframe(pairs)
    except DegenerateConfigurationError as exc:
        raise ConfigError(f"geoframe: {exc}", invariant="geoframe.non_collinear") from exc
    except SingularSystemError as exc:
        raise ConfigError(f"geoframe: {exc}", invariant="geoframe.invertible") from exc


def config_from_dict(doc: dict) -> PipelineConfig:
    """Validate a parsed configuration document and apply defaults."""
    if not isinstance(doc, dict):
        raise ConfigError("configuration root must be an object", field="<root>")
    camera_id = _require(doc, "camera_id")
    if not isinstance(camera_id, str) or not camera_id:
        raise ConfigError("field 'camera_id' must be a non-empty string", field="camera_id")
    frame = _require(doc, "frame")
    width = _number(_require(frame, "width", "frame"), "frame.width", integer=True)
    height = _number(_require(frame, "height", "frame"), "frame.height", integer=True)
    _check(width > 0 and height > 0, "frame.positive", "frame width and height must be positive")

    pairs = parse_correspondences(_require(doc, "correspondences"))
    for i, (p, _) in enumerate(pairs):
        _check(0 <= p.u <= width and 0 <= p.v <= height, "correspondences.in_frame",
               f"correspondence {i} pixel ({p.u}, {p.v}) lies outside the {width}x{height} frame")
    geoframe = build_geoframe(pairs)

    distortion = None
    if doc.get("distortion") is not None:
        dd = doc["distortion"]
        vals = {}
        for k in _DISTORTION_FIELDS:
            if k in ("fx", "fy", "cx", "cy"):
                vals[k] = _number(_require(dd, k, "distortion"), f"distortion.{k}")
            else:
                vals[k] = _number(dd.get(k, 0.0), f"distortion.{k}")
        try:
            distortion = DistortionModel(**vals)
        except InvariantViolation as exc:
            raise ConfigError(f"distortion: {exc}", invariant="distortion.focal_positive") from exc

    th = _section(doc, "thresholds")
    fr = _section(doc, "friction")
    win = _section(doc, "windows")
    sinks = _section(doc, "sinks")

    cfg = PipelineConfig(
        camera_id=camera_id,
        frame_width=width,
        frame_height=height,
        geoframe=geoframe,
        distortion=distortion,
        confidence_threshold=_number(th["confidence"], "thresholds.confidence"),
        iou_threshold=_number(th["iou_association"], "thresholds.iou_association"),
        alert_threshold=_number(th["alert"], "thresholds.alert"),
        margin_m=_number(th["margin_m"], "thresholds.margin_m"),
        horizon_s=_number(th["horizon_s"], "thresholds.horizon_s"),
        max_misses=_number(th["max_misses"], "thresholds.max_misses", integer=True),
        mu=_number(fr["mu"], "friction.mu"),
        g=_number(fr["g"], "friction.g"),
        window_s=_number(win["road_state_s"], "windows.road_state_s"),
        order_tolerance_s=_number(win["order_tolerance_s"], "windows.order_tolerance_s"),
        mqtt_url=sinks["mqtt_url"],
        csv_dir=sinks["csv_dir"],
        buffer_limit=_number(sinks["buffer_limit"], "sinks.buffer_limit", integer=True),
        zone_history=doc.get("zone_history"),
    )
    validate_config(cfg)
    return cfg


def validate_config(cfg: PipelineConfig) -> None:
    """Re-check numeric invariants, e.g. after CLI or environment overrides."""
    _check(0.0 <= cfg.confidence_threshold <= 1.0, "thresholds.confidence.range", "confidence threshold must lie in [0, 1]")
    _check(0.0 < cfg.iou_threshold < 1.0, "thresholds.iou_association.range", "association IoU threshold must lie in (0, 1)")
    _check(0.0 <= cfg.alert_threshold <= 1.0, "thresholds.alert.range", "alert threshold must lie in [0, 1]")
    _check(cfg.margin_m > 0, "thresholds.margin_m.positive", "margin must be positive")
    _check(cfg.horizon_s > 0, "thresholds.horizon_s.positive", "horizon must be positive")
    _check(cfg.max_misses >= 1, "thresholds.max_misses.min", "max_misses must be >= 1")
    _check(0.0 < cfg.mu <= 1.5, "friction.mu.range", "mu must lie in (0, 1.5]")
    _check(9.7 <= cfg.g <= 9.9, "friction.g.range", "g must lie in [9.7, 9.9]")
    _check(cfg.window_s > 0, "windows.road_state_s.positive", "road-state window must be positive")
    _check(cfg.order_tolerance_s >= 0, "windows.order_tolerance_s.nonneg", "order tolerance must be >= 0")
    _check(cfg.buffer_limit >= 1, "sinks.buffer_limit.min", "buffer limit must be >= 1")


def load_config(path) -> PipelineConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})", field="<root>") from exc
    return config_from_dict(doc)


def save_config(cfg: PipelineConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, indent=2)
        fh.write("\n")
