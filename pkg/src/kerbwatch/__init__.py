"""kerbwatch: traffic-risk analytics for fixed roadside cameras.

Detections from an upstream object detector are georeferenced through a
four-point pixel-to-ground mapping, tracked, scored pairwise for imminent
collision and summarised into road-state metrics, then published as
telemetry.
"""

from .exceptions import (
    ConfigError,
    CorrectionFailedError,
    DegenerateConfigurationError,
    DomainError,
    InvariantViolation,
    KerbwatchError,
    SingularSystemError,
    SinkUnavailable,
    StreamFormatError,
    StreamOrderError,
)
from .geo import (
    BoundingBox,
    DistortionModel,
    GeoFrame,
    GeoFramer,
    GeoPoint,
    PixelPoint,
    Undistorter,
    haversine,
    pixel_to_geo,
    solve_geoframe,
)
from .metrics import RoadStateMonitor, ZoneMap
from .risk import FrictionContext, PairAssessment, RiskParams, assess_pair, braking_distance
from .track import Track, Tracker

__version__ = "0.1.0"

__all__ = [
    "BoundingBox",
    "ConfigError",
    "CorrectionFailedError",
    "DegenerateConfigurationError",
    "DistortionModel",
    "DomainError",
    "FrictionContext",
    "GeoFrame",
    "GeoFramer",
    "GeoPoint",
    "InvariantViolation",
    "KerbwatchError",
    "PairAssessment",
    "PixelPoint",
    "RiskParams",
    "RoadStateMonitor",
    "SingularSystemError",
    "SinkUnavailable",
    "StreamFormatError",
    "StreamOrderError",
    "Track",
    "Tracker",
    "Undistorter",
    "ZoneMap",
    "assess_pair",
    "braking_distance",
    "haversine",
    "pixel_to_geo",
    "solve_geoframe",
]
