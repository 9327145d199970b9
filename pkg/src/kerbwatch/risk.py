"""Braking distance, closest approach and pairwise collision risk."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import FrozenSet, Iterable, List, Optional, Sequence, Tuple, Union

from .exceptions import DomainError, InvariantViolation
from .geo import haversine, local_offset

DEFAULT_MU = 0.6
DEFAULT_G = 9.8
DEFAULT_MARGIN_M = 2.0
DEFAULT_HORIZON_S = 5.0
DEFAULT_ALERT_THRESHOLD = 0.5
MIN_DISTANCE_M = 0.1
VRU_CLASSES = frozenset({"person", "bicycle"})


@dataclass(frozen=True)
class FrictionContext:
    mu: float = DEFAULT_MU
    g: float = DEFAULT_G

    def __post_init__(self):
        if not 0.0 < self.mu <= 1.5:
            raise InvariantViolation(f"mu must lie in (0, 1.5], got {self.mu}")
        if not 9.7 <= self.g <= 9.9:
            raise InvariantViolation(f"g must lie in [9.7, 9.9], got {self.g}")


@dataclass(frozen=True)
class VruPolicy:
    """Road users assumed able to stop instantly."""

    vru_classes: FrozenSet[str] = VRU_CLASSES
    instant_stop: bool = True

    def __post_init__(self):
        object.__setattr__(self, "vru_classes", frozenset(self.vru_classes))
        if self.instant_stop is not True:
            raise InvariantViolation("only the instant-stop VRU policy is supported")

    def is_vru(self, class_label: str) -> bool:
        return class_label in self.vru_classes


@dataclass(frozen=True)
class RiskParams:
    margin: float = DEFAULT_MARGIN_M
    horizon: float = DEFAULT_HORIZON_S
    alert_threshold: float = DEFAULT_ALERT_THRESHOLD

    def __post_init__(self):
        if not self.margin > 0:
            raise InvariantViolation("margin must be positive")
        if not self.horizon > 0:
            raise InvariantViolation("horizon must be positive")
        if not 0.0 <= self.alert_threshold <= 1.0:
            raise InvariantViolation("alert_threshold must lie in [0, 1]")


@dataclass(frozen=True)
class PairAssessment:
    track_a: int
    track_b: int
    class_a: str
    class_b: str
    cross_class: bool
    distance_now: float
    t_star: float
    d_min: float
    braking_distance: float
    probability: float
    alert: bool
    t: float

    def __post_init__(self):
        if self.distance_now < 0:
            raise InvariantViolation("distance_now must be >= 0")
        if not 0.0 <= self.probability <= 1.0:
            raise InvariantViolation(f"probability {self.probability} outside [0, 1]")


@dataclass(frozen=True)
class OutsideRegion:
    """Marker for a pair skipped because a track left the geo-frame."""

    track_a: int
    track_b: int


def braking_distance(v: float, ctx: FrictionContext = FrictionContext()) -> float:
    """Stopping distance ``v**2 / (2 mu g)`` in metres under uniform deceleration."""
    if not v >= 0.0:
        raise DomainError(f"speed must be non-negative, got {v}")
    return v * v / (2.0 * ctx.mu * ctx.g)


def closest_approach(p_rel, v_rel, horizon: float) -> Tuple[float, float]:
    """Time and distance of minimum separation under constant velocity.

    ``p_rel`` and ``v_rel`` are 2-vectors of relative position (m) and
    velocity (m/s).  The time is clamped to ``[0, horizon]``.
    """
    if not horizon > 0:
        raise DomainError("horizon must be positive")
    px, py = p_rel
    vx, vy = v_rel
    vv = vx * vx + vy * vy
    if math.sqrt(vv) < 1e-9:
        t_star = 0.0
    else:
        t_star = min(max(-(px * vx + py * vy) / vv, 0.0), horizon)
    return t_star, math.hypot(px + t_star * vx, py + t_star * vy)


def collision_probability(d_min: float, distance_now: float, braking: float, margin: float) -> float:
    geometric = max(0.0, 1.0 - d_min / margin)
    urgency = min(1.0, braking / max(distance_now, MIN_DISTANCE_M))
    return geometric * urgency


def vehicle_speed(class_a, speed_a, class_b, speed_b, policy: VruPolicy) -> Optional[float]:
    """Speed of the party whose braking matters; None when both are VRUs."""
    vru_a, vru_b = policy.is_vru(class_a), policy.is_vru(class_b)
    if vru_a and vru_b:
        return None
    if vru_a:
        return speed_b
    if vru_b:
        return speed_a
    return max(speed_a, speed_b)


def assess_pair(
    a,
    b,
    ctx: FrictionContext = FrictionContext(),
    policy: VruPolicy = VruPolicy(),
    params: RiskParams = RiskParams(),
) -> Union[PairAssessment, OutsideRegion]:
    """Assess collision risk between two tracks at their latest samples."""
    if not (a.in_region and b.in_region):
        return OutsideRegion(a.track_id, b.track_id)
    if len(a.history) < 2 or len(b.history) < 2:
        raise ValueError("both tracks need at least two history samples")
    pa, pb = a.position, b.position
    distance_now = haversine(pa, pb)
    p_rel = local_offset(pa, pb)
    v_rel = (b.velocity[0] - a.velocity[0], b.velocity[1] - a.velocity[1])
    t_star, d_min = closest_approach(p_rel, v_rel, params.horizon)

    v_party = vehicle_speed(a.class_label, a.speed, b.class_label, b.speed, policy)
    if v_party is None:
        braking, probability = 0.0, 0.0
    else:
        braking = braking_distance(v_party, ctx)
        probability = collision_probability(d_min, distance_now, braking, params.margin)
    alert = probability >= params.alert_threshold and t_star <= params.horizon
    return PairAssessment(
        track_a=a.track_id,
        track_b=b.track_id,
        class_a=a.class_label,
        class_b=b.class_label,
        cross_class=a.class_label != b.class_label,
        distance_now=distance_now,
        t_star=t_star,
        d_min=d_min,
        braking_distance=braking,
        probability=probability,
        alert=alert,
        t=max(a.last_t, b.last_t),
    )


def assess_all(
    tracks: Sequence,
    ctx: FrictionContext = FrictionContext(),
    policy: VruPolicy = VruPolicy(),
    params: RiskParams = RiskParams(),
) -> List[Union[PairAssessment, OutsideRegion]]:
    """All-pairs assessment ordered by ``(track_a, track_b)`` with ``track_a < track_b``."""
    ordered = sorted(tracks, key=lambda tr: tr.track_id)
    out = []
    for i, a in enumerate(ordered):
        for b in ordered[i + 1:]:
            out.append(assess_pair(a, b, ctx, policy, params))
    return out


def annotate(assessments: Iterable, objects: Iterable = ()) -> List[dict]:
    """Renderer-agnostic display hints.

    Pairs of different classes go on the red channel with intensity equal
    to their collision probability, same-class pairs on blue.  Each object
    (anything with ``track_id`` and ``speed``) gets a green speed label.
    """
    out = []
    for pa in assessments:
        if isinstance(pa, OutsideRegion):
            continue
        if pa.cross_class:
            out.append({"kind": "pair", "track_a": pa.track_a, "track_b": pa.track_b,
                        "channel": "red", "intensity": pa.probability})
        else:
            out.append({"kind": "pair", "track_a": pa.track_a, "track_b": pa.track_b,
                        "channel": "blue", "intensity": 0.0})
    for obj in objects:
        out.append({"kind": "object", "track_id": obj.track_id,
                    "label": f"{obj.speed:.1f} m/s", "channel": "green"})
    return out
