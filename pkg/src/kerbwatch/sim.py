"""Scenario simulator: scripted world trajectories -> pixel detections + ground truth.

Every actor follows a piecewise-linear path of timestamped waypoints.  Each
frame, true positions are projected through the inverse geo-frame to a
ground-anchor pixel, perturbed by seeded Gaussian noise, optionally passed
through the forward lens model and wrapped in a constant-size bounding box.
Pairwise collision labels come from a brute-force 1 ms time-stepping oracle
that shares only the model constants with :mod:`kerbwatch.risk`.
"""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .geo import (
    BoundingBox,
    DistortionModel,
    GeoFrame,
    GeoPoint,
    PixelPoint,
    destination_point,
    distort_point,
    geo_to_pixel,
    haversine,
    local_offset,
    offset_geo,
    solve_geoframe,
)
from .ingest_io.stream import DetectionEvent
from .exceptions import InvariantViolation

T0 = 1_726_473_600.0  # 2024-09-16T08:00:00Z
SCENE_ORIGIN = GeoPoint(40.6405, -8.6538)
ORACLE_DT = 1e-3
VRU = frozenset({"person", "bicycle"})

DEFAULT_BBOX = {
    "person": (30.0, 70.0),
    "bicycle": (40.0, 60.0),
    "motorbike": (50.0, 60.0),
    "car": (140.0, 90.0),
    "truck": (200.0, 150.0),
    "bus": (220.0, 160.0),
    "other": (30.0, 30.0),
}


@dataclass(frozen=True)
class OracleParams:
    mu: float = 0.6
    g: float = 9.8
    margin: float = 2.0
    horizon: float = 5.0
    alert_threshold: float = 0.5


@dataclass(frozen=True)
class ActorSpec:
    class_label: str
    path: Tuple[Tuple[float, GeoPoint], ...]
    bbox_size: Tuple[float, float] = (30.0, 70.0)
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "path", tuple((float(t), GeoPoint(*g)) for t, g in self.path))
        if not self.path:
            raise InvariantViolation("actor path needs at least one waypoint")
        times = [t for t, _ in self.path]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise InvariantViolation("waypoint times must be strictly increasing")
        w, h = self.bbox_size
        if not (w > 0 and h > 0):
            raise InvariantViolation("bbox size must be positive")
        object.__setattr__(self, "_times", times)

    @property
    def t_start(self) -> float:
        return self.path[0][0]

    @property
    def t_end(self) -> float:
        return self.path[-1][0]

    def _segment(self, t):
        i = bisect.bisect_right(self._times, t) - 1
        return min(max(i, 0), len(self.path) - 2)

    def position_at(self, t: float) -> Optional[GeoPoint]:
        if t < self.t_start or t > self.t_end:
            return None
        if len(self.path) == 1:
            return self.path[0][1]
        i = self._segment(t)
        (ta, a), (tb, b) = self.path[i], self.path[i + 1]
        f = (t - ta) / (tb - ta)
        return GeoPoint(a.lat + f * (b.lat - a.lat), a.lon + f * (b.lon - a.lon))

    def velocity_at(self, t: float) -> Tuple[float, float]:
        """(east, north) m/s of the path segment in effect at ``t``."""
        if len(self.path) == 1:
            return (0.0, 0.0)
        i = self._segment(t)
        (ta, a), (tb, b) = self.path[i], self.path[i + 1]
        e, n = local_offset(a, b)
        return (e / (tb - ta), n / (tb - ta))


@dataclass(frozen=True, eq=False)
class ScenarioScript:
    geoframe: GeoFrame
    actors: Tuple[ActorSpec, ...]
    frame_rate: float = 25.0
    pixel_noise_sigma: float = 0.0
    confidence: Union[float, Dict[str, float]] = 0.9
    seed: int = 0
    camera_id: str = "sim-cam"
    distortion: Optional[DistortionModel] = None
    drop_probability: float = 0.0
    label_collisions: bool = True
    oracle: OracleParams = OracleParams()
    name: str = "scenario"

    def __post_init__(self):
        object.__setattr__(self, "actors", tuple(self.actors))
        if not self.frame_rate > 0:
            raise InvariantViolation("frame_rate must be positive")
        if not self.pixel_noise_sigma >= 0:
            raise InvariantViolation("pixel_noise_sigma must be >= 0")
        if not 0.0 <= self.drop_probability <= 1.0:
            raise InvariantViolation("drop_probability must lie in [0, 1]")

    def confidence_for(self, class_label: str) -> float:
        if isinstance(self.confidence, dict):
            return float(self.confidence.get(class_label, self.confidence.get("default", 0.9)))
        return float(self.confidence)

    def frame_times(self) -> List[float]:
        t0 = min(a.t_start for a in self.actors)
        t1 = max(a.t_end for a in self.actors)
        n = int(math.floor((t1 - t0) * self.frame_rate + 1e-6))
        return [t0 + k / self.frame_rate for k in range(n + 1)]


@dataclass(frozen=True)
class GroundTruthRecord:
    t: float
    frame_id: int
    actor_id: int
    geo: Optional[GeoPoint]
    speed: float
    distances: Dict[int, float] = field(default_factory=dict)
    collision_imminent: Dict[int, bool] = field(default_factory=dict)
    probability: Dict[int, float] = field(default_factory=dict)
    suppressed: bool = False

    def to_record(self) -> dict:
        return {
            "t": self.t,
            "frame_id": self.frame_id,
            "actor_id": self.actor_id,
            "lat": None if self.geo is None else self.geo.lat,
            "lon": None if self.geo is None else self.geo.lon,
            "speed": self.speed,
            "distances": {str(k): v for k, v in sorted(self.distances.items())},
            "collision_imminent": {str(k): v for k, v in sorted(self.collision_imminent.items())},
            "probability": {str(k): v for k, v in sorted(self.probability.items())},
            "suppressed": self.suppressed,
        }


def oracle_assessment(class_a, pos_a, vel_a, class_b, pos_b, vel_b, params: OracleParams = OracleParams(),
                      dt: float = ORACLE_DT) -> Tuple[bool, float, float, float]:
    """Brute-force alert decision: ``(alert, probability, t_star, d_min)``.

    Both parties are stepped forward at constant velocity every ``dt``
    seconds up to the horizon and the smallest separation is kept.
    """
    e, n = local_offset(pos_a, pos_b)
    rvx, rvy = vel_b[0] - vel_a[0], vel_b[1] - vel_a[1]
    steps = np.arange(int(round(params.horizon / dt)) + 1) * dt
    sep = np.hypot(e + steps * rvx, n + steps * rvy)
    k = int(np.argmin(sep))
    t_star, d_min = float(steps[k]), float(sep[k])

    if class_a in VRU and class_b in VRU:
        return False, 0.0, t_star, d_min
    speed_a, speed_b = math.hypot(*vel_a), math.hypot(*vel_b)
    if class_a in VRU:
        v = speed_b
    elif class_b in VRU:
        v = speed_a
    else:
        v = max(speed_a, speed_b)
    stopping = v * v / (2.0 * params.mu * params.g)
    now = haversine(pos_a, pos_b)
    p = max(0.0, 1.0 - d_min / params.margin) * min(1.0, stopping / max(now, 0.1))
    return p >= params.alert_threshold, p, t_star, d_min


def run_scenario(s: ScenarioScript) -> Tuple[List[DetectionEvent], List[GroundTruthRecord]]:
    """Render a script into a detection stream and a parallel ground-truth stream."""
    rng = np.random.default_rng(s.seed)
    detections: List[DetectionEvent] = []
    truth: List[GroundTruthRecord] = []
    gf = s.geoframe
    for frame_id, t in enumerate(s.frame_times()):
        present = []
        for actor_id, actor in enumerate(s.actors):
            pos = actor.position_at(t)
            if pos is None:
                continue
            anchor = geo_to_pixel(gf, pos)
            if not gf.contains(anchor):
                truth.append(GroundTruthRecord(t, frame_id, actor_id, pos, 0.0, suppressed=True))
                continue
            present.append((actor_id, actor, pos))
            u, v = anchor.u, anchor.v
            if s.pixel_noise_sigma > 0:
                du, dv = rng.normal(0.0, s.pixel_noise_sigma, size=2)
                u, v = u + du, v + dv
            if s.distortion is not None:
                u, v = distort_point(PixelPoint(u, v), s.distortion)
            if s.drop_probability > 0 and rng.random() < s.drop_probability:
                continue
            w, h = actor.bbox_size
            detections.append(DetectionEvent(
                camera_id=s.camera_id,
                frame_id=frame_id,
                t=t,
                bbox=BoundingBox(u - w / 2.0, v - h, u + w / 2.0, v),
                class_label=actor.class_label,
                confidence=s.confidence_for(actor.class_label),
            ))
        for actor_id, actor, pos in present:
            vel = actor.velocity_at(t)
            dists, alerts, probs = {}, {}, {}
            for other_id, other, opos in present:
                if other_id == actor_id:
                    continue
                dists[other_id] = haversine(pos, opos)
                if s.label_collisions:
                    alert, p, _, _ = oracle_assessment(
                        actor.class_label, pos, vel, other.class_label, opos, other.velocity_at(t), s.oracle)
                    alerts[other_id] = alert
                    probs[other_id] = p
            truth.append(GroundTruthRecord(t, frame_id, actor_id, pos, math.hypot(*vel), dists, alerts, probs))
    return detections, truth


# -- scene and fixtures ---------------------------------------------------------


def scene_geoframe(origin: GeoPoint = SCENE_ORIGIN) -> GeoFrame:
    """A 1920x1080 camera looking north over a 30 m x 60 m stretch of road.

    The image trapezoid maps to the ground rectangle east in [-15, 15] m,
    north in [10, 70] m of ``origin``, so the map is genuinely projective.
    """
    corners = [
        ((200.0, 1000.0), (-15.0, 10.0)),
        ((1720.0, 1000.0), (15.0, 10.0)),
        ((1200.0, 400.0), (15.0, 70.0)),
        ((720.0, 400.0), (-15.0, 70.0)),
    ]
    return solve_geoframe([(PixelPoint(*px), offset_geo(origin, e, n)) for px, (e, n) in corners])


def _at(e, n, origin=SCENE_ORIGIN) -> GeoPoint:
    return offset_geo(origin, e, n)


def _static(class_label, pos, t0, t1, name=""):
    return ActorSpec(class_label, ((t0, pos), (t1, pos)), DEFAULT_BBOX[class_label], name)


def _linear(class_label, start_en, velocity_en, t0, duration, name=""):
    e0, n0 = start_en
    ve, vn = velocity_en
    path = ((t0, _at(e0, n0)), (t0 + duration, _at(e0 + ve * duration, n0 + vn * duration)))
    return ActorSpec(class_label, path, DEFAULT_BBOX[class_label], name)


def crosswalk_fixture(noise_sigma: float = 0.0, seed: int = 7, duration: float = 10.0,
                      frame_rate: float = 10.0) -> ScenarioScript:
    """Two pedestrians standing at the ends of an 8.000 m crosswalk."""
    a = _at(-4.0, 40.0)
    b = destination_point(a, 90.0, 8.0)
    actors = (_static("person", a, T0, T0 + duration, "west_kerb"),
              _static("person", b, T0, T0 + duration, "east_kerb"))
    return ScenarioScript(scene_geoframe(), actors, frame_rate=frame_rate, pixel_noise_sigma=noise_sigma,
                          seed=seed, name="crosswalk")


CROSSWALK_LENGTH_M = 8.0


def _decelerating_car(t0, lane_e, n_start, v0, cruise_s, stop_n, dwell_s):
    """Southbound car: cruise at v0, brake uniformly to rest at ``stop_n``, dwell."""
    n_brake = n_start - v0 * cruise_s
    s_brake = n_brake - stop_n
    decel = v0 * v0 / (2.0 * s_brake)
    t_brake = v0 / decel
    path = [(t0, _at(lane_e, n_start)), (t0 + cruise_s, _at(lane_e, n_brake))]
    steps = int(round(t_brake / 0.01))
    for k in range(1, steps + 1):
        tau = t_brake * k / steps
        n = n_brake - (v0 * tau - 0.5 * decel * tau * tau)
        path.append((t0 + cruise_s + tau, _at(lane_e, n)))
    path.append((t0 + cruise_s + t_brake + dwell_s, _at(lane_e, stop_n)))
    return ActorSpec("car", tuple(path), DEFAULT_BBOX["car"], "braking_car")


def collision_fixtures() -> List[ScenarioScript]:
    """Four scripted car/pedestrian encounters at 25 Hz.

    a. car drives head-on at a pedestrian standing in its lane;
    b. car brakes to rest 4 m short of a pedestrian in its lane;
    c. fast car and a crossing pedestrian on a collision course;
    d. car and pedestrian moving on parallel paths 4.75 m apart.

    Meeting times fall on the 1 ms oracle grid relative to every frame.
    """
    gf = scene_geoframe()
    lane = 1.75
    out = []

    ped = _static("person", _at(lane, 30.0), T0, T0 + 3.32, "pedestrian")
    car = _linear("car", (lane, 65.0), (0.0, -10.0), T0, 3.32, "car")
    out.append(ScenarioScript(gf, (ped, car), name="a_head_on"))

    ped = _static("person", _at(lane, 20.0), T0, T0 + 10.2, "pedestrian")
    car = _decelerating_car(T0, lane, 65.0, 10.0, 1.0, 24.0, 3.0)
    out.append(ScenarioScript(gf, (ped, car), name="b_braking"))

    meet_s, v_car, v_ped, meet_n = 3.4, 14.0, 1.4, 60.0
    car = _linear("car", (lane, meet_n - v_car * meet_s), (0.0, v_car), T0, 3.32, "car")
    ped = _linear("person", (lane + v_ped * meet_s, meet_n), (-v_ped, 0.0), T0, 3.32, "pedestrian")
    out.append(ScenarioScript(gf, (ped, car), name="c_crossing"))

    car = _linear("car", (lane, 12.0), (0.0, 10.0), T0, 5.6, "car")
    ped = _linear("person", (6.5, 20.0), (0.0, 1.4), T0, 5.6, "pedestrian")
    out.append(ScenarioScript(gf, (ped, car), name="d_parallel"))
    return out


def constant_velocity_fixture(speed: float = 12.0, heading_deg: float = 0.0, duration: float = 2.0,
                              frame_rate: float = 25.0) -> ScenarioScript:
    """One car crossing the scene centre at constant velocity."""
    he = math.sin(math.radians(heading_deg))
    hn = math.cos(math.radians(heading_deg))
    start = (0.0 - he * speed * duration / 2.0, 40.0 - hn * speed * duration / 2.0)
    car = _linear("car", start, (he * speed, hn * speed), T0, duration, "car")
    return ScenarioScript(scene_geoframe(), (car,), frame_rate=frame_rate, name="constant_velocity")


def pedestrian_count_fixture(n_cols: int = 11, n_rows: int = 6) -> ScenarioScript:
    """A single frame holding ``n_cols * n_rows`` well-separated pedestrians (66 by default)."""
    actors = []
    for r in range(n_rows):
        for c in range(n_cols):
            e = -12.5 + 25.0 * c / max(n_cols - 1, 1)
            n = 15.0 + 5.0 * r
            actors.append(ActorSpec("person", ((T0, _at(e, n)),), DEFAULT_BBOX["person"], f"p{r}_{c}"))
    return ScenarioScript(scene_geoframe(), tuple(actors), label_collisions=False, name="pedestrians")


def busy_scene_fixture(n_objects: int = 30, duration: float = 4.0, frame_rate: float = 25.0,
                       seed: int = 3) -> ScenarioScript:
    """A bench scene with ``n_objects`` actors (one third cars) at constant velocity."""
    rng = np.random.default_rng(seed)
    actors = []
    for i in range(n_objects):
        if i % 3 == 0:
            cls = "car"
            e = float(rng.choice([-5.25, -1.75, 1.75, 5.25]))
            direction = 1.0 if e > 0 else -1.0
            v = (0.0, direction * float(rng.uniform(4.0, 8.0)))
            n0 = 40.0 - v[1] * duration / 2.0
            start = (e, n0)
        else:
            cls = "person"
            start = (float(rng.uniform(-12.0, 12.0)), float(rng.uniform(20.0, 60.0)))
            ang = float(rng.uniform(0.0, 2 * math.pi))
            spd = float(rng.uniform(0.5, 1.8))
            v = (spd * math.sin(ang), spd * math.cos(ang))
        actors.append(_linear(cls, start, v, T0, duration, f"{cls}{i}"))
    return ScenarioScript(scene_geoframe(), tuple(actors), frame_rate=frame_rate, label_collisions=False,
                          name="busy")


FIXTURES = {
    "crosswalk": crosswalk_fixture,
    "collision-a": lambda: collision_fixtures()[0],
    "collision-b": lambda: collision_fixtures()[1],
    "collision-c": lambda: collision_fixtures()[2],
    "collision-d": lambda: collision_fixtures()[3],
    "constant-velocity": constant_velocity_fixture,
    "pedestrians": pedestrian_count_fixture,
    "busy": busy_scene_fixture,
}


# -- script files and stream output ---------------------------------------------


def scenario_to_dict(s: ScenarioScript) -> dict:
    return {
        "name": s.name,
        "camera_id": s.camera_id,
        "correspondences": [{"u": p.u, "v": p.v, "lat": g.lat, "lon": g.lon} for p, g in s.geoframe.correspondences],
        "frame_rate": s.frame_rate,
        "pixel_noise_sigma": s.pixel_noise_sigma,
        "confidence": s.confidence,
        "seed": s.seed,
        "drop_probability": s.drop_probability,
        "label_collisions": s.label_collisions,
        "distortion": None if s.distortion is None else s.distortion.__dict__.copy(),
        "oracle": s.oracle.__dict__.copy(),
        "actors": [
            {"class_label": a.class_label, "name": a.name, "bbox_size": list(a.bbox_size),
             "path": [{"t": t, "lat": g.lat, "lon": g.lon} for t, g in a.path]}
            for a in s.actors
        ],
    }


def scenario_from_dict(doc: dict) -> ScenarioScript:
    gf = solve_geoframe([((c["u"], c["v"]), (c["lat"], c["lon"])) for c in doc["correspondences"]])
    actors = tuple(
        ActorSpec(a["class_label"], tuple((w["t"], GeoPoint(w["lat"], w["lon"])) for w in a["path"]),
                  tuple(a.get("bbox_size", DEFAULT_BBOX[a["class_label"]])), a.get("name", ""))
        for a in doc["actors"]
    )
    dist = doc.get("distortion")
    return ScenarioScript(
        geoframe=gf,
        actors=actors,
        frame_rate=doc.get("frame_rate", 25.0),
        pixel_noise_sigma=doc.get("pixel_noise_sigma", 0.0),
        confidence=doc.get("confidence", 0.9),
        seed=doc.get("seed", 0),
        camera_id=doc.get("camera_id", "sim-cam"),
        distortion=None if dist is None else DistortionModel(**dist),
        drop_probability=doc.get("drop_probability", 0.0),
        label_collisions=doc.get("label_collisions", True),
        oracle=OracleParams(**doc.get("oracle", {})),
        name=doc.get("name", "scenario"),
    )


def load_scenario(path) -> ScenarioScript:
    with open(path, encoding="utf-8") as fh:
        return scenario_from_dict(json.load(fh))


def save_scenario(s: ScenarioScript, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scenario_to_dict(s), fh, indent=2)
        fh.write("\n")


def write_ground_truth(fh, records: Sequence[GroundTruthRecord]) -> None:
    for r in records:
        fh.write(json.dumps(r.to_record()) + "\n")


def scenario_config_dict(s: ScenarioScript, **overrides) -> dict:
    """A pipeline configuration document matching the scenario's camera."""
    doc = {
        "camera_id": s.camera_id,
        "frame": {"width": 1920, "height": 1080},
        "correspondences": [{"u": p.u, "v": p.v, "lat": g.lat, "lon": g.lon} for p, g in s.geoframe.correspondences],
        "friction": {"mu": s.oracle.mu, "g": s.oracle.g},
        "thresholds": {"alert": s.oracle.alert_threshold, "margin_m": s.oracle.margin,
                       "horizon_s": s.oracle.horizon},
    }
    if s.distortion is not None:
        doc["distortion"] = s.distortion.__dict__.copy()
    for k, v in overrides.items():
        if isinstance(v, dict) and isinstance(doc.get(k), dict):
            doc[k] = {**doc[k], **v}
        else:
            doc[k] = v
    return doc
