"""Frame-to-frame identity and georeferenced kinematics."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, List, NamedTuple, Optional, Sequence, Tuple

from .geo import BoundingBox, GeoPoint, PixelPoint, local_offset

HISTORY_CAPACITY = 64
EMA_ALPHA = 0.5
MERGE_DT_S = 1e-3
DEFAULT_IOU_THRESHOLD = 0.3
DEFAULT_MAX_MISSES = 5


class Sample(NamedTuple):
    t: float
    geo: GeoPoint
    pixel: Optional[PixelPoint]


@dataclass(eq=False)
class Track:
    """A persistent identity with its georeferenced motion estimate.

    ``velocity`` is ``(east, north)`` in m/s; ``heading`` is degrees
    clockwise from north.  ``in_region`` is False when the latest detection
    fell outside the geo-frame, in which case no sample was recorded.
    """

    track_id: int
    class_label: str
    bbox: BoundingBox
    history: Deque[Sample] = field(default_factory=lambda: deque(maxlen=HISTORY_CAPACITY))
    velocity: Tuple[float, float] = (0.0, 0.0)
    speed: float = 0.0
    acceleration: float = 0.0
    heading: float = 0.0
    age_frames: int = 1
    misses: int = 0
    in_region: bool = True
    has_velocity: bool = False

    @property
    def position(self) -> Optional[GeoPoint]:
        return self.history[-1].geo if self.history else None

    @property
    def last_t(self) -> Optional[float]:
        return self.history[-1].t if self.history else None


@dataclass
class AssociationResult:
    matched: List[Tuple[Track, object]] = field(default_factory=list)
    unmatched_tracks: List[Track] = field(default_factory=list)
    unmatched_detections: List[object] = field(default_factory=list)
    # parallel index views: (track, detection index) and detection indices
    matched_indices: List[Tuple[Track, int]] = field(default_factory=list)
    unmatched_detection_indices: List[int] = field(default_factory=list)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def associate(tracks: Sequence[Track], batch, iou_threshold: float = DEFAULT_IOU_THRESHOLD) -> AssociationResult:
    """Greedy same-class matching in descending IoU.

    Ties are broken by ``(track_id, detection index)`` so the result does not
    depend on the order of ``tracks``.
    """
    if not 0.0 < iou_threshold < 1.0:
        raise ValueError(f"iou_threshold must lie in (0, 1), got {iou_threshold}")
    dets = list(batch.detections)
    candidates = []
    for tr in tracks:
        for j, d in enumerate(dets):
            if d.class_label != tr.class_label:
                continue
            score = iou(tr.bbox, d.bbox)
            if score >= iou_threshold:
                candidates.append((-score, tr.track_id, j, tr))
    candidates.sort(key=lambda c: c[:3])

    result = AssociationResult()
    used_tracks, used_dets = set(), set()
    for _, tid, j, tr in candidates:
        if tid in used_tracks or j in used_dets:
            continue
        used_tracks.add(tid)
        used_dets.add(j)
        result.matched.append((tr, dets[j]))
        result.matched_indices.append((tr, j))
    result.unmatched_tracks = [tr for tr in tracks if tr.track_id not in used_tracks]
    result.unmatched_detection_indices = [j for j in range(len(dets)) if j not in used_dets]
    result.unmatched_detections = [dets[j] for j in result.unmatched_detection_indices]
    return result


def update_kinematics(tr: Track, t: float, g: GeoPoint, pixel: Optional[PixelPoint] = None) -> Track:
    """Append a position sample and refresh velocity, speed, acceleration, heading.

    The track is updated in place and returned.  Samples closer than 1 ms to
    the previous one are averaged into it instead.
    """
    if not tr.history:
        tr.history.append(Sample(t, g, pixel))
        return tr
    last = tr.history[-1]
    dt = t - last.t
    if dt <= 0.0:
        raise ValueError(f"sample time {t} does not follow last sample {last.t}")
    if dt < MERGE_DT_S:
        merged = GeoPoint((last.geo.lat + g.lat) / 2.0, (last.geo.lon + g.lon) / 2.0)
        tr.history[-1] = Sample(last.t, merged, last.pixel)
        return tr

    east, north = local_offset(last.geo, g)
    raw = (east / dt, north / dt)
    if tr.has_velocity:
        ve = EMA_ALPHA * raw[0] + (1.0 - EMA_ALPHA) * tr.velocity[0]
        vn = EMA_ALPHA * raw[1] + (1.0 - EMA_ALPHA) * tr.velocity[1]
    else:
        ve, vn = raw
    speed = math.hypot(ve, vn)
    tr.acceleration = (speed - tr.speed) / dt if tr.has_velocity else 0.0
    tr.velocity = (ve, vn)
    tr.speed = speed
    if speed > 1e-9:
        tr.heading = math.degrees(math.atan2(ve, vn)) % 360.0
    tr.has_velocity = True
    tr.history.append(Sample(t, g, pixel))
    return tr


def prune(tracks: Sequence[Track], max_misses: int = DEFAULT_MAX_MISSES) -> List[Track]:
    if max_misses < 1:
        raise ValueError("max_misses must be >= 1")
    return [tr for tr in tracks if tr.misses <= max_misses]


class Tracker:
    """Owns track identities for one camera.

    Ids come from a monotonically increasing counter and are never reused.
    """

    def __init__(self, iou_threshold=DEFAULT_IOU_THRESHOLD, max_misses=DEFAULT_MAX_MISSES):
        self.iou_threshold = iou_threshold
        self.max_misses = max_misses
        self.tracks: List[Track] = []
        self._next_id = 1

    def step(self, batch, geos: Sequence[Optional[GeoPoint]], pixels=None) -> List[Track]:
        """Advance one frame; return the tracks observed in it, ordered by id.

        ``geos[i]`` is the georeferenced anchor of ``batch.detections[i]`` or
        None when it fell outside the geo-frame.
        """
        if pixels is None:
            pixels = [None] * len(batch.detections)
        res = associate(self.tracks, batch, self.iou_threshold)
        observed = []
        for tr, j in res.matched_indices:
            det = batch.detections[j]
            tr.bbox = det.bbox
            tr.misses = 0
            tr.age_frames += 1
            tr.in_region = geos[j] is not None
            if tr.in_region:
                update_kinematics(tr, batch.t, geos[j], pixels[j])
            observed.append(tr)
        for tr in res.unmatched_tracks:
            tr.misses += 1
        for j in res.unmatched_detection_indices:
            det = batch.detections[j]
            tr = Track(self._next_id, det.class_label, det.bbox)
            self._next_id += 1
            tr.in_region = geos[j] is not None
            if tr.in_region:
                update_kinematics(tr, batch.t, geos[j], pixels[j])
            self.tracks.append(tr)
            observed.append(tr)
        self.tracks = prune(self.tracks, self.max_misses)
        observed.sort(key=lambda tr: tr.track_id)
        return observed
