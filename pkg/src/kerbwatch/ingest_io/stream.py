"""Newline-delimited detection stream: record types, parsing, reordering."""

from __future__ import annotations

import heapq
import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, List, Optional, Tuple

from ..exceptions import InvariantViolation, StreamFormatError, StreamOrderError
from ..geo import BoundingBox, GeoPoint

log = logging.getLogger(__name__)

CLASS_LABELS = ("person", "bicycle", "motorbike", "car", "truck", "bus", "other")
STREAM_SCHEMA = "kerbwatch.detections"
STREAM_VERSION = 1
ORDER_TOLERANCE_S = 1.0

RECORD_FIELDS = (
    "camera_id",
    "frame_id",
    "t",
    "x_min",
    "y_min",
    "x_max",
    "y_max",
    "class_label",
    "confidence",
    "detector_track_id",
)


@dataclass(frozen=True)
class DetectionEvent:
    camera_id: str
    frame_id: int
    t: float
    bbox: BoundingBox
    class_label: str
    confidence: float
    detector_track_id: Optional[int] = None

    def __post_init__(self):
        if not isinstance(self.camera_id, str) or not self.camera_id:
            raise InvariantViolation("camera_id must be a non-empty string")
        if isinstance(self.frame_id, bool) or not isinstance(self.frame_id, int):
            raise InvariantViolation(f"frame_id must be an integer, got {self.frame_id!r}")
        if not math.isfinite(self.t):
            raise InvariantViolation(f"timestamp must be finite, got {self.t!r}")
        if self.class_label not in CLASS_LABELS:
            raise InvariantViolation(f"unknown class label {self.class_label!r}")
        if not 0.0 <= self.confidence <= 1.0:
            raise InvariantViolation(f"confidence {self.confidence} outside [0, 1]")
        if self.detector_track_id is not None and (
            isinstance(self.detector_track_id, bool) or not isinstance(self.detector_track_id, int)
        ):
            raise InvariantViolation("detector_track_id must be an integer or null")

    def to_record(self) -> dict:
        b = self.bbox
        return {
            "camera_id": self.camera_id,
            "frame_id": self.frame_id,
            "t": self.t,
            "x_min": b.x_min,
            "y_min": b.y_min,
            "x_max": b.x_max,
            "y_max": b.y_max,
            "class_label": self.class_label,
            "confidence": self.confidence,
            "detector_track_id": self.detector_track_id,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "DetectionEvent":
        missing = [k for k in RECORD_FIELDS if k not in rec and k != "detector_track_id"]
        if missing:
            raise InvariantViolation(f"missing fields: {', '.join(missing)}")
        for k in ("t", "x_min", "y_min", "x_max", "y_max", "confidence"):
            if isinstance(rec[k], bool) or not isinstance(rec[k], (int, float)):
                raise InvariantViolation(f"field {k} must be numeric")
        return cls(
            camera_id=rec["camera_id"],
            frame_id=rec["frame_id"],
            t=float(rec["t"]),
            bbox=BoundingBox(
                float(rec["x_min"]), float(rec["y_min"]), float(rec["x_max"]), float(rec["y_max"])
            ),
            class_label=rec["class_label"],
            confidence=float(rec["confidence"]),
            detector_track_id=rec.get("detector_track_id"),
        )


@dataclass(frozen=True)
class FrameBatch:
    camera_id: str
    frame_id: int
    t: float
    detections: Tuple[DetectionEvent, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "detections", tuple(self.detections))
        for d in self.detections:
            if (d.camera_id, d.frame_id, d.t) != (self.camera_id, self.frame_id, self.t):
                raise InvariantViolation(
                    f"detection ({d.camera_id}, {d.frame_id}, {d.t}) does not belong to "
                    f"frame ({self.camera_id}, {self.frame_id}, {self.t})"
                )

    def __len__(self):
        return len(self.detections)


@dataclass(frozen=True)
class ObjectMetadata:
    camera_id: str
    track_id: int
    class_label: str
    geo: GeoPoint
    speed: float
    heading: float
    t: float

    def __post_init__(self):
        if not self.speed >= 0.0:
            raise InvariantViolation(f"speed must be >= 0, got {self.speed}")
        if not 0.0 <= self.heading < 360.0:
            raise InvariantViolation(f"heading must lie in [0, 360), got {self.heading}")


def stream_header() -> str:
    return json.dumps({"schema": STREAM_SCHEMA, "version": STREAM_VERSION})


def format_detection(ev: DetectionEvent) -> str:
    """One stream line (without trailing newline) in fixed field order."""
    return json.dumps(ev.to_record(), allow_nan=False)


def write_detection_stream(fh, events: Iterable[DetectionEvent]) -> int:
    fh.write(stream_header() + "\n")
    n = 0
    for ev in events:
        fh.write(format_detection(ev) + "\n")
        n += 1
    return n


def parse_detection(line: str) -> DetectionEvent:
    rec = json.loads(line)
    if not isinstance(rec, dict):
        raise InvariantViolation("record is not an object")
    return DetectionEvent.from_record(rec)


def filter_by_confidence(batch: FrameBatch, threshold: float) -> FrameBatch:
    """Keep detections whose confidence is at least ``threshold``."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    kept = tuple(d for d in batch.detections if d.confidence >= threshold)
    return replace(batch, detections=kept)


@dataclass
class _Pending:
    t: float
    detections: List[DetectionEvent] = field(default_factory=list)


class DetectionStreamReader:
    """Iterate :class:`FrameBatch` objects from a newline-delimited stream.

    Records are grouped by ``(camera_id, frame_id)`` and held until stream
    time has advanced ``order_tolerance`` seconds past them, so frames that
    arrive slightly out of order are emitted sorted by ``(t, frame_id)``.
    Malformed records are skipped and listed in :attr:`rejects`.
    """

    def __init__(self, source, *, order_tolerance: float = ORDER_TOLERANCE_S):
        self.source = source
        self.order_tolerance = order_tolerance
        self.rejects: List[Tuple[int, str]] = []
        self.records_read = 0

    @property
    def reject_count(self) -> int:
        return len(self.rejects)

    def _lines(self) -> Iterator[Tuple[int, str]]:
        for lineno, raw in enumerate(self.source, start=1):
            if isinstance(raw, bytes):
                raw = raw.decode("utf-8")
            line = raw.strip()
            if line:
                yield lineno, line

    def _reject(self, lineno: int, reason: str):
        log.warning("rejected record at line %d: %s", lineno, reason)
        self.rejects.append((lineno, reason))

    def __iter__(self) -> Iterator[FrameBatch]:
        pending = {}
        heap = []
        last_emitted = {}
        max_t = -math.inf
        first = True

        def pop_ready(limit):
            while heap and heap[0][0] < limit:
                t, frame_id, camera_id = heapq.heappop(heap)
                entry = pending.pop((camera_id, frame_id))
                last_emitted[camera_id] = frame_id
                yield FrameBatch(camera_id, frame_id, t, tuple(entry.detections))

        for lineno, line in self._lines():
            if first:
                first = False
                try:
                    head = json.loads(line)
                except json.JSONDecodeError:
                    head = None
                if isinstance(head, dict) and "schema" in head:
                    if head.get("schema") != STREAM_SCHEMA or head.get("version") != STREAM_VERSION:
                        raise StreamFormatError(
                            f"unsupported stream header {head!r}; expected "
                            f"{STREAM_SCHEMA} version {STREAM_VERSION}"
                        )
                    continue
            try:
                ev = parse_detection(line)
            except (ValueError, TypeError, InvariantViolation) as exc:
                self._reject(lineno, str(exc))
                continue
            self.records_read += 1
            if ev.t < max_t - self.order_tolerance:
                raise StreamOrderError(
                    f"line {lineno}: timestamp {ev.t} regresses more than "
                    f"{self.order_tolerance}s behind {max_t}"
                )
            key = (ev.camera_id, ev.frame_id)
            entry = pending.get(key)
            if entry is not None:
                if entry.t != ev.t:
                    self._reject(lineno, f"frame {ev.frame_id} timestamp mismatch ({ev.t} != {entry.t})")
                    continue
                entry.detections.append(ev)
            else:
                if ev.camera_id in last_emitted and ev.frame_id <= last_emitted[ev.camera_id]:
                    self._reject(lineno, f"frame {ev.frame_id} arrived after it was emitted")
                    continue
                pending[key] = _Pending(ev.t, [ev])
                heapq.heappush(heap, (ev.t, ev.frame_id, ev.camera_id))
            max_t = max(max_t, ev.t)
            yield from pop_ready(max_t - self.order_tolerance)
        yield from pop_ready(math.inf)


def read_detection_stream(source, *, order_tolerance: float = ORDER_TOLERANCE_S) -> DetectionStreamReader:
    return DetectionStreamReader(source, order_tolerance=order_tolerance)
