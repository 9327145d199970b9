"""Telemetry publication: payload encoding, sinks and a bounded delivery buffer.

Three topics per camera::

    its/{camera_id}/objects   QoS 0   tracked objects of the frame
    its/{camera_id}/pairs     QoS 0   pairwise assessments of the frame
    its/{camera_id}/alerts    QoS 1   alerts raised in the frame (only when any)

Payloads are compact JSON documents validated by :mod:`.schemas`.
"""

from __future__ import annotations

import csv
import heapq
import json
import logging
import os
from collections import deque
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Callable, Deque, Dict, List, Optional, Tuple
from urllib.parse import urlparse

from ..exceptions import SinkUnavailable
from .schemas import PAYLOAD_VERSION

log = logging.getLogger(__name__)

BUFFER_LIMIT = 10_000
QOS = {"objects": 0, "pairs": 0, "alerts": 1}


def topic_for(camera_id: str, kind: str) -> str:
    return f"its/{camera_id}/{kind}"


def iso_utc(t: float) -> str:
    return datetime.fromtimestamp(t, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")


def encode_payload(payload: dict) -> bytes:
    return json.dumps(payload, separators=(",", ":"), allow_nan=False).encode("utf-8")


@dataclass(frozen=True)
class Message:
    topic: str
    payload: bytes
    qos: int
    kind: str
    n_records: int = 0


@dataclass
class DeliveryReport:
    """Outcome of one publish call.

    ``published`` counts records (objects, pairs, alerts) inside delivered
    messages; ``messages`` counts the messages themselves.  ``buffered`` is
    the number of messages held for later delivery after the call.
    """

    published: int = 0
    messages: int = 0
    failed: int = 0
    buffered: int = 0
    dropped: int = 0

    def merge(self, other: "DeliveryReport") -> None:
        self.published += other.published
        self.messages += other.messages
        self.failed += other.failed
        self.dropped += other.dropped
        self.buffered = other.buffered


def object_item(o) -> dict:
    return {
        "track_id": o.track_id,
        "class_label": o.class_label,
        "lat": o.geo.lat,
        "lon": o.geo.lon,
        "speed": o.speed,
        "heading": o.heading,
        "t": o.t,
    }


def pair_item(a) -> dict:
    return {
        "track_a": a.track_a,
        "track_b": a.track_b,
        "class_a": a.class_a,
        "class_b": a.class_b,
        "cross_class": a.cross_class,
        "distance_now": a.distance_now,
        "t_star": a.t_star,
        "d_min": a.d_min,
        "braking_distance": a.braking_distance,
        "probability": a.probability,
        "alert": a.alert,
    }


def alert_item(a) -> dict:
    return {
        "track_a": a.track_a,
        "track_b": a.track_b,
        "class_a": a.class_a,
        "class_b": a.class_b,
        "probability": a.probability,
        "distance_now": a.distance_now,
        "braking_distance": a.braking_distance,
        "t_star": a.t_star,
        "t": a.t,
        "timestamp": iso_utc(a.t),
    }


# -- sinks ----------------------------------------------------------------------


class InMemorySink:
    """Broker stand-in: stores messages and fans them out to subscribers."""

    def __init__(self, connected: bool = True):
        self.connected = connected
        self.messages: List[Message] = []
        self._subscribers: List[Callable[[Message], None]] = []

    def subscribe(self, callback: Callable[[Message], None]) -> None:
        self._subscribers.append(callback)

    def publish(self, msg: Message) -> None:
        if not self.connected:
            raise SinkUnavailable("in-memory sink disconnected")
        self.messages.append(msg)
        for cb in self._subscribers:
            cb(msg)

    def close(self):
        pass


class JsonlSink:
    """Append ``<topic> <payload>`` lines to a file, one message per line."""

    connected = True

    def __init__(self, path):
        self.path = path
        self._fh = open(path, "w", encoding="utf-8", newline="\n")

    def publish(self, msg: Message) -> None:
        self._fh.write(f"{msg.topic} {msg.payload.decode('utf-8')}\n")

    def close(self):
        self._fh.close()


CSV_COLUMNS = {
    "objects": ["camera_id", "frame_id", "t", "track_id", "class_label", "lat", "lon", "speed", "heading"],
    "pairs": ["camera_id", "frame_id", "t", "track_a", "track_b", "class_a", "class_b", "cross_class",
              "distance_now", "t_star", "d_min", "braking_distance", "probability", "alert"],
    "alerts": ["camera_id", "frame_id", "t", "track_a", "track_b", "class_a", "class_b", "probability",
               "distance_now", "braking_distance", "t_star", "timestamp"],
}


class CsvSink:
    """Mirror each topic into ``<directory>/<kind>.csv`` for offline analysis."""

    connected = True

    def __init__(self, directory):
        self.directory = directory
        os.makedirs(directory, exist_ok=True)
        self._files = {}
        self._writers = {}

    def _writer(self, kind):
        if kind not in self._writers:
            fh = open(os.path.join(self.directory, f"{kind}.csv"), "w", encoding="utf-8", newline="")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS[kind])
            self._files[kind] = fh
            self._writers[kind] = w
        return self._writers[kind]

    def publish(self, msg: Message) -> None:
        doc = json.loads(msg.payload)
        w = self._writer(msg.kind)
        head = [doc["camera_id"], doc["frame_id"], doc["t"]]
        for item in doc[msg.kind]:
            w.writerow(head + [item[c] for c in CSV_COLUMNS[msg.kind][3:]])

    def close(self):
        for fh in self._files.values():
            fh.close()
        self._files.clear()
        self._writers.clear()


class MqttSink:
    """paho-mqtt transport.  ``client`` may be injected (tests, custom TLS)."""

    def __init__(self, url: str, client=None, client_id: str = "kerbwatch"):
        parsed = urlparse(url)
        if parsed.scheme not in ("mqtt", "tcp", ""):
            raise ValueError(f"unsupported MQTT URL scheme {parsed.scheme!r}")
        self.host = parsed.hostname or "localhost"
        self.port = parsed.port or 1883
        if client is None:
            import paho.mqtt.client as mqtt

            client = mqtt.Client(mqtt.CallbackAPIVersion.VERSION2, client_id=client_id)
        self.client = client

    def connect(self):
        try:
            self.client.connect(self.host, self.port, keepalive=60)
        except OSError as exc:
            raise SinkUnavailable(f"cannot reach broker {self.host}:{self.port}: {exc}") from exc
        self.client.loop_start()

    @property
    def connected(self) -> bool:
        return bool(self.client.is_connected())

    def publish(self, msg: Message) -> None:
        info = self.client.publish(msg.topic, msg.payload, qos=msg.qos)
        if info.rc != 0:
            raise SinkUnavailable(f"publish to {msg.topic} failed with rc={info.rc}")

    def close(self):
        self.client.loop_stop()
        self.client.disconnect()


# -- publisher ------------------------------------------------------------------


class TelemetryPublisher:
    """Deliver messages to a sink, buffering while it is unavailable.

    The buffer holds at most ``buffer_limit`` messages.  When full, the
    oldest QoS-0 message is evicted first so alerts outlive periodic
    metadata; only a buffer made entirely of alerts loses its oldest alert.
    One producer and one consumer may use an instance concurrently.
    """

    def __init__(self, sink, buffer_limit: int = BUFFER_LIMIT):
        self.sink = sink
        self.buffer_limit = buffer_limit
        self.dropped = 0
        # one FIFO per QoS level; sequence numbers restore arrival order
        self._queues: Dict[int, Deque[Tuple[int, Message]]] = {0: deque(), 1: deque()}
        self._seq = 0

    @property
    def buffer(self) -> List[Message]:
        """Buffered messages in arrival order (a snapshot)."""
        return [m for _, m in heapq.merge(self._queues[0], self._queues[1], key=lambda e: e[0])]

    def __len__(self) -> int:
        return len(self._queues[0]) + len(self._queues[1])

    def _enqueue(self, msg: Message, report: DeliveryReport) -> None:
        if len(self) >= self.buffer_limit:
            if self._queues[0]:
                self._queues[0].popleft()
            elif msg.qos == 0:
                self.dropped += 1
                report.dropped += 1
                return
            else:
                self._queues[1].popleft()
            self.dropped += 1
            report.dropped += 1
        self._queues[1 if msg.qos else 0].append((self._seq, msg))
        self._seq += 1

    def _oldest(self) -> Optional[Deque[Tuple[int, Message]]]:
        q0, q1 = self._queues[0], self._queues[1]
        if q0 and (not q1 or q0[0][0] < q1[0][0]):
            return q0
        return q1 if q1 else None

    def _try_publish(self, msg: Message, report: DeliveryReport) -> bool:
        try:
            self.sink.publish(msg)
        except (SinkUnavailable, ConnectionError):
            return False
        except Exception:
            log.exception("sink rejected message on %s", msg.topic)
            report.failed += msg.n_records or 1
            return True
        report.messages += 1
        report.published += msg.n_records
        return True

    def flush(self, report: Optional[DeliveryReport] = None) -> DeliveryReport:
        report = report if report is not None else DeliveryReport()
        while getattr(self.sink, "connected", True):
            q = self._oldest()
            if q is None or not self._try_publish(q[0][1], report):
                break
            q.popleft()
        report.buffered = len(self)
        return report

    def send(self, msg: Message, report: Optional[DeliveryReport] = None) -> DeliveryReport:
        report = report if report is not None else DeliveryReport()
        self.flush(report)
        if len(self) or not getattr(self.sink, "connected", True) or not self._try_publish(msg, report):
            self._enqueue(msg, report)
        report.buffered = len(self)
        return report

    def publish_frame(self, camera_id, frame_id, t, objects, assessments, alerts) -> DeliveryReport:
        report = DeliveryReport()
        sections = (
            ("objects", objects, object_item, True),
            ("pairs", [a for a in assessments if hasattr(a, "probability")], pair_item, True),
            ("alerts", alerts, alert_item, bool(alerts)),
        )
        for kind, items, to_item, always in sections:
            if not always:
                continue
            encoded = []
            for it in items:
                try:
                    d = to_item(it)
                    json.dumps(d, allow_nan=False)
                except (ValueError, TypeError, AttributeError) as exc:
                    log.warning("skipping unserialisable %s item: %s", kind, exc)
                    report.failed += 1
                    continue
                encoded.append(d)
            if kind == "alerts" and not encoded:
                continue
            payload = {
                "schema": f"kerbwatch.{kind}",
                "version": PAYLOAD_VERSION,
                "camera_id": camera_id,
                "frame_id": frame_id,
                "t": t,
                "timestamp": iso_utc(t),
                kind: encoded,
            }
            msg = Message(topic_for(camera_id, kind), encode_payload(payload), QOS[kind], kind, len(encoded))
            self.send(msg, report)
        return report

    def close(self):
        self.flush()
        if len(self):
            log.warning("closing with %d undelivered messages", len(self))
        self.sink.close()


def publish_metadata(sink: TelemetryPublisher, items, assessments, alerts, *, camera_id, frame_id, t) -> DeliveryReport:
    """Publish one frame's objects, pair assessments and alerts."""
    return sink.publish_frame(camera_id, frame_id, t, items, assessments, alerts)
