"""Per-camera pipeline: filter -> undistort -> georeference -> track -> assess -> metrics -> publish."""

from __future__ import annotations

import csv
import logging
import os
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, Iterable, List, Optional

import numpy as np

from ..exceptions import CorrectionFailedError, SinkUnavailable
from ..geo import PixelPoint, ground_anchor, pixel_to_geo, undistort_point, undistort_points
from ..ingest_io import (
    CsvSink,
    DeliveryReport,
    FrameBatch,
    MqttSink,
    ObjectMetadata,
    PipelineConfig,
    TelemetryPublisher,
    filter_by_confidence,
    read_detection_stream,
)
from ..metrics import RoadState, RoadStateMonitor, ZoneMap, read_ras_rad_csv
from ..risk import FrictionContext, OutsideRegion, PairAssessment, RiskParams, VruPolicy, assess_all
from ..track import Tracker

log = logging.getLogger(__name__)

STAGES = ("ingest", "undistort", "geo", "track", "risk", "metrics", "publish")


@dataclass
class FrameResult:
    batch: FrameBatch
    objects: List[ObjectMetadata]
    assessments: list
    alerts: List[PairAssessment]
    road_state: RoadState
    report: DeliveryReport
    timings: Dict[str, float] = field(default_factory=dict)


@dataclass
class RunSummary:
    frames: int = 0
    detections: int = 0
    objects: int = 0
    pairs: int = 0
    alerts: int = 0
    outside_region: int = 0
    rejects: int = 0
    published: int = 0
    failed: int = 0
    dropped: int = 0
    buffered: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


class Pipeline:
    """Single-camera processing chain.

    In ``replay`` mode (the default) every timestamp comes from the input
    stream, making runs reproducible byte for byte.  ``live`` mode stamps
    frames with the wall clock on arrival instead.
    """

    def __init__(self, config: PipelineConfig, publishers: Iterable[TelemetryPublisher] = (),
                 *, zone_map: Optional[ZoneMap] = None, mode: str = "replay", road_state_csv=None):
        if mode not in ("replay", "live"):
            raise ValueError(f"unknown mode {mode!r}")
        self.config = config
        self.publishers = list(publishers)
        self.mode = mode
        self.tracker = Tracker(config.iou_threshold, config.max_misses)
        self.ctx = FrictionContext(config.mu, config.g)
        self.policy = VruPolicy()
        self.params = RiskParams(config.margin_m, config.horizon_s, config.alert_threshold)
        self.monitor = RoadStateMonitor(config.window_s, zone_map)
        self._last_live_t = -np.inf
        self._road_fh = None
        self._road_writer = None
        if road_state_csv is not None:
            self._road_fh = open(road_state_csv, "w", encoding="utf-8", newline="")
            self._road_writer = csv.writer(self._road_fh, lineterminator="\n")
            self._road_writer.writerow(["t", "ras", "rad", "zone"])

    @classmethod
    def from_config(cls, config: PipelineConfig, *, extra_sinks=(), mode="replay") -> "Pipeline":
        """Build sinks named in the configuration (MQTT, CSV directory)."""
        sinks = list(extra_sinks)
        if config.mqtt_url:
            mqtt = MqttSink(config.mqtt_url)
            try:
                mqtt.connect()
            except SinkUnavailable as exc:
                log.warning("%s; buffering until the broker is reachable", exc)
            sinks.append(mqtt)
        road_csv = None
        if config.csv_dir:
            sinks.append(CsvSink(config.csv_dir))
            road_csv = os.path.join(config.csv_dir, "road_state.csv")
        zone_map = None
        if config.zone_history:
            zone_map = ZoneMap().fit(read_ras_rad_csv(config.zone_history))
        pubs = [TelemetryPublisher(s, config.buffer_limit) for s in sinks]
        return cls(config, pubs, zone_map=zone_map, mode=mode, road_state_csv=road_csv)

    def _anchors(self, batch):
        pixels = [ground_anchor(d.bbox) for d in batch.detections]
        m = self.config.distortion
        if m is None or m.is_identity or not pixels:
            return pixels
        try:
            fixed = undistort_points([[p.u, p.v] for p in pixels], m)
            return [PixelPoint(float(u), float(v)) for u, v in fixed]
        except CorrectionFailedError:
            out = []
            for p in pixels:
                try:
                    out.append(undistort_point(p, m))
                except CorrectionFailedError:
                    log.warning("lens correction failed for %s; dropping anchor", p)
                    out.append(None)
            return out

    def process(self, batch: FrameBatch, timings: Optional[Dict[str, float]] = None) -> FrameResult:
        clock = time.perf_counter
        timings = {} if timings is None else timings
        if self.mode == "live":
            t_live = max(time.time(), self._last_live_t + 1e-6)
            self._last_live_t = t_live
            batch = replace(batch, t=t_live, detections=[replace(d, t=t_live) for d in batch.detections])

        t0 = clock()
        batch = filter_by_confidence(batch, self.config.confidence_threshold)
        pixels = self._anchors(batch)
        t1 = clock()
        geos = [None if p is None else pixel_to_geo(self.config.geoframe, p) for p in pixels]
        t2 = clock()
        observed = self.tracker.step(batch, geos, pixels)
        t3 = clock()
        eligible = [tr for tr in observed if not tr.in_region or len(tr.history) >= 2]
        assessments = assess_all(eligible, self.ctx, self.policy, self.params)
        pairs = [a for a in assessments if isinstance(a, PairAssessment)]
        alerts = [a for a in pairs if a.alert]
        t4 = clock()
        located = [tr for tr in observed if tr.in_region and tr.history]
        state = self.monitor.update([tr.speed for tr in located if tr.has_velocity],
                                    [a.distance_now for a in pairs], batch.t)
        if self._road_writer is not None:
            self._road_writer.writerow([state.t, "" if state.ras is None else state.ras,
                                        "" if state.rad is None else state.rad, state.zone])
        t5 = clock()
        objects = [
            ObjectMetadata(self.config.camera_id, tr.track_id, tr.class_label, tr.position,
                           tr.speed, tr.heading, batch.t)
            for tr in located
        ]
        report = DeliveryReport()
        for pub in self.publishers:
            report.merge(pub.publish_frame(self.config.camera_id, batch.frame_id, batch.t,
                                           objects, pairs, alerts))
        t6 = clock()
        timings.update(undistort=t1 - t0, geo=t2 - t1, track=t3 - t2, risk=t4 - t3,
                       metrics=t5 - t4, publish=t6 - t5)
        return FrameResult(batch, objects, assessments, alerts, state, report, timings)

    def run(self, source, *, timings_out: Optional[list] = None) -> RunSummary:
        """Consume a detection stream (lines or :class:`FrameBatch` objects) to exhaustion.

        When ``timings_out`` is a list, one dict of per-stage durations plus
        ``end_to_end`` is appended to it per frame.
        """
        summary = RunSummary()
        reader = None
        items = iter(source)
        first = next(items, None)
        if first is None:
            return summary
        if isinstance(first, FrameBatch):
            batches = _chain(first, items)
        else:
            reader = read_detection_stream(_chain(first, items), order_tolerance=self.config.order_tolerance_s)
            batches = iter(reader)
        clock = time.perf_counter
        while True:
            start = clock()
            batch = next(batches, None)
            if batch is None:
                break
            timings = {"ingest": clock() - start}
            res = self.process(batch, timings)
            if timings_out is not None:
                timings["end_to_end"] = clock() - start
                timings_out.append(timings)
            summary.frames += 1
            summary.detections += len(batch)
            summary.objects += len(res.objects)
            summary.pairs += sum(isinstance(a, PairAssessment) for a in res.assessments)
            summary.outside_region += sum(isinstance(a, OutsideRegion) for a in res.assessments)
            summary.alerts += len(res.alerts)
            summary.published += res.report.published
            summary.failed += res.report.failed
            summary.dropped += res.report.dropped
        if reader is not None:
            summary.rejects = reader.reject_count
        for pub in self.publishers:
            pub.flush()
        summary.buffered = sum(len(p) for p in self.publishers)
        return summary

    def close(self):
        for pub in self.publishers:
            pub.close()
        if self._road_fh is not None:
            self._road_fh.close()
            self._road_fh = None


def _chain(first, rest):
    yield first
    yield from rest


def run_pipeline(config: PipelineConfig, source, sinks=()) -> RunSummary:
    """Run a fresh pipeline over ``source`` with ``sinks`` plus any configured ones."""
    pipe = Pipeline.from_config(config, extra_sinks=sinks)
    try:
        return pipe.run(source)
    finally:
        pipe.close()
