"""Road-state metrics (RAS/RAD), density risk zones and detector evaluation."""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass
from typing import Deque, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import DomainError
from .track import iou

LOW_RISK = "low_risk"
MEDIUM_RISK = "medium_risk"
ELEVATED_RISK = "elevated_risk"
NO_DATA = "no_data"
ZONES = (LOW_RISK, MEDIUM_RISK, ELEVATED_RISK, NO_DATA)

DEFAULT_WINDOW_S = 60.0
MATCH_IOU = 0.5


class RollingWindow:
    """Time window over batches of values.

    Each call to :meth:`extend` stores one ``(t, sum, count)`` chunk whose
    sum is exact-rounded, so :meth:`mean` equals the brute-force mean over
    all retained values without re-summing them every frame.
    """

    def __init__(self, duration: float = DEFAULT_WINDOW_S):
        if not duration > 0:
            raise DomainError("window duration must be positive")
        self.duration = duration
        self.samples: Deque[Tuple[float, float, int]] = deque()
        self.t_now = -math.inf
        self._count = 0

    def __len__(self):
        return self._count

    def extend(self, t: float, values: Iterable[float]) -> None:
        if t < self.t_now:
            raise ValueError(f"window time went backwards ({t} < {self.t_now})")
        values = [float(v) for v in values]
        if values:
            self.samples.append((t, math.fsum(values), len(values)))
            self._count += len(values)
        self.evict(t)

    def add(self, t: float, value: float) -> None:
        self.extend(t, [value])

    def evict(self, t_now: float) -> None:
        self.t_now = max(self.t_now, t_now)
        horizon = self.t_now - self.duration
        while self.samples and self.samples[0][0] < horizon:
            _, _, n = self.samples.popleft()
            self._count -= n

    def mean(self) -> Optional[float]:
        if not self._count:
            return None
        return math.fsum(s for _, s, _ in self.samples) / self._count


@dataclass(frozen=True)
class RoadState:
    ras: Optional[float]
    rad: Optional[float]
    t: float
    zone: str


class RoadStateMonitor:
    """Rolling average speed (RAS) and rolling average pairwise distance (RAD).

    Speeds of all tracked objects and all pairwise distances are pooled.
    The zone is ``no_data`` while either window is empty or when no
    :class:`ZoneMap` has been supplied to classify against.
    """

    def __init__(self, window_s: float = DEFAULT_WINDOW_S, zone_map: Optional["ZoneMap"] = None):
        self.speeds = RollingWindow(window_s)
        self.distances = RollingWindow(window_s)
        self.zone_map = zone_map

    def update(self, speeds: Sequence[float], pair_distances: Sequence[float], t: float) -> RoadState:
        self.speeds.extend(t, speeds)
        self.distances.extend(t, pair_distances)
        ras, rad = self.speeds.mean(), self.distances.mean()
        if ras is None or rad is None or self.zone_map is None:
            zone = NO_DATA
        else:
            zone = classify_zone(self.zone_map, ras, rad)
        return RoadState(ras, rad, t, zone)


def update_road_state(monitor: RoadStateMonitor, speeds, pair_distances, t) -> RoadState:
    return monitor.update(speeds, pair_distances, t)


class ZoneMap(BaseEstimator):
    """Density-based risk zones over the (RAS, RAD) plane.

    ``fit`` builds a 2-D histogram from historic (ras, rad) pairs.  Bins are
    ranked by count: the densest bins jointly holding ``upper_mass`` of the
    samples are ``low_risk``, the sparsest bins jointly holding at most
    ``lower_mass`` are ``elevated_risk`` (never-observed bins always are),
    everything else is ``medium_risk``.  Queries outside the histogram range
    are clamped to the edge bins.

    Attributes
    ----------
    counts_ : ndarray of shape (bins, bins)
    ras_edges_, rad_edges_ : ndarray of shape (bins + 1,)
    high_density_, low_density_ : int
        Bin-count thresholds for ``low_risk`` (>=) and ``elevated_risk`` (<=).
    """

    def __init__(self, bins=20, ras_range=None, rad_range=None, upper_mass=0.5, lower_mass=0.1, min_samples=100):
        self.bins = bins
        self.ras_range = ras_range
        self.rad_range = rad_range
        self.upper_mass = upper_mass
        self.lower_mass = lower_mass
        self.min_samples = min_samples

    @staticmethod
    def _range(col, given):
        if given is not None:
            lo, hi = map(float, given)
        else:
            lo, hi = float(col.min()), float(col.max())
        if hi <= lo:
            lo, hi = lo - 0.5, hi + 0.5
        return lo, hi

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != 2:
            raise ValueError("ZoneMap expects (ras, rad) columns")
        if X.shape[0] < self.min_samples:
            raise ValueError(f"ZoneMap needs at least {self.min_samples} samples, got {X.shape[0]}")
        if not (0 < self.lower_mass and 0 < self.upper_mass and self.lower_mass + self.upper_mass <= 1):
            raise ValueError("need 0 < lower_mass, 0 < upper_mass and lower_mass + upper_mass <= 1")
        r0 = self._range(X[:, 0], self.ras_range)
        r1 = self._range(X[:, 1], self.rad_range)
        self.ras_edges_ = np.linspace(*r0, self.bins + 1)
        self.rad_edges_ = np.linspace(*r1, self.bins + 1)
        i = self._bin(X[:, 0], self.ras_edges_)
        j = self._bin(X[:, 1], self.rad_edges_)
        counts = np.zeros((self.bins, self.bins), dtype=np.int64)
        np.add.at(counts, (i, j), 1)
        self.counts_ = counts
        self.high_density_, self.low_density_ = _density_thresholds(counts, self.upper_mass, self.lower_mass)
        self.n_features_in_ = 2
        return self

    def _bin(self, values, edges):
        idx = np.searchsorted(edges, values, side="right") - 1
        return np.clip(idx, 0, len(edges) - 2)

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "counts_")
        X = check_array(X, dtype=np.float64)
        c = self.counts_[self._bin(X[:, 0], self.ras_edges_), self._bin(X[:, 1], self.rad_edges_)]
        out = np.full(len(X), MEDIUM_RISK, dtype=object)
        out[c <= self.low_density_] = ELEVATED_RISK
        out[c >= self.high_density_] = LOW_RISK
        return out


def _density_thresholds(counts: np.ndarray, upper_mass: float, lower_mass: float) -> Tuple[int, int]:
    total = int(counts.sum())
    levels, per_level = np.unique(counts, return_counts=True)
    mass = levels * per_level
    high = int(levels[-1])
    acc = 0
    for level, m in zip(levels[::-1], mass[::-1]):
        acc += int(m)
        if acc >= upper_mass * total:
            high = int(level)
            break
    low = 0
    acc = 0
    for level, m in zip(levels, mass):
        acc += int(m)
        if acc > lower_mass * total:
            break
        low = int(level)
    return high, min(low, high - 1)


def classify_zone(zm: ZoneMap, ras: float, rad: float) -> str:
    return str(zm.predict([[ras, rad]])[0])


def write_road_state_csv(path, states: Iterable[RoadState]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "ras", "rad", "zone"])
        for s in states:
            w.writerow([s.t, "" if s.ras is None else s.ras, "" if s.rad is None else s.rad, s.zone])


def read_ras_rad_csv(path) -> np.ndarray:
    """Load (ras, rad) rows from a road-state CSV, skipping empty windows."""
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        for rec in csv.DictReader(fh):
            if rec.get("ras") and rec.get("rad"):
                rows.append((float(rec["ras"]), float(rec["rad"])))
    return np.array(rows, dtype=float).reshape(-1, 2)


# -- detector evaluation --------------------------------------------------------


@dataclass(frozen=True)
class ScoredBox:
    frame: object
    bbox: object
    confidence: float
    class_label: Optional[str] = None


@dataclass(frozen=True)
class TruthBox:
    frame: object
    bbox: object
    class_label: Optional[str] = None


@dataclass
class EvalCurves:
    thresholds: List[float]
    precision: List[float]
    recall: List[float]
    f1: List[float]

    def best_threshold(self) -> float:
        return self.thresholds[int(np.argmax(self.f1))]

    def rows(self):
        return list(zip(self.thresholds, self.precision, self.recall, self.f1))


def f1_score(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2.0 * p * r / (p + r)


def _match_frame(dets, truths, iou_min):
    """Greedy-by-confidence TP count for one frame."""
    used = [False] * len(truths)
    tp = 0
    for d in sorted(dets, key=lambda d: -d.confidence):
        best, best_k = iou_min, -1
        for k, g in enumerate(truths):
            if used[k] or (d.class_label and g.class_label and d.class_label != g.class_label):
                continue
            score = iou(d.bbox, g.bbox)
            if score >= best:
                best, best_k = score, k
        if best_k >= 0:
            used[best_k] = True
            tp += 1
    return tp


def eval_curves(detections: Sequence[ScoredBox], ground_truth: Sequence[TruthBox],
                thresholds: Sequence[float], iou_min: float = MATCH_IOU) -> EvalCurves:
    """Precision, recall and F1 per confidence threshold.

    With no detection kept at a threshold, precision is reported as 1 and
    recall (hence F1) as 0.
    """
    if not ground_truth:
        raise DomainError("evaluation needs at least one ground-truth box")
    truth_by_frame = {}
    for g in ground_truth:
        truth_by_frame.setdefault(g.frame, []).append(g)
    n_truth = len(ground_truth)
    curves = EvalCurves([], [], [], [])
    for thr in thresholds:
        kept = {}
        for d in detections:
            if d.confidence >= thr:
                kept.setdefault(d.frame, []).append(d)
        n_kept = sum(len(v) for v in kept.values())
        tp = sum(_match_frame(v, truth_by_frame.get(f, []), iou_min) for f, v in kept.items())
        p = tp / n_kept if n_kept else 1.0
        r = tp / n_truth
        curves.thresholds.append(float(thr))
        curves.precision.append(p)
        curves.recall.append(r)
        curves.f1.append(f1_score(p, r))
    return curves


def nms_count(dets, iou_threshold: float) -> int:
    """Boxes surviving class-wise greedy non-maximum suppression."""
    kept = []
    for d in sorted(dets, key=lambda d: -d.confidence):
        if all(k.class_label != d.class_label or iou(k.bbox, d.bbox) <= iou_threshold for k in kept):
            kept.append(d)
    return len(kept)


def threshold_sweep(batches, confidence_grid: Sequence[float], iou_grid: Sequence[float]) -> np.ndarray:
    """Accepted-detection counts, shape ``(len(confidence_grid), len(iou_grid))``.

    A detection is accepted when its confidence reaches the row threshold
    and it survives NMS at the column IoU threshold.
    """
    if not len(confidence_grid) or not len(iou_grid):
        raise ValueError("grids must be non-empty")
    out = np.zeros((len(confidence_grid), len(iou_grid)), dtype=np.int64)
    for batch in batches:
        dets = list(batch.detections)
        for i, c in enumerate(confidence_grid):
            kept = [d for d in dets if d.confidence >= c]
            for j, t in enumerate(iou_grid):
                out[i, j] += nms_count(kept, t)
    return out
