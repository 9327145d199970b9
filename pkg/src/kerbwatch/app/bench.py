"""Latency statistics and the per-stage budget bench."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..exceptions import DomainError
from ..ingest_io import InMemorySink, PipelineConfig, TelemetryPublisher, config_from_dict, write_detection_stream
from .pipeline import STAGES, Pipeline

QUANTILES = (0.5, 0.9, 0.95, 0.99)
HISTOGRAM_BINS = 50
DEFAULT_BUDGET_S = 0.300
END_TO_END = "end_to_end"

# Field measurements of a camera-to-monitor deployment, kept as context only.
REFERENCE_MEDIAN_TOTAL_S = 0.44
REFERENCE_MEAN_STREAMING_S = 0.08

EXCLUSION_NOTE = (
    "camera acquisition and detector inference happen upstream of the detection "
    "stream and are not included in these timings"
)


@dataclass
class LatencyStats:
    count: int
    min: float
    max: float
    mean: float
    median: float
    std: float
    quantiles: Dict[float, float]
    bin_edges: List[float]
    pdf: List[float]
    cdf: List[float]

    def summary_row(self) -> dict:
        row = {"count": self.count, "min": self.min, "median": self.median, "mean": self.mean,
               "max": self.max, "std": self.std}
        row.update({f"p{int(round(q * 100))}": v for q, v in self.quantiles.items()})
        return row


def nearest_rank(sorted_x: Sequence[float], q: float) -> float:
    """Smallest sample with at least a fraction ``q`` of the data at or below it."""
    n = len(sorted_x)
    k = max(1, math.ceil(Fraction(str(q)) * n))
    return sorted_x[min(k, n) - 1]


def latency_stats(samples, bins: int = HISTOGRAM_BINS, quantiles=QUANTILES) -> LatencyStats:
    x = sorted(float(s) for s in samples)
    n = len(x)
    if n == 0:
        raise DomainError("latency_stats needs at least one sample")
    if not all(math.isfinite(v) for v in x):
        raise DomainError("latency samples must be finite")
    mean = math.fsum(x) / n
    std = math.sqrt(math.fsum((v - mean) ** 2 for v in x) / n)
    mid = n // 2
    median = x[mid] if n % 2 else (x[mid - 1] + x[mid]) / 2.0
    lo, hi = x[0], x[-1]
    if hi > lo:
        counts, edges = np.histogram(x, bins=bins, range=(lo, hi))
    else:
        counts = np.zeros(bins, dtype=np.int64)
        counts[0] = n
        edges = np.full(bins + 1, lo)
    cum = np.cumsum(counts)
    return LatencyStats(
        count=n, min=lo, max=hi, mean=mean, median=median, std=std,
        quantiles={q: nearest_rank(x, q) for q in quantiles},
        bin_edges=[float(e) for e in edges],
        pdf=[float(c) / n for c in counts],
        cdf=[float(c) / n for c in cum],
    )


@dataclass
class BudgetReport:
    budget: float
    end_to_end_p99: float
    passed: bool
    stage_p99: Dict[str, float]
    stage_passed: Dict[str, bool]
    worst_offender: str
    note: str = EXCLUSION_NOTE
    reference: Dict[str, float] = field(default_factory=lambda: {
        "median_total_s": REFERENCE_MEDIAN_TOTAL_S,
        "mean_streaming_s": REFERENCE_MEAN_STREAMING_S,
    })

    def text(self) -> str:
        lines = [
            f"budget {self.budget * 1e3:.1f} ms, end-to-end p99 {self.end_to_end_p99 * 1e3:.3f} ms: "
            + ("PASS" if self.passed else "FAIL"),
        ]
        for s, v in self.stage_p99.items():
            lines.append(f"  {s:<10} p99 {v * 1e3:9.3f} ms  {'ok' if self.stage_passed[s] else 'over'}")
        lines.append(f"worst offender: {self.worst_offender}")
        lines.append(f"note: {self.note}")
        lines.append(f"reference field medians: total {REFERENCE_MEDIAN_TOTAL_S} s, "
                     f"streaming {REFERENCE_MEAN_STREAMING_S} s")
        return "\n".join(lines)


@dataclass
class BenchResult:
    report: BudgetReport
    repetitions: List[Dict[str, LatencyStats]]
    pooled: Dict[str, LatencyStats]
    samples: List[Dict[str, List[float]]] = field(repr=False, default_factory=list)

    def stats_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = ["count", "min", "median", "mean", "max", "std"] + [f"p{int(round(q * 100))}" for q in QUANTILES]
        w.writerow(["block", "stage"] + cols)
        blocks = [(str(i), r) for i, r in enumerate(self.repetitions)] + [("pooled", self.pooled)]
        for name, block in blocks:
            for stage, st in block.items():
                row = st.summary_row()
                w.writerow([name, stage] + [row[c] for c in cols])
        return buf.getvalue()

    def samples_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["repetition", "frame", "stage", "seconds"])
        for i, per in enumerate(self.samples):
            for stage, xs in per.items():
                for k, x in enumerate(xs):
                    w.writerow([i, k, stage, x])
        return buf.getvalue()

    def histogram_csv(self, stage: str = END_TO_END) -> str:
        st = self.pooled[stage]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "pdf", "cdf"])
        for k in range(len(st.pdf)):
            w.writerow([st.bin_edges[k], st.bin_edges[k + 1], st.pdf[k], st.cdf[k]])
        return buf.getvalue()


def budget_report(pooled: Dict[str, LatencyStats], budget: float = DEFAULT_BUDGET_S) -> BudgetReport:
    stage_p99 = {s: pooled[s].quantiles[0.99] for s in STAGES if s in pooled}
    e2e = pooled[END_TO_END].quantiles[0.99]
    passed = e2e <= budget
    worst = max(stage_p99, key=stage_p99.get)
    return BudgetReport(
        budget=budget,
        end_to_end_p99=e2e,
        passed=passed,
        stage_p99=stage_p99,
        stage_passed={s: v <= budget for s, v in stage_p99.items()},
        worst_offender=worst,
    )


def bench(config: Optional[PipelineConfig], scenario, repetitions: int = 3,
          budget: float = DEFAULT_BUDGET_S) -> BenchResult:
    """Time every stage of a fresh pipeline over ``scenario``, ``repetitions`` times.

    The detection stream is rendered once and serialised, so ingestion
    includes JSON parsing.  Telemetry goes to an in-memory sink.
    """
    from ..sim import run_scenario, scenario_config_dict

    if repetitions < 1:
        raise DomainError("repetitions must be >= 1")
    if config is None:
        config = config_from_dict(scenario_config_dict(scenario))
    dets, _ = run_scenario(scenario)
    buf = io.StringIO()
    write_detection_stream(buf, dets)
    lines = buf.getvalue().splitlines()

    keys = STAGES + (END_TO_END,)
    reps, samples = [], []
    for _ in range(repetitions):
        pipe = Pipeline(config, [TelemetryPublisher(InMemorySink())])
        timings: list = []
        pipe.run(lines, timings_out=timings)
        pipe.close()
        if not timings:
            raise DomainError("scenario produced no frames")
        per = {k: [t[k] for t in timings] for k in keys}
        samples.append(per)
        reps.append({k: latency_stats(v) for k, v in per.items()})
    pooled = {k: latency_stats([v for per in samples for v in per[k]]) for k in keys}
    return BenchResult(budget_report(pooled, budget), reps, pooled, samples)
