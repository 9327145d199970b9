"""Pipeline orchestration, latency bench and command-line interface."""

from .bench import BenchResult, BudgetReport, LatencyStats, bench, budget_report, latency_stats
from .pipeline import STAGES, FrameResult, Pipeline, RunSummary, run_pipeline

__all__ = [
    "STAGES",
    "BenchResult",
    "BudgetReport",
    "FrameResult",
    "LatencyStats",
    "Pipeline",
    "RunSummary",
    "bench",
    "budget_report",
    "latency_stats",
    "run_pipeline",
]
