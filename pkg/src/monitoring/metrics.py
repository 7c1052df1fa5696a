"""Monitoring and metrics for learning pipelines."""

import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import structlog
from prometheus_client import CollectorRegistry, Counter, Gauge, Histogram, generate_latest

logger = structlog.get_logger()


class MetricsCollector:
    """Collects pipeline metrics in a private Prometheus registry."""

    def __init__(self, registry: Optional[CollectorRegistry] = None):
        """Initialize metrics collector.

        Args:
            registry: Prometheus registry, creates new one if None
        """
        self.registry = registry or CollectorRegistry()

        self.trajectories_simulated = Counter(
            'klearn_trajectories_simulated_total',
            'Trajectories integrated',
            ['batch'],
            registry=self.registry
        )

        self.integration_failures = Counter(
            'klearn_integration_failures_total',
            'Trajectory integrations that failed',
            ['batch'],
            registry=self.registry
        )

        self.cells_total = Counter(
            'klearn_cells_total',
            'Learning cells by outcome',
            ['experiment', 'status'],
            registry=self.registry
        )

        self.stage_duration = Histogram(
            'klearn_stage_duration_seconds',
            'Duration of pipeline stages',
            ['stage'],
            registry=self.registry
        )

        self.lambda_min = Gauge(
            'klearn_lambda_min',
            'Smallest retained eigenvalue of the last solved normal system',
            registry=self.registry
        )

        self.errors_total = Counter(
            'klearn_errors_total',
            'Errors raised inside monitored stages',
            ['error_type'],
            registry=self.registry
        )

        # Per-stage history for run summaries
        self.stage_history: Dict[str, List[Dict[str, Any]]] = {}

    def record_trajectories(self, batch: str, count: int, failures: int = 0):
        self.trajectories_simulated.labels(batch=batch).inc(count)
        if failures:
            self.integration_failures.labels(batch=batch).inc(failures)

    def record_cell(self, experiment: str, status: str):
        self.cells_total.labels(experiment=experiment, status=status).inc()

    def record_solution(self, lambda_min: float):
        self.lambda_min.set(lambda_min)

    def record_stage(self, stage: str, status: str, duration: float):
        """Record one stage execution.

        Args:
            stage: Stage name
            status: completed or failed
            duration: Wall time in seconds
        """
        self.stage_duration.labels(stage=stage).observe(duration)
        history = self.stage_history.setdefault(stage, [])
        history.append({
            'timestamp': datetime.now(timezone.utc).isoformat(),
            'status': status,
            'duration': duration,
        })
        # Keep only last 1000 records per stage
        if len(history) > 1000:
            self.stage_history[stage] = history[-1000:]
        logger.debug("Stage recorded", stage=stage, status=status, duration=duration)

    def record_error(self, error_type: str, error_details: str):
        self.errors_total.labels(error_type=error_type).inc()
        logger.error("Stage error recorded", error_type=error_type, error_details=error_details)

    def get_stage_summary(self) -> Dict[str, Dict[str, Any]]:
        """Count, failures and total duration per stage."""
        summary = {}
        for stage, records in self.stage_history.items():
            summary[stage] = {
                'count': len(records),
                'failed': len([r for r in records if r['status'] == 'failed']),
                'total_duration': sum(r['duration'] for r in records),
            }
        return summary

    def export_prometheus_metrics(self) -> str:
        """Export metrics in Prometheus text format."""
        return generate_latest(self.registry).decode('utf-8')

    def write(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.export_prometheus_metrics(), encoding="utf-8")
        return path


class StageMonitor:
    """Times a pipeline stage and records its outcome on exit."""

    def __init__(self, metrics_collector: MetricsCollector, stage: str):
        self.metrics_collector = metrics_collector
        self.stage = stage
        self.start_time = None
        self.status = "unknown"
        self.duration = 0.0

    def __enter__(self):
        self.start_time = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        if self.start_time is None:
            return
        self.duration = time.perf_counter() - self.start_time
        if exc_type is not None:
            self.status = "failed"
            self.metrics_collector.record_error(error_type=exc_type.__name__, error_details=str(exc_val))
        else:
            self.status = "completed"
        self.metrics_collector.record_stage(self.stage, self.status, self.duration)
