"""Monitoring package for the Interaction Kernel Learner."""

from .metrics import MetricsCollector, StageMonitor

__all__ = [
    "MetricsCollector",
    "StageMonitor",
]
