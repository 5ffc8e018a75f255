"""Discrete-event simulator for the converging prefill/decode pipeline."""

from .engine import (
    TIMESERIES_HEADER,
    Request,
    SimMetrics,
    SimOptions,
    Simulation,
    congestion_signal,
    run,
)
from .link import EgressLink, Flow, UtilizationWindow, max_min_fair, transfer_progress

__all__ = [
    "TIMESERIES_HEADER",
    "EgressLink",
    "Flow",
    "Request",
    "SimMetrics",
    "SimOptions",
    "Simulation",
    "UtilizationWindow",
    "congestion_signal",
    "max_min_fair",
    "run",
    "transfer_progress",
]
