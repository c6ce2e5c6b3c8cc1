"""Discrete-event simulator and analytic models for massive machine-type random access."""

from .kernel import EventKind, Kernel, RngStream
from .scenario import Mode, Population, Scenario, load_scenario, load_scenario_text, shipped_scenario, with_overrides
from .simulator import Simulation, simulate
from .report import MetricsReport, emit_report

__version__ = "0.1.0"

__all__ = [
    "EventKind",
    "Kernel",
    "RngStream",
    "Mode",
    "Population",
    "Scenario",
    "load_scenario",
    "load_scenario_text",
    "shipped_scenario",
    "with_overrides",
    "Simulation",
    "simulate",
    "MetricsReport",
    "emit_report",
]
