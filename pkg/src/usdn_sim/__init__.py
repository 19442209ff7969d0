"""Discrete-event simulator for SDN control over RPL in low-power wireless networks."""

from .config import ConfigInvalid, ScenarioConfig, load_scenario, parse_scenario
from .metrics import MetricsLog, MetricsReport, compute_metrics
from .output import emit_csv, emit_sweep_csv
from .sim import Simulation, run_scenario, sweep

__all__ = [
    "ConfigInvalid", "ScenarioConfig", "load_scenario", "parse_scenario",
    "MetricsLog", "MetricsReport", "compute_metrics",
    "emit_csv", "emit_sweep_csv",
    "Simulation", "run_scenario", "sweep",
]
