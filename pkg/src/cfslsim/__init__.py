"""Deterministic simulator for clustered federated semi-supervised learning
over a worker / edge / cloud wireless hierarchy."""

from .config import SCENARIOS, ConfigError, Scenario, SimConfig
from .harness import AuditError, RoundMetrics, RunResult, report, run, sweep

__all__ = [
    "SCENARIOS",
    "Scenario",
    "SimConfig",
    "ConfigError",
    "AuditError",
    "RoundMetrics",
    "RunResult",
    "run",
    "sweep",
    "report",
]

__version__ = "0.1.0"
