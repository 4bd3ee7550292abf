"""Scenario configuration, the deterministic tick loop and metrics output."""
from scouttask.engine.config import ConfigError, ScenarioConfig, load_scenario, parse_scenario
from scouttask.engine.metrics import SUMMARY_FORMAT, MetricsRecord
from scouttask.engine.sim import Simulation, SimulationError, local_avoid, run, step

__all__ = [
    "ConfigError", "ScenarioConfig", "load_scenario", "parse_scenario",
    "SUMMARY_FORMAT", "MetricsRecord",
    "Simulation", "SimulationError", "local_avoid", "run", "step",
]
