"""Scenario configs, runners, checkers, and the coordinator baseline."""

from .config import ConfigError, ScenarioConfig, load_config, parse_config, scenario_path
from .history import check_strict_serializability
from .runner import Report, run_scenario

__all__ = [
    "ConfigError",
    "Report",
    "ScenarioConfig",
    "check_strict_serializability",
    "load_config",
    "parse_config",
    "run_scenario",
    "scenario_path",
]
