"""Scenario configuration, closed-loop execution, and the command line."""

from .config import ConfigError, ScenarioConfig, builtin_scenario_path, load_config, parse_config
from .reference import ReferenceTrajectory, RotationPhase
from .runner import RunResult, build_world, parse_trace, run_scenario, settle_after

__all__ = [
    "ConfigError",
    "ReferenceTrajectory",
    "RotationPhase",
    "RunResult",
    "ScenarioConfig",
    "build_world",
    "builtin_scenario_path",
    "load_config",
    "parse_config",
    "parse_trace",
    "run_scenario",
    "settle_after",
]
