"""Config-driven experiment harness and CLI."""

from .config import ExperimentConfig, FleetConfig, RunConfig, config_from_dict, load_config
from .experiments import (
    build_fleet_data,
    draw_tadp,
    run_cross_validation,
    run_harmful,
    run_single,
    run_size_sweep,
)
from .results import ResultRecord, emit_results, read_results_json

__all__ = [
    "ExperimentConfig",
    "FleetConfig",
    "RunConfig",
    "config_from_dict",
    "load_config",
    "build_fleet_data",
    "draw_tadp",
    "run_single",
    "run_cross_validation",
    "run_harmful",
    "run_size_sweep",
    "ResultRecord",
    "emit_results",
    "read_results_json",
]
