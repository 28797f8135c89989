"""Experiment configs, presets and the runner behind the ``cumlog`` command."""

from .config import CaseConfig, ClassEntry, ConfigError, ExperimentConfig, load, parse, serialize
from .experiment import ExperimentResult, build_game, default_out_dir, exit_code, run_experiment
from .presets import describe, get_preset, list_presets

__all__ = [
    "CaseConfig",
    "ClassEntry",
    "ConfigError",
    "ExperimentConfig",
    "ExperimentResult",
    "build_game",
    "default_out_dir",
    "describe",
    "exit_code",
    "get_preset",
    "list_presets",
    "load",
    "parse",
    "run_experiment",
    "serialize",
]
