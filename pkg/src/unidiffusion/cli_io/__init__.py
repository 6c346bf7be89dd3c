"""Configuration, execution and serialization for the command line."""

from .config import ConfigError, RunConfig, load_config, config_from_dict
from .runner import execute, compare_runs, solve_steady, verify_directory
from .cli import main

__all__ = [
    "ConfigError",
    "RunConfig",
    "load_config",
    "config_from_dict",
    "execute",
    "compare_runs",
    "solve_steady",
    "verify_directory",
    "main",
]
