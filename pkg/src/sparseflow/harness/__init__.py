"""Experiment orchestration and command line front end."""

from .config import CONFIG_VERSION, DEFAULTS, OUT_ENV, ConfigError, ExperimentConfig, load_config, resolve_out, validate
from .pipeline import (
    MissingInputError,
    cmd_aggregate,
    cmd_evaluate,
    cmd_generate,
    cmd_sparsify,
    cmd_sweep,
    cmd_train,
    verify_manifest,
)
from .report import NoRunsError, cmd_report

__all__ = [
    "CONFIG_VERSION", "DEFAULTS", "OUT_ENV", "ConfigError", "ExperimentConfig", "load_config", "resolve_out",
    "validate", "MissingInputError", "cmd_aggregate", "cmd_evaluate", "cmd_generate", "cmd_sparsify",
    "cmd_sweep", "cmd_train", "verify_manifest", "NoRunsError", "cmd_report",
]
