"""Configuration, seeding, metrics IO and the command line interface."""

from latent_rl_lab.harness.config import ConfigError, ExperimentConfig, load_config, substream, validate
from latent_rl_lab.harness.io import SchemaError, read_csv, read_json, read_jsonl, write_csv, write_json, write_jsonl
from latent_rl_lab.harness.runner import execute, run_config, run_sweep

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "SchemaError",
    "execute",
    "load_config",
    "read_csv",
    "read_json",
    "read_jsonl",
    "run_config",
    "run_sweep",
    "substream",
    "validate",
    "write_csv",
    "write_json",
    "write_jsonl",
]
