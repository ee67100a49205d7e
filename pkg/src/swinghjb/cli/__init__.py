"""Command-line front end: config parsing and run orchestration."""

from .config import DEFAULTS_DOC, SCHEMA, RunConfig, apply_overrides, load_raw, parse_config, resolve
from .run import run_valuation

__all__ = [
    "DEFAULTS_DOC",
    "SCHEMA",
    "RunConfig",
    "apply_overrides",
    "load_raw",
    "parse_config",
    "resolve",
    "run_valuation",
]
