"""
Configuration module for the focused KV-cache compression engine.

This module contains all configuration constants and environment variables.

Note: run-specific parameters are loaded from JSON.
Use config.run_config.load_run_config to read them.
"""

from config.settings import (
    # Environment variables
    DEFAULT_CONFIG_PATH,
    LOG_DIR,
    EVENT_LOG_ENABLED,
    # Constants
    DEFAULT_B_MIN,
    DEFAULT_B_MAX,
    DEFAULT_GAMMA,
    DEFAULT_LAMBDA,
    DEFAULT_GROUPS,
    DEFAULT_EPSILON,
)

__all__ = [
    "DEFAULT_CONFIG_PATH",
    "LOG_DIR",
    "EVENT_LOG_ENABLED",
    "DEFAULT_B_MIN",
    "DEFAULT_B_MAX",
    "DEFAULT_GAMMA",
    "DEFAULT_LAMBDA",
    "DEFAULT_GROUPS",
    "DEFAULT_EPSILON",
]
