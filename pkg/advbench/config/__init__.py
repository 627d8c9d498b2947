"""
Configuration management for advbench.

This module handles run defaults, config-file loading and flag overrides.
"""

from .settings import RunConfig
from .defaults import DEFAULT_SETTINGS, SEED_OFFSETS

__all__ = ["RunConfig", "DEFAULT_SETTINGS", "SEED_OFFSETS"]
