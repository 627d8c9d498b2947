"""
Utility functions for advbench.
"""

from .logger import setup_logging
from .validators import RunValidator

__all__ = ["setup_logging", "RunValidator"]
