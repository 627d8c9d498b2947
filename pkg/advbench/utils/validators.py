"""
Validation of CLI inputs for advbench.

All checks run before any work begins and raise ConfigError naming the
offending setting.
"""

import os
from pathlib import Path
from typing import List, Sequence

from ..errors import ConfigError


class RunValidator:
    """
    Static checks for paths and catalog names.

    All methods raise ConfigError if validation fails.
    """

    @staticmethod
    def existing_file(path: str, field: str) -> Path:
        """
        Check that path names a readable file.

        Args:
            path: Path to validate
            field: Setting the path came from

        Returns:
            Normalized path

        Raises:
            ConfigError: If the file does not exist
        """
        if not path:
            raise ConfigError(f"Setting '{field}' is empty")
        resolved = Path(os.path.expanduser(path))
        if not resolved.is_file():
            raise ConfigError(f"Setting '{field}': file does not exist: {path}")
        return resolved

    @staticmethod
    def existing_files(paths: Sequence[str], field: str) -> List[Path]:
        return [RunValidator.existing_file(p, field) for p in paths]

    @staticmethod
    def data_dir(path: str, field: str = "data") -> Path:
        """
        Check that path is a directory; the MNIST files themselves are
        located by the data loader.

        Raises:
            ConfigError: If the directory does not exist
        """
        resolved = Path(os.path.expanduser(path))
        if not resolved.is_dir():
            raise ConfigError(f"Setting '{field}': not a directory: {path}")
        return resolved

    @staticmethod
    def output_path(path: str, field: str = "out") -> Path:
        """
        Check that the parent directory of an output file exists.

        Raises:
            ConfigError: If the file cannot be created there
        """
        resolved = Path(os.path.expanduser(path))
        parent = resolved.parent if str(resolved.parent) else Path(".")
        if not parent.is_dir():
            raise ConfigError(f"Setting '{field}': directory does not exist: {parent}")
        if resolved.is_dir():
            raise ConfigError(f"Setting '{field}': {path} is a directory")
        return resolved

    @staticmethod
    def choice(value: str, allowed: Sequence[str], field: str) -> str:
        if value not in allowed:
            raise ConfigError(f"Setting '{field}': unknown value '{value}', expected one of {list(allowed)}")
        return value
