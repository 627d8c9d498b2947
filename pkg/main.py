#!/usr/bin/env python3
"""
advbench - Main entry point.

Runs the command-line driver.
"""

import sys

from advbench.cli import main


if __name__ == "__main__":
    sys.exit(main())
