#!/usr/bin/env python3
"""
Duet interaction graph CLI entry point.

Run with: python -m duetgraph <subcommand> ...
"""

import sys

from .cli import main


if __name__ == "__main__":
    sys.exit(main())
