"""
Entry point for ``python -m leaptt``.
"""

import sys

from leaptt.cli import main

if __name__ == "__main__":
    sys.exit(main())
