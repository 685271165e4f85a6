#!/usr/bin/env python3
"""
qec-steer entry point

Usage:
    python scripts/qec_steer.py --profile smoke --out runs/demo steer
    python scripts/qec_steer.py circuit --dump -
"""

import sys
from pathlib import Path

# Add src to path
sys.path.append(str(Path(__file__).parent.parent / "src"))

from cli import app


def main():
    app(prog_name="qec-steer")


if __name__ == "__main__":
    main()
