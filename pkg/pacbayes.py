#!/usr/bin/env python3
"""CLI entry point: bound, posterior, train, verify and report runs.

    python pacbayes.py bound --config bound.json --out results/occam
    python pacbayes.py verify --config occam_validity.json --seed 7 --trials 2000
    python pacbayes.py report --out results/occam
"""

import sys

from pacbayes_toolkit.cli import main

if __name__ == "__main__":
    sys.exit(main())
