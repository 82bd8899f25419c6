#!/usr/bin/env python
"""Run the local convergence study and write quadratic.csv / quadratic.json."""

import sys

from ncpd.cli import main

if __name__ == "__main__":
    sys.exit(main(["experiment", "quadratic", "--out", "quadratic", *sys.argv[1:]]))
