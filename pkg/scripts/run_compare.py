#!/usr/bin/env python
"""Run the gradient-count comparison study and write compare.csv / compare.json."""

import sys

from ncpd.cli import main

if __name__ == "__main__":
    sys.exit(main(["experiment", "compare", "--out", "compare", *sys.argv[1:]]))
