#!/usr/bin/env python3
"""Check the phi_lambda lower bound on Gibbs samples: ``lower_bound.py [--key=value ...]``."""

from __future__ import annotations

import sys

from coulomb_gas.cli import main

if __name__ == "__main__":
    sys.exit(main(["lower-bound", "--n_list=64", *sys.argv[1:]]))
