#!/usr/bin/env python3
"""Concentration sweep with a rate fit: ``run_sweep.py [config] [--key=value ...]``."""

from __future__ import annotations

import sys

from coulomb_gas.cli import main

if __name__ == "__main__":
    args = sys.argv[1:]
    if args and not args[0].startswith("--"):
        args = ["--config", args[0], *args[1:]]
    sys.exit(main(["sweep", *args]))
