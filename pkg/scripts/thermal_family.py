#!/usr/bin/env python3
"""Solve mu_beta for quadratic V in d = 2 across N beta and print residual, peak density and decay fit."""

from __future__ import annotations

import argparse

from coulomb_gas.energy import GasParams
from coulomb_gas.measures import Grid
from coulomb_gas.thermal import quadratic, solve_thermal, thermal_box, verify_decay


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--nbeta", type=float, nargs="+", default=[4, 16, 64])
    ap.add_argument("--m", type=int, default=128)
    ap.add_argument("--n", type=int, default=64)
    args = ap.parse_args()
    V = quadratic()
    print("N*beta      L  iters  residual  max density  decay slope  envelope")
    for nb in args.nbeta:
        params = GasParams(2, args.n, nb / args.n)
        L = thermal_box(V, params, args.m)
        th = solve_thermal(V, params, Grid.cube(2, L, args.m), tol=1e-9, max_iter=20000)
        rep = verify_decay(th, V)
        print(f"{nb:6g} {L:6.3f} {th.iterations:6d} {th.residual:9.2e} {th.max_density:12.4f} "
              f"{rep.raw_slope:12.3f} {rep.fraction_ok:9.0%}")


if __name__ == "__main__":
    main()
