"""Command-line entry point: ``coulomb-gas <subcommand> [--config FILE] [--key=value ...]``.

Exit codes: 0 success, 1 failed verification, 2 precondition violation,
3 non-convergence, 4 partial results.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config, parse_overrides
from .errors import ConvergenceError, PreconditionError

EXIT_OK, EXIT_FAILED, EXIT_PRECONDITION, EXIT_NONCONVERGENCE, EXIT_PARTIAL = 0, 1, 2, 3, 4


def _cmd_solve_thermal(cfg: RunConfig, args) -> int:
    from .experiments import run_dir, setup_cell
    from .thermal import save_thermal, verify_decay

    n = cfg.n_list[0]
    params, V, _, thermal = setup_cell(cfg, n)
    out = run_dir(cfg, "thermal", args.out)
    save_thermal(thermal, out / "thermal.bin")
    decay = verify_decay(thermal, V)
    summary = {**thermal.sidecar(), "max_density": thermal.max_density, "grid": thermal.grid.describe(),
               "decay": decay.__dict__}
    (out / "record.json").write_text(json.dumps(summary, indent=1, default=float))
    print(f"N={n} N*beta={params.nbeta:.4g} residual={thermal.residual:.3e} "
          f"iterations={thermal.iterations} c={thermal.lagrange_c:.10g} -> {out}")
    return EXIT_OK


def _cmd_sample(cfg: RunConfig, args) -> int:
    from .experiments import run_chains, run_dir, setup_cell
    from .sampler import write_samples
    from .thermal import save_thermal

    n = cfg.n_list[0]
    params, V, kernel, thermal = setup_cell(cfg, n)
    chains, seeds, acc = run_chains(cfg, n, params, V, kernel, thermal)
    out = run_dir(cfg, "sample", args.out)
    save_thermal(thermal, out / "thermal.bin")
    (out / "samples").mkdir(exist_ok=True)
    for c, ch in enumerate(chains):
        write_samples(ch, out / "samples" / f"N{n}_chain{c}.bin", cfg.dim, n)
    record = {"config_hash": cfg.content_hash(), "params": params.as_dict(), "master_seed": cfg.seed,
              "chain_seeds": seeds, "acceptance": acc,
              "samples": [f"samples/N{n}_chain{c}.bin" for c in range(len(chains))]}
    (out / "record.json").write_text(json.dumps(record, indent=1))
    print(f"N={n}: {sum(map(len, chains))} samples from {len(chains)} chains, "
          f"mean acceptance {np.mean(acc):.3f} -> {out}")
    return EXIT_OK


def _cmd_distance(cfg: RunConfig, args) -> int:
    from .experiments import energy_distance
    from .measures import bin_to_grid
    from .metrics import bl_norm
    from .sampler import read_samples
    from .thermal import load_thermal

    if not args.samples or not args.thermal:
        raise PreconditionError("distance needs --samples FILE and --thermal FILE")
    thermal = load_thermal(args.thermal)
    rows = []
    for path in args.samples:
        for i, s in enumerate(read_samples(path)):
            emp = bin_to_grid(s, thermal.grid)
            rows.append((path, i, bl_norm(emp - thermal.measure).value, energy_distance(emp, thermal)))
    out = Path(args.out) if args.out else Path(args.thermal).with_name("distances.csv")
    with open(out, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["file", "index", "bl", "h1"])
        wr.writerows([(p, i, repr(b), repr(h)) for p, i, b, h in rows])
    bl = np.array([r[2] for r in rows])
    print(f"{len(rows)} samples: median BL {np.median(bl):.5g} -> {out}")
    return EXIT_OK


def _cmd_sweep(cfg: RunConfig, args) -> int:
    from .experiments import concentration_sweep, rate_fit, reproduce

    if args.from_record:
        same, out = reproduce(args.from_record, args.out)
        print(f"replay -> {out}: sweep.csv {'identical' if same else 'DIFFERS'}")
        return EXIT_OK if same else EXIT_FAILED
    result, record = concentration_sweep(cfg, args.out)
    for r in result.rows:
        print(f"N={r.n:5d} beta={r.beta:.4g} median BL={r.median_bl:.5g} N^(1/d)*median={r.scaled_median:.4g}")
    if len(result.rows) >= 4:
        fit = rate_fit(result)
        print(f"slope={fit.slope:.4f} (expected {-1 / cfg.dim:.4f}) r2={fit.r2:.4f}"
              + (" FLAGGED" if fit.flagged else ""))
    print(f"-> {args.out or Path(cfg.runs_dir) / record['run_id']}")
    return EXIT_PARTIAL if result.partial else EXIT_OK


def _cmd_lower_bound(cfg: RunConfig, args) -> int:
    from .experiments import lower_bound_experiment, run_dir

    rep = lower_bound_experiment(cfg, n_samples=args.n_samples)
    out = run_dir(cfg, "lower-bound", args.out)
    (out / "record.json").write_text(json.dumps(rep.as_dict(), indent=1))
    print(f"N={rep.n} M={rep.density_bound:.4g} bound={rep.bound:.5g} h={rep.spacing:.4g} "
          f"min margin={min(rep.margins):.4g} violations={rep.violations}/{len(rep.margins)}")
    return EXIT_OK if rep.violations == 0 else EXIT_FAILED


def _cmd_diag_bound(cfg: RunConfig, args) -> int:
    from .experiments import diagnostic_upper_bound, run_dir

    rep = diagnostic_upper_bound(cfg)
    out = run_dir(cfg, "diag-bound", args.out)
    (out / "record.json").write_text(json.dumps(rep.as_dict(), indent=1, default=float))
    print(f"N={rep.n} log K = {rep.log_k.mean:.4g} +- {rep.log_k.std_error:.2g} (used {rep.log_k_used:.4g})")
    for r in rep.rows:
        print(f"k={r.k:5.2f} P_hat={r.p_hat:.4f} bound={r.bound:.4g} {'ok' if r.consistent else 'VIOLATED'}")
    return EXIT_OK if all(r.consistent for r in rep.rows) else EXIT_FAILED


def _cmd_verify(cfg: RunConfig, args) -> int:
    from .verify import run_all

    results = run_all(seed=cfg.seed, quick=args.quick)
    for name, ok, detail in results:
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_FAILED


COMMANDS = {
    "solve-thermal": _cmd_solve_thermal,
    "sample": _cmd_sample,
    "distance": _cmd_distance,
    "sweep": _cmd_sweep,
    "verify": _cmd_verify,
    "lower-bound": _cmd_lower_bound,
    "diag-bound": _cmd_diag_bound,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coulomb-gas", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--out", help="output directory (default runs/<id>/)")
        if name == "distance":
            p.add_argument("--samples", nargs="+", help="binary sample dumps")
            p.add_argument("--thermal", help="thermal.bin written by solve-thermal")
        if name == "sweep":
            p.add_argument("--from-record", help="re-run a record.json and compare sweep.csv")
        if name == "verify":
            p.add_argument("--quick", action="store_true", help="run a fifth of the cases")
        if name == "lower-bound":
            p.add_argument("--n-samples", type=int, default=100)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, parse_overrides(extra))
        return COMMANDS[args.command](cfg, args)
    except PreconditionError as exc:
        print(f"precondition violated: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except ConvergenceError as exc:
        print(f"did not converge: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
