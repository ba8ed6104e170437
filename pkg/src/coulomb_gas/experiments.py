"""Concentration sweep, rate fit, lower-bound and diagnostic-bound experiments, plus persistence."""

from __future__ import annotations

import csv
import json
import logging
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig
from .energy import GasParams
from .errors import ConvergenceError, PreconditionError
from .kernel import CoulombKernel
from .measures import Grid, GridMeasure, ParticleConfig, bin_to_grid, potential_field
from .metrics import bl_norm, phi_lambda_bound
from .sampler import init_chain, run_chain, write_samples
from .thermal import (LogKEstimate, ThermalMeasure, estimate_log_K, fluctuation_energy, make_potential,
                      save_thermal, solve_thermal, thermal_box)

log = logging.getLogger(__name__)

SWEEP_COLUMNS = ["N", "beta", "k", "q_k", "median_bl", "q25", "q75", "scaled_median"]


def chain_seed(master: int, n: int, chain: int) -> int:
    return int(np.random.SeedSequence([master, n, chain]).generate_state(1, dtype=np.uint64)[0] >> 1)


def setup_cell(cfg: RunConfig, n: int) -> tuple[GasParams, object, CoulombKernel, ThermalMeasure]:
    """Parameters, potential, kernel and solved thermal measure for one particle number."""
    params = GasParams.scheduled(cfg.dim, n, cfg.alpha)
    params.require_thermal()
    V = make_potential(cfg.potential, cfg.potential_table)
    kernel = CoulombKernel(cfg.dim, cfg.cbar)
    m = cfg.grid_nodes(n)
    L = cfg.box_l or thermal_box(V, params, m, kernel)
    grid = Grid.cube(cfg.dim, L, m)
    thermal = solve_thermal(V, params, grid, kernel, tol=cfg.tol, max_iter=cfg.max_iter)
    return params, V, kernel, thermal


def run_chains(cfg: RunConfig, n: int, params, V, kernel, thermal) -> tuple[list[list[ParticleConfig]], list[int], list[float]]:
    seeds = [chain_seed(cfg.seed, n, c) for c in range(cfg.chains)]

    def one(seed: int):
        st = init_chain(V, params, seed, thermal=thermal, kernel=kernel)
        out = run_chain(st, V, params, kernel, cfg.sweeps, thin=cfg.thin, adapt=True, burn_in=cfg.burn_in)
        return out, st.acceptance_rate

    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as ex:
            results = list(ex.map(one, seeds))
    else:
        results = [one(s) for s in seeds]
    return [r[0] for r in results], seeds, [r[1] for r in results]


def energy_distance(emp: GridMeasure, thermal: ThermalMeasure) -> float:
    """sqrt of the grid Coulomb energy of emp - mu_beta (mean zero, so valid in d = 2)."""
    diff = emp - thermal.measure
    e = float(np.sum(potential_field(diff, thermal.kernel, backend="fft") * diff.weights))
    return float(np.sqrt(max(e, 0.0)))


def distances(samples: list[ParticleConfig], thermal: ThermalMeasure) -> tuple[list[float], list[float]]:
    bl, h1 = [], []
    for s in samples:
        emp = bin_to_grid(s, thermal.grid)
        bl.append(bl_norm(emp - thermal.measure).value)
        h1.append(energy_distance(emp, thermal))
    return bl, h1


@dataclass
class SweepRow:
    n: int
    beta: float
    median_bl: float
    q25: float
    q75: float
    scaled_median: float
    q_k: dict[float, float]


@dataclass
class SweepResult:
    dim: int
    rows: list[SweepRow]
    partial: list[int] = field(default_factory=list)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(SWEEP_COLUMNS)
            for r in self.rows:
                for k, q in r.q_k.items():
                    wr.writerow([r.n, repr(r.beta), repr(k), repr(q), repr(r.median_bl), repr(r.q25),
                                 repr(r.q75), repr(r.scaled_median)])

    @classmethod
    def from_csv(cls, path: str | Path, dim: int) -> SweepResult:
        rows: dict[int, SweepRow] = {}
        with open(path, newline="") as fh:
            for rec in csv.DictReader(fh):
                n = int(rec["N"])
                if n not in rows:
                    rows[n] = SweepRow(n, float(rec["beta"]), float(rec["median_bl"]), float(rec["q25"]),
                                       float(rec["q75"]), float(rec["scaled_median"]), {})
                rows[n].q_k[float(rec["k"])] = float(rec["q_k"])
        return cls(dim, list(rows.values()))


def summarize(n: int, beta: float, dim: int, bl: list[float], k_list) -> SweepRow:
    d = np.asarray(bl)
    q25, med, q75 = (float(v) for v in np.quantile(d, [0.25, 0.5, 0.75]))
    scale = n ** (1.0 / dim)
    qk = {float(k): float(np.mean(d <= k / scale)) for k in sorted(k_list)}
    return SweepRow(n, beta, med, q25, q75, med * scale, qk)


def versions() -> dict:
    import numba
    import scipy

    return {"coulomb_gas": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__}


def run_dir(cfg: RunConfig, command: str, out: str | Path | None = None) -> Path:
    path = Path(out) if out else Path(cfg.runs_dir) / f"{command}-{cfg.content_hash()[:12]}"
    path.mkdir(parents=True, exist_ok=True)
    (path / "config.txt").write_text(cfg.to_text())
    return path


def concentration_sweep(cfg: RunConfig, out: str | Path | None = None,
                        save_samples: bool = True) -> tuple[SweepResult, dict]:
    """For each N: solve mu_beta, run chains, and collect BL and energy distances per recorded sample."""
    path = run_dir(cfg, "sweep", out) if out is not False else None
    record = {
        "run_id": path.name if path else None,
        "config_hash": cfg.content_hash(),
        "config": cfg.to_text(),
        "master_seed": cfg.seed,
        "potential": make_potential(cfg.potential, cfg.potential_table).describe(),
        "versions": versions(),
        "cells": [],
    }
    rows, partial = [], []
    for n in cfg.n_list:
        t0 = time.perf_counter()
        cell = {"N": n}
        try:
            params, V, kernel, thermal = setup_cell(cfg, n)
            cell.update(params=params.as_dict(), grid=thermal.grid.describe(),
                        thermal={"residual": thermal.residual, "iterations": thermal.iterations,
                                 "lagrange_c": thermal.lagrange_c, "max_density": thermal.max_density})
            chains, seeds, acc = run_chains(cfg, n, params, V, kernel, thermal)
            samples = [s for ch in chains for s in ch]
            if not samples:
                raise PreconditionError("no samples recorded; increase sweeps or lower thin")
            bl, h1 = distances(samples, thermal)
            cell.update(chain_seeds=seeds, acceptance=acc, bl=bl, h1=h1)
            rows.append(summarize(n, params.beta, cfg.dim, bl, cfg.k_list))
            if path:
                save_thermal(thermal, path / f"thermal_N{n}.bin")
                if save_samples:
                    (path / "samples").mkdir(exist_ok=True)
                    for c, ch in enumerate(chains):
                        write_samples(ch, path / "samples" / f"N{n}_chain{c}.bin", cfg.dim, n)
        except (PreconditionError, ConvergenceError, RuntimeError) as exc:
            log.error("N=%d aborted: %s", n, exc)
            cell["error"] = f"{type(exc).__name__}: {exc}"
            partial.append(n)
        cell["seconds"] = time.perf_counter() - t0
        record["cells"].append(cell)
    result = SweepResult(cfg.dim, rows, partial)
    record["partial"] = partial
    if path:
        result.to_csv(path / "sweep.csv")
        (path / "record.json").write_text(json.dumps(record, indent=1))
    return result, record


def reproduce(record_path: str | Path, out: str | Path | None = None) -> tuple[bool, Path]:
    """Re-run a sweep from its record.json and compare sweep.csv byte for byte."""
    from .config import load_config, parse_pairs

    record_path = Path(record_path)
    record = json.loads(record_path.read_text())
    cfg = load_config(overrides=parse_pairs(record["config"]))
    out = Path(out) if out else record_path.parent.with_name(record_path.parent.name + "-replay")
    concentration_sweep(cfg, out, save_samples=False)
    same = (out / "sweep.csv").read_bytes() == (record_path.parent / "sweep.csv").read_bytes()
    return same, out


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r2: float

    @property
    def flagged(self) -> bool:
        return self.r2 < 0.8


def rate_fit(sweep: SweepResult | list[tuple[int, float]]) -> RateFit:
    """Least squares of log(median distance) on log N."""
    pts = [(r.n, r.median_bl) for r in sweep.rows] if isinstance(sweep, SweepResult) else list(sweep)
    if len(pts) < 4:
        raise PreconditionError(f"rate fit needs at least 4 N values, got {len(pts)}")
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise ValueError("degenerate input: constant N or constant distance")
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    r2 = 1.0 - float(resid @ resid) / float(((y - y.mean()) ** 2).sum())
    return RateFit(float(slope), float(intercept), r2)


@dataclass
class LowerBoundReport:
    n: int
    density_bound: float
    bound: float
    spacing: float
    distances: list[float]
    margins: list[float]
    violations: int
    adversarial_distance: float
    adversarial_ok: bool
    inflated_bound: float

    def as_dict(self) -> dict:
        return asdict(self)


def lower_bound_experiment(cfg: RunConfig, n: int | None = None, n_samples: int = 100) -> LowerBoundReport:
    """Check ||emp_N - mu_beta||_BL >= N^(-1/d) / (2 (2 M k_d)^(1/d)) - 2h on Gibbs samples."""
    n = n or cfg.n_list[0]
    params, V, kernel, thermal = setup_cell(cfg, n)
    M = cfg.density_bound or thermal.max_density
    chains, _, _ = run_chains(cfg, n, params, V, kernel, thermal)
    samples = [s for ch in chains for s in ch][:n_samples]
    if len(samples) < n_samples:
        raise PreconditionError(f"only {len(samples)} samples recorded, need {n_samples}")
    bound, _ = phi_lambda_bound(samples[0], M)
    h = thermal.grid.max_spacing
    dist = [bl_norm(bin_to_grid(s, thermal.grid) - thermal.measure).value for s in samples]
    margins = [d - (bound - 2 * h) for d in dist]
    # all particles stacked on the node nearest the origin
    coords = thermal.grid.coords().reshape(-1, cfg.dim)
    w = np.zeros(thermal.grid.size)
    w[int(np.argmin(np.linalg.norm(coords, axis=1)))] = 1.0
    stacked = GridMeasure(thermal.grid, w.reshape(thermal.grid.shape), kind="probability")
    adv = bl_norm(stacked - thermal.measure).value
    inflated, _ = phi_lambda_bound(samples[0], 10 * M)
    return LowerBoundReport(n, M, bound, h, dist, margins, int(sum(m < 0 for m in margins)), adv,
                            bool(adv >= bound - 2 * h), inflated)


@dataclass
class DiagRow:
    k: float
    threshold: float
    p_hat: float
    n_in_event: int
    min_energy: float
    bound: float
    consistent: bool


@dataclass
class DiagReport:
    n: int
    beta: float
    log_k: LogKEstimate
    log_k_used: float
    n_samples: int
    rows: list[DiagRow]

    def as_dict(self) -> dict:
        return asdict(self)


def diagnostic_upper_bound(cfg: RunConfig, n: int | None = None) -> DiagReport:
    """Compare P(||emp - mu_beta||_BL > k/N^(1/d)) with exp(-log K - (N^2 beta/2) min G) over observed samples.

    The infimum over the event is replaced by the smallest fluctuation energy
    seen among samples inside it, so this is a heuristic consistency check.
    """
    n = n or cfg.n_list[0]
    params, V, kernel, thermal = setup_cell(cfg, n)
    est = estimate_log_K(thermal, params, cfg.log_k_samples, seed=cfg.seed)
    lower = est.mean - 3 * est.std_error
    log_k_used = max(lower, 0.0) if cfg.dim >= 3 else lower
    chains, _, _ = run_chains(cfg, n, params, V, kernel, thermal)
    samples = [s for ch in chains for s in ch]
    bl, _ = distances(samples, thermal)
    pts = np.stack([s.points for s in samples])
    energy = fluctuation_energy(pts, thermal)
    bl = np.asarray(bl)
    rows = []
    scale = n ** (1.0 / cfg.dim)
    for k in cfg.k_list:
        thr = k / scale
        inside = bl > thr
        p_hat = float(inside.mean())
        if inside.any():
            gmin = float(energy[inside].min())
            bound = float(np.exp(min(-log_k_used - 0.5 * n**2 * params.beta * gmin, 700.0)))
        else:
            gmin, bound = float("nan"), float(np.exp(min(-log_k_used, 700.0)))
        slack = 3.0 * np.sqrt(max(p_hat * (1 - p_hat), 1.0 / len(bl)) / len(bl))
        rows.append(DiagRow(float(k), thr, p_hat, int(inside.sum()), gmin, bound, bool(p_hat <= bound + slack)))
    return DiagReport(n, params.beta, est, log_k_used, len(samples), rows)
