"""Property suites behind ``coulomb-gas verify``: splitting, smearing and BL/H^-1(K) comparison."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .energy import GasParams, smearing_identity_check, split_hamiltonian
from .kernel import CoulombKernel
from .measures import Grid, GridMeasure, ParticleConfig
from .metrics import Region, check_bl_vs_h1k
from .thermal import quadratic, sample_measure, solve_thermal, thermal_box


@dataclass(frozen=True)
class SuiteResult:
    name: str
    n_cases: int
    worst: float
    tol: float
    failures: int
    extra: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.failures == 0

    def line(self) -> str:
        return f"{self.n_cases} cases, worst {self.worst:.3e} (tol {self.tol:.0e}), {self.failures} failures"


def splitting_suite(n_cases: int = 100, seed: int = 0, tol: float = 1e-10) -> SuiteResult:
    """Random (config, beta) pairs, N <= 64, d in {2, 3}; relative split residual."""
    rng = np.random.default_rng(seed)
    V = quadratic()
    cache: dict = {}
    worst, fails = 0.0, 0
    for _ in range(n_cases):
        d = int(rng.choice([2, 3]))
        n = int(rng.choice([4, 8, 16, 32, 64]))
        nbeta = float(rng.choice([4.0, 8.0, 16.0]))
        key = (d, n, nbeta)
        if key not in cache:
            params = GasParams(d, n, nbeta / n)
            m = 48 if d == 2 else 20
            grid = Grid.cube(d, thermal_box(V, params, m, probe_m=32 if d == 2 else 16), m)
            cache[key] = solve_thermal(V, params, grid, tol=1e-12, max_iter=20000)
        thermal = cache[key]
        pts = sample_measure(thermal.measure, n, rng)
        rel = split_hamiltonian(ParticleConfig(pts), thermal, V).relative_residual
        worst = max(worst, rel)
        fails += rel > tol
    return SuiteResult("splitting", n_cases, worst, tol, int(fails))


def _separated(rng: np.random.Generator, n: int, sep: float, side: float) -> np.ndarray:
    pts: list[np.ndarray] = []
    while len(pts) < n:
        x = rng.uniform(-side, side, 3)
        if all(np.linalg.norm(x - q) >= sep for q in pts):
            pts.append(x)
    return np.array(pts)


def smearing_suite(n_cases: int = 50, seed: int = 0, tol: float = 1e-9,
                   overlap_tol: float = 1e-12) -> tuple[SuiteResult, SuiteResult]:
    """d = 3: equality for configurations separated by 2 eps, inequality when balls overlap."""
    rng = np.random.default_rng(seed)
    kernel = CoulombKernel(3)
    worst, fails = 0.0, 0
    worst_o, fails_o = 0.0, 0
    for _ in range(n_cases):
        n = int(rng.integers(2, 12))
        eps = float(rng.uniform(0.05, 0.3))
        chk = smearing_identity_check(ParticleConfig(_separated(rng, n, 2 * eps * (1 + 1e-9), 2.0)), eps, kernel)
        worst = max(worst, chk.relative_gap)
        fails += chk.relative_gap > tol
        # overlapping: a pair at distance inside (0, 2 eps)
        pts = _separated(rng, n, 4 * eps, 2.0)
        u = rng.standard_normal(3)
        pts[1] = pts[0] + rng.uniform(0.1, 1.9) * eps * u / np.linalg.norm(u)
        chk = smearing_identity_check(ParticleConfig(pts), eps, kernel)
        worst_o = max(worst_o, -chk.gap)
        fails_o += chk.gap < -overlap_tol
    return (SuiteResult("smearing-equality", n_cases, worst, tol, int(fails)),
            SuiteResult("smearing-inequality", n_cases, worst_o, overlap_tol, int(fails_o)))


def inequality_suite(n_cases: int = 100, seed: int = 0, m: int = 24) -> SuiteResult:
    """||mu||_BL <= sqrt(d+1) |K|^(1/2) ||mu||_{H^-1(K)} for random signed measures on boxes K.

    ``worst`` is the largest observed ratio of the two sides. Failures of the
    |K|^(d/2) form of the constant are counted in ``extra``.
    """
    rng = np.random.default_rng(seed)
    worst, fails, printed_fails, small = 0.0, 0, 0, 0
    for _ in range(n_cases):
        d = int(rng.choice([2, 3]))
        mm = m if d == 2 else m // 2
        grid = Grid.cube(d, float(rng.uniform(0.5, 3.0)), mm)
        lo = rng.integers(0, mm // 2, d)
        hi = lo + rng.integers(2, mm // 2, d)
        mask = np.zeros(grid.shape, dtype=bool)
        mask[tuple(slice(a, b) for a, b in zip(lo, hi))] = True
        K = Region(grid, mask)
        w = np.where(mask, rng.standard_normal(grid.shape), 0.0)
        w *= rng.uniform(0.01, 10.0) / np.abs(w).sum()
        rep = check_bl_vs_h1k(GridMeasure(grid, w), K)
        worst = max(worst, rep.ratio)
        fails += not rep.holds
        printed_fails += rep.printed_ratio > 1.0 + 1e-12
        small += K.volume < 1
    return SuiteResult("bl-vs-h1k", n_cases, worst, 1.0, int(fails),
                       {"printed_constant_failures": int(printed_fails), "regions_below_unit_volume": int(small)})


def run_all(seed: int = 0, quick: bool = False) -> list[tuple[str, bool, str]]:
    k = 5 if quick else 1
    suites = [splitting_suite(100 // k, seed), *smearing_suite(50 // k, seed), inequality_suite(100 // k, seed)]
    return [(s.name, s.ok, s.line()) for s in suites]
