"""Thermal equilibrium measure: fixed-point solver, free energy, decay fit and log K_{N,beta}."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import logsumexp

from .energy import GasParams
from .errors import ConvergenceError, DomainError, PreconditionError
from .kernel import CoulombKernel
from .measures import Grid, GridMeasure, confinement_half_width, interpolate, potential_field, read_binary, write_binary

log = logging.getLogger(__name__)

BULK_THRESHOLD = 1e-10


@dataclass(frozen=True, eq=False)
class Potential:
    """Confining potential V >= 0 with V(x) >= const |x|^exponent outside a ball."""

    name: str
    value: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    exponent: float
    const: float
    params: dict = field(default_factory=dict)
    # (kind, scale, r_table, v_table, tail_const, tail_exponent) for compiled
    # samplers: kind 0 is scale*|x|^2, kind 1 a radial table; None otherwise
    radial: tuple | None = None

    def __call__(self, x) -> np.ndarray:
        return self.value(np.asarray(x, dtype=float))

    def describe(self) -> dict:
        return {"name": self.name, "exponent": self.exponent, "const": self.const, **self.params}


def quadratic(scale: float = 1.0) -> Potential:
    return Potential(
        "quadratic",
        lambda x: scale * np.sum(x**2, axis=-1),
        lambda x: 2.0 * scale * x,
        exponent=2.0,
        const=scale,
        params={"scale": scale},
        radial=(0, float(scale), np.zeros(1), np.zeros(1), 0.0, 0.0),
    )


def radial_table(path: str | Path) -> Potential:
    """Radial potential from a two-column ``r,V`` table (linear interpolation).

    Beyond the last row the table is continued by const * r^exponent fitted
    through the last two rows.
    """
    data = np.loadtxt(path, delimiter=",", ndmin=2, comments="#")
    r_tab, v_tab = data[:, 0], data[:, 1]
    if np.any(np.diff(r_tab) <= 0) or r_tab[0] != 0:
        raise ValueError("table radii must start at 0 and increase strictly")
    if np.any(v_tab < 0):
        raise ValueError("potential must be nonnegative")
    (r1, r2), (v1, v2) = r_tab[-2:], v_tab[-2:]
    s = np.log(v2 / v1) / np.log(r2 / r1) if v1 > 0 and r1 > 0 else 2.0
    c = v2 / r2**s

    def value(x):
        r = np.linalg.norm(x, axis=-1)
        return np.where(r <= r2, np.interp(r, r_tab, v_tab), c * r**s)

    def grad(x, dr=1e-6):
        r = np.linalg.norm(x, axis=-1, keepdims=True)
        e = x / np.where(r > 0, r, 1.0)
        dv = (value(x + dr * e) - value(x - dr * e)) / (2 * dr)
        return dv[..., None] * e

    return Potential("custom-table", value, grad, exponent=float(s), const=float(c),
                     params={"table": str(path)}, radial=(1, 1.0, r_tab, v_tab, float(c), float(s)))


def make_potential(name: str, table: str | None = None) -> Potential:
    if name == "quadratic":
        return quadratic()
    if name == "custom-table":
        if not table:
            raise PreconditionError("potential=custom-table needs potential_table=<path>")
        return radial_table(table)
    raise PreconditionError(f"unknown potential {name!r}")


@dataclass(frozen=True, eq=False)
class ThermalMeasure:
    measure: GridMeasure
    log_density: np.ndarray
    lagrange_c: float
    residual: float
    params: GasParams
    kernel: CoulombKernel
    field: np.ndarray
    iterations: int = 0
    history: tuple[float, ...] = ()

    @property
    def grid(self) -> Grid:
        return self.measure.grid

    @property
    def max_density(self) -> float:
        return float(np.exp(self.log_density.max()))

    def euler_lagrange(self, V: Callable) -> np.ndarray:
        v = _nodal(V, self.grid)
        return self.field + v + self.log_density / self.params.nbeta

    def sidecar(self) -> dict:
        return {
            "params": self.params.as_dict(),
            "cbar": self.kernel.cbar,
            "lagrange_c": self.lagrange_c,
            "residual": self.residual,
            "iterations": self.iterations,
        }


def _nodal(V: Callable, grid: Grid) -> np.ndarray:
    return np.asarray(V(grid.coords().reshape(-1, grid.dim)), dtype=float).reshape(grid.shape)


def el_residual(log_w: np.ndarray, h: np.ndarray, v: np.ndarray, log_vol: float, nbeta: float) -> tuple[float, float]:
    """(sup over bulk nodes of |EL - c|, c) with c the mu-weighted mean of EL."""
    w = np.exp(log_w)
    el = h + v + (log_w - log_vol) / nbeta
    c = float(np.sum(w * el))
    bulk = w / np.exp(log_vol) > BULK_THRESHOLD
    return float(np.max(np.abs(el[bulk] - c))), c


def solve_thermal(V: Callable, params: GasParams, grid: Grid, kernel: CoulombKernel | None = None,
                  tol: float = 1e-8, max_iter: int = 5000, damping: float = 0.5,
                  min_damping: float = 0.01) -> ThermalMeasure:
    """Damped Picard iteration mu <- (1-t) mu + t normalize(exp(-N beta (V + h^mu))).

    Iterates are stored as log-weights, so every iterate is a strictly
    positive probability vector. Stops when the Euler-Lagrange sup-residual
    on bulk nodes drops below ``tol``; t is halved whenever the residual
    grows, down to ``min_damping``.
    """
    params.require_thermal()
    kernel = kernel or CoulombKernel(grid.dim)
    if kernel.dim != grid.dim:
        raise PreconditionError(f"kernel in R^{kernel.dim}, grid in R^{grid.dim}")
    nbeta = params.nbeta
    log_vol = float(np.log(grid.cell_volume))
    v = _nodal(V, grid)

    log_w = -nbeta * v
    log_w -= logsumexp(log_w)
    t = damping
    history: list[float] = []
    for it in range(max_iter + 1):
        mu = GridMeasure(grid, np.exp(log_w))
        h = potential_field(mu, kernel, backend="fft")
        res, c = el_residual(log_w, h, v, log_vol, nbeta)
        history.append(res)
        if res < tol:
            w = np.exp(log_w)
            w /= w.sum()
            return ThermalMeasure(GridMeasure(grid, w, kind="probability"), log_w - log_vol, c, res,
                                  params, kernel, h, it, tuple(history))
        if it == max_iter:
            break
        if len(history) > 1 and res > history[-2]:
            t = max(0.5 * t, min_damping)
        target = -nbeta * (v + h)
        target -= logsumexp(target)
        log_w = np.logaddexp(np.log1p(-t) + log_w, np.log(t) + target)
        log_w -= logsumexp(log_w)
    raise ConvergenceError(
        f"thermal fixed point did not reach tol={tol} in {max_iter} iterations "
        f"(last residual {history[-1]:.3e})", history)


def boundary_ratio(thermal: ThermalMeasure) -> float:
    """Largest boundary-node density relative to the peak density."""
    lr = thermal.log_density
    edge = np.zeros(lr.shape, dtype=bool)
    for ax in range(lr.ndim):
        sl = [slice(None)] * lr.ndim
        sl[ax] = 0
        edge[tuple(sl)] = True
        sl[ax] = -1
        edge[tuple(sl)] = True
    return float(np.exp(lr[edge].max() - lr.max()))


def thermal_box(V: Callable, params: GasParams, m: int, kernel: CoulombKernel | None = None,
                tail: float = 1e-12, grow: float = 1.2, probe_m: int = 64, max_tries: int = 30) -> float:
    """Half-width L of [-L, L]^d on which mu_beta is negligible at the box boundary.

    Starts from the potential-only rule exp(-N beta V(L e_1)) < tail, then
    grows L until a coarse solve has boundary density below ``tail`` times
    its peak. The interaction spreads mass beyond where V alone confines.
    """
    params.require_thermal()
    L = confinement_half_width(V, params.nbeta, params.dim, tail)
    for _ in range(max_tries):
        grid = Grid.cube(params.dim, L, min(m, probe_m))
        th = solve_thermal(V, params, grid, kernel, tol=1e-6, max_iter=20000)
        if boundary_ratio(th) < tail:
            return L
        L *= grow
    raise ConvergenceError(f"no box up to half-width {L:.3g} contains mu_beta to tail {tail}")


def free_energy(mu: GridMeasure, V: Callable, params: GasParams, kernel: CoulombKernel | None = None) -> float:
    """E_beta(mu) = G(mu, mu)/2 + int V dmu + (1/(N beta)) int mu log mu."""
    kernel = kernel or CoulombKernel(mu.grid.dim)
    w = mu.weights
    if np.any(w < 0):
        node = np.unravel_index(int(np.argmin(w)), w.shape)
        raise DomainError(f"negative density at node {tuple(int(i) for i in node)}")
    h = potential_field(mu, kernel, backend="fft")
    pos = w > 0
    entropy = float(np.sum(w[pos] * np.log(w[pos] / mu.grid.cell_volume)))
    return 0.5 * float(np.sum(h * w)) + float(np.sum(_nodal(V, mu.grid) * w)) + entropy / params.nbeta


@dataclass(frozen=True)
class DecayReport:
    conclusive: bool
    slope: float
    intercept: float
    raw_slope: float
    envelope_const: float
    compact_radius: float
    n_exterior: int
    fraction_ok: float
    corner_density: float


def _decay_exponent(thermal: ThermalMeasure, V: Callable) -> tuple[np.ndarray, np.ndarray]:
    coords = thermal.grid.coords()
    r = np.linalg.norm(coords, axis=-1)
    w_pot = _nodal(V, thermal.grid)
    if thermal.grid.dim == 2:
        with np.errstate(divide="ignore"):
            w_pot = w_pot - thermal.kernel.cbar * np.log(r)
    return r, w_pot


def verify_decay(thermal: ThermalMeasure, V: Callable, min_exterior: int = 20,
                 radii: np.ndarray | None = None) -> DecayReport:
    """Fit log mu_beta against -N beta V (d=2: V - log|x|) outside a ball K and check an envelope.

    For each candidate radius of K, the envelope log mu <= log C - C N beta W
    is tested with the best single constant C (the margin is concave in log C).
    The smallest radius admitting such a C is reported.
    """
    nbeta = thermal.params.nbeta
    r, w_pot = _decay_exponent(thermal, V)
    logrho = thermal.log_density
    corner = float(np.exp(logrho.ravel()[np.argmax(r)]))
    rmax = float(r.max())
    if radii is None:
        radii = np.linspace(0.05, 0.9, 35) * rmax
    best = None
    for rk in radii:
        ext = r > rk
        if ext.sum() < min_exterior:
            break
        z, ell = nbeta * w_pot[ext], logrho[ext]
        if np.any(~np.isfinite(z)):
            continue

        def neg_margin(lc):
            cc = np.exp(lc)
            return -float(np.min(lc - cc * z - ell))

        opt = minimize_scalar(neg_margin, bounds=(-12.0, 6.0), method="bounded", options={"xatol": 1e-10})
        C = float(np.exp(opt.x))
        ok = (np.log(C) - C * z) >= ell - 1e-12
        A = np.vstack([np.ones_like(z), -z]).T
        (a, s), *_ = np.linalg.lstsq(A, ell, rcond=None)
        Araw = np.vstack([np.ones_like(z), -w_pot[ext]]).T
        (_, s_raw), *_ = np.linalg.lstsq(Araw, ell, rcond=None)
        report = DecayReport(True, float(s), float(a), float(s_raw), C, float(rk), int(ext.sum()),
                             float(ok.mean()), corner)
        if ok.all():
            return report
        best = best or report
    if best is None:
        return DecayReport(False, np.nan, np.nan, np.nan, np.nan, np.nan, 0, 0.0, corner)
    return best


@dataclass(frozen=True)
class LogKEstimate:
    mean: float
    std_error: float
    n_samples: int


def sample_measure(mu: GridMeasure, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw points from the histogram reading of mu: pick a node, jitter uniformly in its cell."""
    grid = mu.grid
    p = mu.weights.ravel()
    cdf = np.cumsum(p)
    cdf /= cdf[-1]
    flat = np.minimum(np.searchsorted(cdf, rng.random(n), side="right"), grid.size - 1)
    idx = np.stack(np.unravel_index(flat, grid.shape), axis=-1)
    h = grid.spacing
    pts = np.array(grid.lower) + idx * h + (rng.random((n, grid.dim)) - 0.5) * h
    return np.clip(pts, grid.lower, grid.upper)


def fluctuation_energy(points: np.ndarray, thermal: ThermalMeasure) -> np.ndarray:
    """G(emp - mu_beta, emp - mu_beta) without the diagonal, for a batch of configurations.

    ``points`` has shape ``(S, N, d)``; one-body terms use interpolated h^mu.
    """
    s, n, d = points.shape
    g_mm = float(np.sum(thermal.field * thermal.measure.weights))
    h_pts = interpolate(thermal.field, thermal.grid, points.reshape(-1, d)).reshape(s, n)
    pair = np.zeros(s)
    for i in range(n):
        for j in range(i + 1, n):
            pair += thermal.kernel.radial(np.linalg.norm(points[:, i] - points[:, j], axis=-1))
    return 2.0 * pair / n**2 - 2.0 * h_pts.mean(axis=1) + g_mm


def estimate_log_K(thermal: ThermalMeasure, params: GasParams | None = None, n_samples: int = 10_000,
                   seed: int = 0, block: int = 1000) -> LogKEstimate:
    """Monte Carlo log E_{mu_beta^N}[exp(-(N^2 beta / 2) G(emp - mu_beta, emp - mu_beta))].

    Blocks draw from independent streams spawned from ``seed``; the result
    is fixed by (seed, n_samples, block).
    """
    params = params or thermal.params
    if n_samples < 100:
        raise PreconditionError("need at least 100 samples")
    n = params.n
    streams = np.random.SeedSequence(seed).spawn(-(-n_samples // block))
    expo = []
    for k, ss in enumerate(streams):
        m = min(block, n_samples - k * block)
        rng = np.random.default_rng(ss)
        pts = sample_measure(thermal.measure, m * n, rng).reshape(m, n, params.dim)
        expo.append(-0.5 * n**2 * params.beta * fluctuation_energy(pts, thermal))
    a = np.concatenate(expo)
    if not np.all(np.isfinite(a)):
        raise ConvergenceError("non-finite Monte Carlo weights in log K estimate")
    mean = float(logsumexp(a) - np.log(a.size))
    w = np.exp(a - a.max())
    se = float(np.std(w, ddof=1) / np.sqrt(a.size) / np.mean(w))
    return LogKEstimate(mean, max(se, np.finfo(float).tiny), a.size)


def save_thermal(thermal: ThermalMeasure, path: str | Path) -> None:
    path = Path(path)
    write_binary(thermal.measure, path)
    path.with_suffix(".json").write_text(json.dumps(thermal.sidecar(), indent=2))


def load_thermal(path: str | Path) -> ThermalMeasure:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    mu = read_binary(path)
    w = mu.weights / mu.weights.sum()
    mu = GridMeasure(mu.grid, w, kind="probability")
    kernel = CoulombKernel(mu.grid.dim, meta.get("cbar", 1.0))
    params = GasParams(**meta["params"])
    return ThermalMeasure(mu, np.log(w / mu.grid.cell_volume), meta["lagrange_c"], meta["residual"],
                          params, kernel, potential_field(mu, kernel, backend="fft"), meta.get("iterations", 0))
