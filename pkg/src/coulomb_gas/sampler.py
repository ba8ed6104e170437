"""Single-particle Metropolis chain for the Gibbs measure exp(-beta H_N)."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numba
import numpy as np

from .energy import GasParams, _pair_rows, hamiltonian
from .kernel import CoulombKernel
from .measures import Grid, ParticleConfig
from .thermal import ThermalMeasure, sample_measure

ADAPT_WINDOW = 50
ADAPT_FACTOR = 1.1
TARGET_ACCEPTANCE = (0.2, 0.5)
DRIFT_TOL = 1e-8


class CacheDriftError(AssertionError):
    pass


@dataclass
class ChainState:
    points: np.ndarray
    pair_sums: np.ndarray
    v_values: np.ndarray
    step_size: float
    rng: np.random.Generator
    lower: np.ndarray
    upper: np.ndarray
    accepted: int = 0
    proposed: int = 0
    last_accepted: bool = field(default=False, repr=False)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def config(self) -> ParticleConfig:
        return ParticleConfig(self.points.copy())

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.proposed if self.proposed else 0.0

    def cached_energy(self) -> float:
        return 0.5 * float(self.pair_sums.sum()) + self.n * float(self.v_values.sum())


def _build_caches(points: np.ndarray, V: Callable, kernel: CoulombKernel) -> tuple[np.ndarray, np.ndarray]:
    pair = _pair_rows(points, kernel) if points.shape[0] > 1 else np.zeros(1)
    return pair, np.asarray(V(points), dtype=float).reshape(-1)


def init_chain(V: Callable, params: GasParams, seed: int, init: str = "thermal",
               thermal: ThermalMeasure | None = None, grid: Grid | None = None,
               kernel: CoulombKernel | None = None) -> ChainState:
    """Start a chain from i.i.d. draws of mu_beta (``init="thermal"``) or uniform in the box."""
    kernel = kernel or CoulombKernel(params.dim)
    grid = grid or (thermal.grid if thermal is not None else None)
    if grid is None:
        raise ValueError("init_chain needs a grid or a thermal measure to define the box")
    rng = np.random.default_rng(seed)
    lo, hi = np.array(grid.lower), np.array(grid.upper)
    if init == "thermal":
        if thermal is None:
            raise ValueError("init='thermal' needs a solved thermal measure")
        pts = sample_measure(thermal.measure, params.n, rng)
    elif init == "box":
        pts = lo + (hi - lo) * rng.random((params.n, params.dim))
    else:
        raise ValueError(f"unknown init {init!r}")
    pair, vv = _build_caches(pts, V, kernel)
    step = float((hi - lo).max()) / params.n ** (1.0 / params.dim)
    return ChainState(pts, pair, vv, step, rng, lo, hi)


def delta_hamiltonian(state: ChainState, i: int, new: np.ndarray, V: Callable, params: GasParams,
                      kernel: CoulombKernel) -> tuple[float, np.ndarray, np.ndarray, float]:
    """Energy change for moving particle i to ``new``; also the per-j kernel rows and V(new)."""
    others = np.arange(state.n) != i
    r_new = np.linalg.norm(state.points[others] - new, axis=1)
    r_old = np.linalg.norm(state.points[others] - state.points[i], axis=1)
    g_new = kernel.radial(r_new)
    g_old = kernel.radial(r_old)
    v_new = float(np.asarray(V(new[None, :])).ravel()[0])
    dh = params.n * (v_new - state.v_values[i]) + float(np.sum(g_new - g_old))
    return dh, g_new, g_old, v_new


def mh_step(state: ChainState, V: Callable, params: GasParams, kernel: CoulombKernel,
            index: int | None = None, displacement: np.ndarray | None = None,
            log_u: float | None = None) -> ChainState:
    """One Metropolis move; ``index``, ``displacement`` and ``log_u`` override the random draws."""
    i = int(state.rng.integers(state.n)) if index is None else index
    disp = state.rng.standard_normal(state.points.shape[1]) * state.step_size if displacement is None else displacement
    log_u = np.log(state.rng.random()) if log_u is None else log_u
    state.proposed += 1
    state.last_accepted = False
    new = state.points[i] + disp
    if np.any(new < state.lower) or np.any(new > state.upper):
        return state
    others = np.arange(state.n) != i
    if np.any(np.all(state.points[others] == new, axis=1)):
        return state
    dh, g_new, g_old, v_new = delta_hamiltonian(state, i, new, V, params, kernel)
    if log_u < -params.beta * dh:
        state.pair_sums[others] += g_new - g_old
        state.pair_sums[i] = float(np.sum(g_new))
        state.v_values[i] = v_new
        state.points[i] = new
        state.accepted += 1
        state.last_accepted = True
    return state


@numba.njit(cache=True)
def _v_radial(r2, kind, scale, r_tab, v_tab, tail_c, tail_s):
    if kind == 0:
        return scale * r2
    r = np.sqrt(r2)
    if r <= r_tab[-1]:
        return np.interp(r, r_tab, v_tab)
    return tail_c * r**tail_s


@numba.njit(cache=True)
def _g(r, dim, cbar):
    if dim == 2:
        return -cbar * np.log(r)
    return cbar * r ** (2 - dim)


@numba.njit(cache=True)
def _mh_block(points, pair_sums, v_values, idx, disp, logu, step, beta, lo, hi, cbar,
              kind, scale, r_tab, v_tab, tail_c, tail_s):
    n, d = points.shape
    g_new = np.empty(n)
    g_old = np.empty(n)
    new = np.empty(d)
    acc = 0
    for k in range(idx.shape[0]):
        i = idx[k]
        inside = True
        r2 = 0.0
        for a in range(d):
            new[a] = points[i, a] + step * disp[k, a]
            if new[a] < lo[a] or new[a] > hi[a]:
                inside = False
            r2 += new[a] * new[a]
        if not inside:
            continue
        dh = 0.0
        hit = False
        for j in range(n):
            if j == i:
                continue
            sn = 0.0
            so = 0.0
            for a in range(d):
                t = new[a] - points[j, a]
                sn += t * t
                t = points[i, a] - points[j, a]
                so += t * t
            if sn == 0.0:
                hit = True
                break
            g_new[j] = _g(np.sqrt(sn), d, cbar)
            g_old[j] = _g(np.sqrt(so), d, cbar)
            dh += g_new[j] - g_old[j]
        if hit:
            continue
        v_new = _v_radial(r2, kind, scale, r_tab, v_tab, tail_c, tail_s)
        dh += n * (v_new - v_values[i])
        if logu[k] < -beta * dh:
            tot = 0.0
            for j in range(n):
                if j == i:
                    continue
                pair_sums[j] += g_new[j] - g_old[j]
                tot += g_new[j]
            pair_sums[i] = tot
            v_values[i] = v_new
            for a in range(d):
                points[i, a] = new[a]
            acc += 1
    return acc


def _advance(state: ChainState, V, params: GasParams, kernel: CoulombKernel, n_steps: int) -> int:
    """Run n_steps proposals; compiled when V carries a radial spec."""
    idx = state.rng.integers(0, state.n, size=n_steps)
    disp = state.rng.standard_normal((n_steps, params.dim))
    logu = np.log(state.rng.random(n_steps))
    spec = getattr(V, "radial", None)
    if spec is not None:
        kind, scale, r_tab, v_tab, tc, ts = spec
        acc = _mh_block(state.points, state.pair_sums, state.v_values, idx, disp, logu, state.step_size,
                        params.beta, state.lower, state.upper, kernel.cbar, kind, scale,
                        np.asarray(r_tab, float), np.asarray(v_tab, float), tc, ts)
        state.accepted += int(acc)
        state.proposed += n_steps
        return int(acc)
    before = state.accepted
    for k in range(n_steps):
        mh_step(state, V, params, kernel, index=int(idx[k]), displacement=disp[k] * state.step_size,
                log_u=float(logu[k]))
    return state.accepted - before


def check_cache(state: ChainState, V: Callable, params: GasParams, kernel: CoulombKernel) -> float:
    """Relative gap between cached and recomputed H_N; raises past DRIFT_TOL."""
    fresh = hamiltonian(ParticleConfig(state.points), V, params, kernel)
    drift = abs(state.cached_energy() - fresh) / max(abs(fresh), 1e-300)
    if drift > DRIFT_TOL:
        raise CacheDriftError(f"cached energy drifted by {drift:.3e} relative")
    return drift


def run_chain(state: ChainState, V: Callable, params: GasParams, kernel: CoulombKernel, n_sweeps: int,
              thin: int = 1, adapt: bool = True, burn_in: float = 0.2,
              check_every: int = 0) -> list[ParticleConfig]:
    """Run ``n_sweeps`` sweeps of N proposals and record every ``thin``-th post-burn-in sweep.

    With ``adapt`` the step size is tuned in 50-proposal windows during
    burn-in only, then frozen.
    """
    if n_sweeps < 1:
        raise ValueError("n_sweeps must be >= 1")
    n = state.n
    n_burn = int(burn_in * n_sweeps)
    samples = []
    for sweep in range(n_sweeps):
        if sweep < n_burn and adapt:
            left = n
            while left > 0:
                k = min(ADAPT_WINDOW, left)
                rate = _advance(state, V, params, kernel, k) / k
                if rate > TARGET_ACCEPTANCE[1]:
                    state.step_size *= ADAPT_FACTOR
                elif rate < TARGET_ACCEPTANCE[0]:
                    state.step_size /= ADAPT_FACTOR
                left -= k
        else:
            _advance(state, V, params, kernel, n)
        if check_every and (sweep + 1) % check_every == 0:
            check_cache(state, V, params, kernel)
        post = sweep - n_burn
        if post >= 0 and (post + 1) % thin == 0:
            samples.append(state.config)
    return samples


# Binary sample dump, little-endian: int64 d, int64 N, int64 count, then
# float64 coordinates with shape (count, N, d) in row-major order.

def write_samples(samples: list[ParticleConfig], path: str | Path, dim: int | None = None,
                  n: int | None = None) -> None:
    arr = np.array([s.points for s in samples], dtype="<f8")
    if arr.size:
        count, n, dim = arr.shape
    else:
        count = 0
        if dim is None or n is None:
            raise ValueError("empty sample list needs explicit dim and n")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<3q", dim, n, count))
        fh.write(arr.tobytes(order="C"))


def read_samples(path: str | Path) -> list[ParticleConfig]:
    with open(path, "rb") as fh:
        dim, n, count = struct.unpack("<3q", fh.read(24))
        arr = np.frombuffer(fh.read(), dtype="<f8").reshape(count, n, dim)
    return [ParticleConfig(a.copy()) for a in arr]
