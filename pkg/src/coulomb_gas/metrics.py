"""Bounded-Lipschitz, H^-1 and H^-1(K) norms of grid measures, and the phi_lambda lower bound."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache
from itertools import product

import numpy as np
from scipy import sparse
from scipy.ndimage import label
from scipy.optimize import linprog
from scipy.sparse.linalg import spsolve
from scipy.spatial import cKDTree

from .errors import DomainError, PreconditionError
from .kernel import CoulombKernel, unit_ball_volume
from .measures import Grid, GridMeasure, ParticleConfig, potential_field, write_field_csv

# Set by the test suite: re-check every BL witness with an independent constraint sweep.
VERIFY_WITNESS = False
WITNESS_TOL = 1e-9
MEAN_ZERO_TOL = 1e-10


def neighbor_offsets(dim: int) -> list[tuple[int, ...]]:
    """Axis and diagonal neighbor offsets, one per undirected direction."""
    out = []
    for o in product((-1, 0, 1), repeat=dim):
        nz = [v for v in o if v != 0]
        if nz and nz[0] > 0:
            out.append(o)
    return out


@lru_cache(maxsize=8)
def grid_edges(grid: Grid, axis_only: bool = False) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(tail, head, length) of every neighbor edge, flat node indices."""
    idx = np.arange(grid.size).reshape(grid.shape)
    h = grid.spacing
    tails, heads, lens = [], [], []
    for o in neighbor_offsets(grid.dim):
        if axis_only and sum(map(abs, o)) != 1:
            continue
        src = tuple(slice(max(0, -k), m - max(0, k)) for k, m in zip(o, grid.shape))
        dst = tuple(slice(max(0, k), m - max(0, -k)) for k, m in zip(o, grid.shape))
        a, b = idx[src].ravel(), idx[dst].ravel()
        tails.append(a)
        heads.append(b)
        lens.append(np.full(a.size, float(np.linalg.norm(np.array(o) * h))))
    return np.concatenate(tails), np.concatenate(heads), np.concatenate(lens)


@lru_cache(maxsize=8)
def _flow_program(grid: Grid):
    # min sum len*(f+ + f-) + sum (s+ + s-)  s.t.  div(f+ - f-) + s+ - s- = weights
    a, b, c = grid_edges(grid)
    n, ne = grid.size, a.size
    cols = np.arange(ne)
    D = sparse.csc_matrix((np.r_[np.ones(ne), -np.ones(ne)], (np.r_[a, b], np.r_[cols, cols])), shape=(n, ne))
    eye = sparse.identity(n, format="csc")
    A = sparse.hstack([D, -D, eye, -eye], format="csc")
    cost = np.r_[c, c, np.ones(n), np.ones(n)]
    return A, cost


@dataclass(frozen=True)
class DualWitness:
    """Optimal test function f of the BL dual program, as nodal values."""

    values: np.ndarray
    objective: float
    n_sup_active: int
    n_lip_active: int

    def max_violation(self, grid: Grid) -> float:
        f = self.values.ravel()
        a, b, c = grid_edges(grid)
        sup = float(np.max(np.abs(f)) - 1.0)
        lip = float(np.max(np.abs(f[a] - f[b]) - c))
        return max(sup, lip, 0.0)

    def verify(self, grid: Grid, tol: float = WITNESS_TOL) -> None:
        v = self.max_violation(grid)
        if v > tol:
            raise AssertionError(f"BL witness violates its constraints by {v:.3e}")


@dataclass(frozen=True)
class BLResult:
    value: float
    witness: DualWitness

    def __iter__(self):
        return iter((self.value, self.witness))


def bl_norm(mu: GridMeasure, verify: bool | None = None) -> BLResult:
    """Bounded-Lipschitz norm of a grid measure by linear programming.

    The test functions are nodal values with |f| <= 1 and |f(a) - f(b)| <=
    |a - b| across axis and diagonal neighbors. The program is solved in its
    min-cost-flow form (transport along edges at cost |a - b|, creation or
    deletion of mass at cost 1); the witness is the equality-constraint dual.
    This grid relaxation converges to the continuum norm as h -> 0.
    """
    w = mu.weights.ravel()
    if not np.any(w):
        zero = DualWitness(np.zeros(mu.grid.shape), 0.0, 0, 0)
        return BLResult(0.0, zero)
    # the norm is homogeneous; solving at unit scale keeps the absolute LP
    # tolerances meaningful for tiny or huge measures
    scale = float(np.abs(w).max())
    A, cost = _flow_program(mu.grid)
    res = linprog(cost, A_eq=A, b_eq=w / scale, bounds=(0, None), method="highs-ds",
                  options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        raise RuntimeError(f"BL program failed ({res.status}): {res.message}")
    f = np.asarray(res.eqlin.marginals, dtype=float)
    a, b, c = grid_edges(mu.grid)
    wit = DualWitness(
        f.reshape(mu.grid.shape),
        float(res.fun) * scale,
        int(np.sum(np.abs(f) >= 1.0 - 1e-9)),
        int(np.sum(np.abs(f[a] - f[b]) >= c - 1e-9)),
    )
    if VERIFY_WITNESS if verify is None else verify:
        wit.verify(mu.grid)
    return BLResult(float(res.fun) * scale, wit)


def write_witness_csv(mu: GridMeasure, witness: DualWitness, path) -> None:
    write_field_csv(mu.grid, witness.values, path, value_name="f")


def h1_dual_norm(mu: GridMeasure, kernel: CoulombKernel | None = None) -> float:
    """||mu||_{H^-1} = sqrt(G(mu, mu)); in d = 2 mu must have zero total mass."""
    kernel = kernel or CoulombKernel(mu.grid.dim)
    if kernel.dim == 2 and abs(mu.mass) > MEAN_ZERO_TOL:
        raise PreconditionError(f"d=2 H^-1 norm needs a mean-zero measure, total mass is {mu.mass:.3e}")
    energy = float(np.sum(potential_field(mu, kernel) * mu.weights))
    return float(np.sqrt(max(energy, 0.0)))


@dataclass(frozen=True, eq=False)
class Region:
    """A connected node subset K of a grid."""

    grid: Grid
    mask: np.ndarray

    def __post_init__(self) -> None:
        mask = np.asarray(self.mask, dtype=bool)
        if mask.shape != self.grid.shape:
            raise ValueError("region mask does not match the grid")
        if not mask.any():
            raise DomainError("region is empty")
        _, ncomp = label(mask)
        if ncomp != 1:
            raise DomainError(f"region has {ncomp} connected components")
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)

    @classmethod
    def full(cls, grid: Grid) -> Region:
        return cls(grid, np.ones(grid.shape, dtype=bool))

    @classmethod
    def box(cls, grid: Grid, lower, upper) -> Region:
        c = grid.coords()
        tol = 1e-12 * grid.max_spacing
        m = np.all((c >= np.asarray(lower) - tol) & (c <= np.asarray(upper) + tol), axis=-1)
        return cls(grid, m)

    @property
    def n_nodes(self) -> int:
        return int(self.mask.sum())

    @property
    def volume(self) -> float:
        return self.n_nodes * self.grid.cell_volume

    def boundary_nodes(self) -> np.ndarray:
        padded = np.pad(self.mask, 1, constant_values=False)
        interior = padded.copy()
        for ax in range(self.mask.ndim):
            interior &= np.roll(padded, 1, axis=ax) & np.roll(padded, -1, axis=ax)
        inner = interior[tuple(slice(1, -1) for _ in range(self.mask.ndim))]
        return np.argwhere(self.mask & ~inner)


def helmholtz_matrix(region: Region) -> sparse.csr_matrix:
    """vol * (I - Laplacian_h) on the region, zero-flux at its boundary."""
    grid = region.grid
    nodes = np.flatnonzero(region.mask.ravel())
    local = -np.ones(grid.size, dtype=np.int64)
    local[nodes] = np.arange(nodes.size)
    a, b, c = grid_edges(grid, axis_only=True)
    keep = (local[a] >= 0) & (local[b] >= 0)
    a, b, c = local[a[keep]], local[b[keep]], c[keep]
    wgt = 1.0 / c**2
    n = nodes.size
    L = sparse.coo_matrix((np.r_[wgt, wgt, -wgt, -wgt], (np.r_[a, b, a, b], np.r_[a, b, b, a])), shape=(n, n))
    return (grid.cell_volume * (sparse.identity(n) + L)).tocsr()


def h1_restricted_norm(mu: GridMeasure, K: Region) -> float:
    """Dual H^1(K) norm: sqrt(w . u) with vol (I - Laplacian_h) u = w on K."""
    if mu.grid != K.grid:
        raise ValueError("measure and region live on different grids")
    w = mu.weights
    outside = w[~K.mask]
    if np.any(outside != 0):
        warnings.warn(f"ignoring mass {np.abs(outside).sum():.3e} outside the region", stacklevel=2)
    wk = w[K.mask]
    if not np.any(wk):
        return 0.0
    A = helmholtz_matrix(K)
    u = spsolve(A.tocsc(), wk) if wk.size > 1 else wk / A.toarray().ravel()
    return float(np.sqrt(max(float(wk @ u), 0.0)))


@dataclass(frozen=True)
class InequalityReport:
    bl: float
    h1k: float
    constant: float
    ratio: float
    holds: bool
    printed_constant: float
    printed_ratio: float


def check_bl_vs_h1k(mu: GridMeasure, K: Region) -> InequalityReport:
    """Check ||mu||_BL <= sqrt(d+1) |K|^(1/2) ||mu||_{H^-1(K)}.

    |K|^(1/2) is what Cauchy-Schwarz gives for ||f||_{L^2(K)} <= |K|^(1/2) ||f||_inf.
    The |K|^(d/2) variant is reported alongside; it agrees up to |K| >= 1
    and is too small below that.
    """
    d = mu.grid.dim
    bl = bl_norm(mu).value
    h1k = h1_restricted_norm(mu, K)
    c = np.sqrt(d + 1) * K.volume**0.5
    c_printed = np.sqrt(d + 1) * K.volume ** (d / 2)

    def ratio(c):
        rhs = c * h1k
        return bl / rhs if rhs > 0 else (0.0 if bl == 0 else np.inf)

    return InequalityReport(bl, h1k, float(c), float(ratio(c)), bool(bl <= c * h1k * (1 + 1e-12) + 1e-15),
                            float(c_printed), float(ratio(c_printed)))


def phi_lambda_bound(p: ParticleConfig, M: float) -> tuple[float, float]:
    """Lower bound on ||emp_N - mu||_BL over measures with density <= M, and the lambda attaining it.

    lambda = (2 M k_d)^(-1/d), bound = N^(-1/d) / (2 (2 M k_d)^(1/d)).
    """
    if not M > 0:
        raise DomainError(f"density bound must be positive, got {M}")
    d, n = p.dim, p.n
    s = 2.0 * M * unit_ball_volume(d)
    lam = s ** (-1.0 / d)
    return float(n ** (-1.0 / d) / (2.0 * s ** (1.0 / d))), float(lam)


def phi_lambda_field(p: ParticleConfig, lam: float, grid: Grid) -> np.ndarray:
    """Nodal values of (lambda / N^(1/d) - dist(x, {x_i}))_+."""
    dist, _ = cKDTree(p.points).query(grid.coords().reshape(-1, grid.dim))
    return np.maximum(lam / p.n ** (1.0 / p.dim) - dist, 0.0).reshape(grid.shape)
