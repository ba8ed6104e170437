"""Coulomb energies, the N-particle Hamiltonian and its splitting around the thermal measure."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import TYPE_CHECKING, Callable

import numpy as np

from .errors import PreconditionError, SingularInputError, UnderflowError
from .kernel import CoulombKernel, ball_self_energy, double_smeared_g_radial
from .measures import GridMeasure, ParticleConfig, _check_same_grid, integrate, multilinear_stencil, potential_field

if TYPE_CHECKING:
    from .thermal import ThermalMeasure

BLOCK = 256


@dataclass(frozen=True)
class GasParams:
    """Dimension, particle number and inverse temperature.

    ``alpha`` is set when beta follows the schedule beta = N^(-alpha).
    """

    dim: int
    n: int
    beta: float
    alpha: float | None = None

    def __post_init__(self) -> None:
        if self.n < 1:
            raise PreconditionError(f"need N >= 1, got {self.n}")
        if not self.beta > 0:
            raise PreconditionError(f"need beta > 0, got {self.beta}")
        if self.alpha is not None and not self.alpha < 1:
            raise PreconditionError(f"schedule exponent alpha={self.alpha} leaves the regime N*beta -> infinity")

    @classmethod
    def scheduled(cls, dim: int, n: int, alpha: float) -> GasParams:
        return cls(dim, n, float(n) ** (-alpha), alpha)

    @property
    def nbeta(self) -> float:
        return self.n * self.beta

    def require_thermal(self) -> None:
        if not self.nbeta > 2:
            raise PreconditionError(f"thermal measure requires N*beta > 2, got {self.nbeta}")

    def as_dict(self) -> dict:
        return asdict(self)


def _pair_rows(points: np.ndarray, kernel: CoulombKernel) -> np.ndarray:
    """sum_{j != i} g(x_i - x_j) for every i, in fixed row blocks."""
    n = points.shape[0]
    rows = np.empty(n)
    for start in range(0, n, BLOCK):
        blk = points[start:start + BLOCK]
        r = np.linalg.norm(blk[:, None, :] - points[None, :, :], axis=-1)
        ii = np.arange(blk.shape[0])
        r[ii, start + ii] = np.inf
        zero = np.argwhere(r == 0)
        if zero.size:
            i, j = int(zero[0, 0]) + start, int(zero[0, 1])
            raise SingularInputError(f"particles {i} and {j} coincide")
        vals = kernel.radial(r)
        vals[ii, start + ii] = 0.0
        rows[start:start + blk.shape[0]] = vals.sum(axis=1)
    return rows


def pairwise_energy(p: ParticleConfig, kernel: CoulombKernel) -> float:
    """(1/2) sum_{i != j} g(x_i - x_j) by direct summation."""
    if p.n == 1:
        return 0.0
    return 0.5 * float(np.sum(_pair_rows(p.points, kernel)))


def hamiltonian(p: ParticleConfig, V: Callable, params: GasParams, kernel: CoulombKernel) -> float:
    return pairwise_energy(p, kernel) + params.n * float(np.sum(V(p.points)))


def cross_energy(mu: GridMeasure, nu: GridMeasure, kernel: CoulombKernel) -> float:
    """G(mu, nu) = sum over nodes of h^nu * mu."""
    _check_same_grid(mu.grid, nu.grid)
    return integrate(potential_field(nu, kernel), mu)


@dataclass(frozen=True)
class SplitResult:
    total: float
    leading: float
    zeta_sum: float
    fluctuation: float
    residual: float
    hamiltonian_exact: float

    @property
    def relative_residual(self) -> float:
        return abs(self.residual) / abs(self.total) if self.total else abs(self.residual)

    def as_dict(self) -> dict:
        return {**asdict(self), "relative_residual": self.relative_residual}


def split_hamiltonian(p: ParticleConfig, thermal: ThermalMeasure, V: Callable,
                      params: GasParams | None = None) -> SplitResult:
    """Split H_N into N^2 E_beta(mu_beta) + N sum zeta_beta(x_i) + fluctuation energy.

    Everything is evaluated on the thermal grid: one-body fields at particle
    positions are multilinear interpolants (equivalently, pairings against
    the binned empirical measure), so the split is an algebraic identity up
    to the thermal solver's Euler-Lagrange residual. ``total`` uses the
    interpolated V; ``hamiltonian_exact`` uses V at the points.
    """
    params = params or thermal.params
    grid = thermal.measure.grid
    kernel = thermal.kernel
    n, nbeta = params.n, params.nbeta
    flat, wts = multilinear_stencil(grid, p.points)
    w = thermal.measure.weights
    dead = w.ravel()[flat] <= 0
    if np.any(dead & (wts > 0)):
        node = np.unravel_index(int(flat[dead & (wts > 0)][0]), grid.shape)
        raise UnderflowError(f"thermal density underflows at node {node}", tuple(int(i) for i in node))

    v_nodes = np.asarray(V(grid.coords().reshape(-1, grid.dim))).reshape(grid.shape)
    h_nodes = thermal.field
    logrho = thermal.log_density

    def at_points(field: np.ndarray) -> np.ndarray:
        return np.sum(field.ravel()[flat] * wts, axis=1)

    v_pts = at_points(v_nodes)
    h_pts = at_points(h_nodes)
    zeta_pts = -at_points(logrho) / nbeta

    pair = pairwise_energy(p, kernel)
    g_mm = float(np.sum(h_nodes * w))
    e_beta = 0.5 * g_mm + float(np.sum(v_nodes * w)) + float(np.sum(w * logrho)) / nbeta

    total = pair + n * float(np.sum(v_pts))
    leading = n**2 * e_beta
    zeta_sum = n * float(np.sum(zeta_pts))
    fluctuation = pair - n * float(np.sum(h_pts)) + 0.5 * n**2 * g_mm
    residual = total - (leading + zeta_sum + fluctuation)
    exact = pair + n * float(np.sum(V(p.points)))
    return SplitResult(total, leading, zeta_sum, fluctuation, residual, exact)


@dataclass(frozen=True)
class SmearingCheck:
    lhs: float
    rhs: float
    gap: float

    @property
    def relative_gap(self) -> float:
        scale = max(abs(self.lhs), abs(self.rhs))
        return abs(self.gap) / scale if scale else abs(self.gap)


def smeared_self_energy(p: ParticleConfig, eps: float, kernel: CoulombKernel) -> float:
    """G(P_eps, P_eps) from exact pairwise twice-mollified kernels (no grid)."""
    pts = p.points
    n = p.n
    total = n * ball_self_energy(kernel, eps)
    if n > 1:
        iu, ju = np.triu_indices(n, k=1)
        r = np.linalg.norm(pts[iu] - pts[ju], axis=1)
        total += 2.0 * float(np.sum(double_smeared_g_radial(kernel, eps, r)))
    return total / n**2


def smearing_identity_check(p: ParticleConfig, eps: float, kernel: CoulombKernel) -> SmearingCheck:
    """Compare (1/N^2) sum_{i != j} g with G(P_eps, P_eps) - g(eps) G(lambda_1, lambda_1) / (N g(1))."""
    if kernel.dim < 3:
        raise PreconditionError("the smearing equality is stated for d >= 3 only")
    if not eps > 0:
        raise PreconditionError(f"eps must be positive, got {eps}")
    n = p.n
    lhs = 2.0 * pairwise_energy(p, kernel) / n**2
    correction = float(kernel.radial(eps)) * kernel.unit_ball_self_energy / (n * float(kernel.radial(1.0)))
    rhs = smeared_self_energy(p, eps, kernel) - correction
    return SmearingCheck(lhs, rhs, lhs - rhs)
