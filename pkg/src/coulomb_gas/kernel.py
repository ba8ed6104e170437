"""Coulomb kernel, its ball mollifications, and uniform-ball self-energies.

All functions accept points with the spatial axis last, so ``x`` may be a
single point of shape ``(d,)`` or a batch ``(..., d)``. Radial helpers
(``*_radial``) take distances directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import gamma, pi

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

from .errors import DomainError, SingularInputError

# Uniform-ball self-energies G(lambda_1, lambda_1) for cbar = 1.
# d = 2: 1/4, the logarithmic energy of the uniform unit disk.
# d = 3: 6/5, the electrostatic energy of a uniformly charged unit ball.
# Both follow from integrating the interior potential (see smeared_g_radial)
# against lambda_1, and are re-derived by Monte Carlo in tests/test_kernel.py.
UNIT_BALL_SELF_ENERGY = {2: 0.25, 3: 1.2}


@dataclass(frozen=True)
class CoulombKernel:
    """g(x) = cbar |x|^(2-d) for d >= 3 and -cbar log|x| for d = 2."""

    dim: int
    cbar: float = 1.0

    def __post_init__(self) -> None:
        if int(self.dim) != self.dim or self.dim < 2:
            raise DomainError(f"kernel dimension must be an integer >= 2, got {self.dim}")
        if not self.cbar > 0:
            raise DomainError(f"kernel normalization must be positive, got {self.cbar}")

    def radial(self, r):
        """g as a function of |x|. Returns +inf at r = 0."""
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore"):
            if self.dim == 2:
                return -self.cbar * np.log(r)
            return self.cbar * r ** (2 - self.dim)

    @property
    def unit_ball_self_energy(self) -> float:
        return unit_ball_self_energy(self.dim, self.cbar)


def unit_ball_volume(d: int) -> float:
    """Volume k_d of the unit ball in R^d."""
    return pi ** (d / 2) / gamma(d / 2 + 1)


@lru_cache(maxsize=None)
def unit_ball_self_energy(d: int, cbar: float = 1.0) -> float:
    if d in UNIT_BALL_SELF_ENERGY:
        return cbar * UNIT_BALL_SELF_ENERGY[d]
    # integral of cbar*(d/2 - (d-2)/2 r^2) against lambda_1, E[r^2] = d/(d+2)
    return cbar * 2.0 * d / (d + 2.0)


def eval_g(kernel: CoulombKernel, x) -> np.ndarray | float:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != kernel.dim:
        raise ValueError(f"expected points in R^{kernel.dim}, got trailing axis {x.shape[-1]}")
    r = np.linalg.norm(x, axis=-1)
    if np.any(r == 0):
        raise SingularInputError("Coulomb kernel is infinite at the origin")
    out = kernel.radial(r)
    return float(out) if out.ndim == 0 else out


def smeared_g_radial(kernel: CoulombKernel, R: float, r) -> np.ndarray:
    """(g * lambda_R) at distance r: the potential of a uniform ball of radius R."""
    if not R > 0:
        raise DomainError(f"mollifier radius must be positive, got {R}")
    r = np.asarray(r, dtype=float)
    d, c = kernel.dim, kernel.cbar
    inside = r <= R
    rr = np.where(inside, R, r)
    out = np.asarray(kernel.radial(rr), dtype=float).copy()
    q = (r / R) ** 2
    if d == 2:
        interior = -c * np.log(R) + 0.5 * c * (1.0 - q)
    else:
        interior = c * R ** (2 - d) * (0.5 * d - 0.5 * (d - 2) * q)
    return np.where(inside, interior, out)


def smeared_g(kernel: CoulombKernel, R: float, x):
    """(g * lambda_R)(x); finite everywhere, equal to g(x) for |x| >= R."""
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x, axis=-1)
    out = smeared_g_radial(kernel, R, r)
    return float(out) if out.ndim == 0 else out


def ball_self_energy(kernel: CoulombKernel, R: float) -> float:
    """G(lambda_R, lambda_R) from the scaling law around G(lambda_1, lambda_1)."""
    if not R > 0:
        raise DomainError(f"ball radius must be positive, got {R}")
    g1 = kernel.unit_ball_self_energy
    gR = float(kernel.radial(R))
    if kernel.dim == 2:
        return gR + g1
    return gR / float(kernel.radial(1.0)) * g1


def _d3_antiderivative(R: float, tau: np.ndarray) -> np.ndarray:
    # antiderivative of tau * (potential of lambda_R at tau), cbar = 1
    inner = (1.5 * R**2 * tau**2 - 0.25 * tau**4) / (2.0 * R**3)
    outer = 0.625 * R + (tau - R)
    return np.where(tau <= R, inner, outer)


_GL_X, _GL_W = roots_legendre(8)


def _double_smeared_d3(R: float, r: float) -> float:
    if r < 1e-7 * R:
        return UNIT_BALL_SELF_ENERGY[3] / R
    cuts = sorted({0.0, R, *(b for b in (R - r, r, r - R) if 0.0 < b < R)})
    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        s = 0.5 * (b - a) * _GL_X + 0.5 * (a + b)
        w = 0.5 * (b - a) * _GL_W
        shell = (_d3_antiderivative(R, r + s) - _d3_antiderivative(R, np.abs(r - s))) / (2.0 * r * s)
        total += np.sum(w * shell * 3.0 * s**2 / R**3)
    return float(total)


@lru_cache(maxsize=8)
def _jacobi_nodes(d: int, n: int):
    a = 0.5 * (d - 3)
    t, w = roots_jacobi(n, a, a)
    return t, w / w.sum()


def _double_smeared_generic(kernel: CoulombKernel, R: float, r: float, n: int = 96) -> float:
    # average of the single-smeared potential over B(x, R); ~1e-7 accurate
    d = kernel.dim
    t, wt = _jacobi_nodes(d, n)
    cuts = sorted({0.0, R, *(b for b in (abs(R - r), r) if 0.0 < b < R)})
    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        s = 0.5 * (b - a) * _GL_X + 0.5 * (a + b)
        w = 0.5 * (b - a) * _GL_W * d * s ** (d - 1) / R**d
        tau = np.sqrt(np.maximum(r**2 + s[:, None] ** 2 + 2 * r * s[:, None] * t[None, :], 0.0))
        total += np.sum(w[:, None] * wt[None, :] * smeared_g_radial(kernel, R, tau))
    return float(total)


def double_smeared_g_radial(kernel: CoulombKernel, R: float, r) -> np.ndarray:
    """(g * lambda_R * lambda_R) at distance r.

    Equal to g(r) for r >= 2R. Inside, d = 3 is integrated exactly (the shell
    integrand is piecewise polynomial); other dimensions use Gauss-Jacobi
    quadrature.
    """
    if not R > 0:
        raise DomainError(f"mollifier radius must be positive, got {R}")
    r0 = np.asarray(r, dtype=float)
    r = np.atleast_1d(r0)
    out = np.empty_like(r)
    far = r >= 2 * R
    out[far] = kernel.radial(r[far])
    for idx in zip(*np.nonzero(~far)):
        ri = float(r[idx])
        if kernel.dim == 3:
            out[idx] = kernel.cbar * _double_smeared_d3(R, ri)
        else:
            out[idx] = _double_smeared_generic(kernel, R, ri)
    return out.reshape(r0.shape)
