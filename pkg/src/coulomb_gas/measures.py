"""Grid and atomic measures, binning, mollification, and discrete potentials."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product
from pathlib import Path

import numpy as np
from scipy import fft as sfft

from .errors import GridMismatchError, OutOfDomainError, UnderResolvedError
from .kernel import CoulombKernel, smeared_g_radial, unit_ball_volume

MEMORY_CAP_NODES = 2**26
DIRECT_SUM_MAX_NODES = 4096
MASS_TOL = 1e-12


@dataclass(frozen=True)
class Grid:
    """Uniform box grid with ``shape[k]`` nodes on axis k, endpoints included."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    shape: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))
        object.__setattr__(self, "shape", tuple(int(v) for v in self.shape))
        if not (len(self.lower) == len(self.upper) == len(self.shape)):
            raise ValueError("lower, upper and shape must have the same length")
        if self.dim not in (2, 3):
            raise ValueError(f"grids are supported for d in {{2, 3}}, got d={self.dim}")
        if any(m < 2 for m in self.shape):
            raise ValueError(f"need at least 2 nodes per axis, got {self.shape}")
        if any(u <= lo for lo, u in zip(self.lower, self.upper)):
            raise ValueError("upper corner must exceed lower corner on every axis")
        if self.size > MEMORY_CAP_NODES:
            raise ValueError(f"{self.size} nodes exceeds the memory cap of {MEMORY_CAP_NODES}")

    @classmethod
    def cube(cls, dim: int, half_width: float, m: int) -> Grid:
        return cls((-half_width,) * dim, (half_width,) * dim, (m,) * dim)

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def spacing(self) -> np.ndarray:
        return (np.array(self.upper) - np.array(self.lower)) / (np.array(self.shape) - 1)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def max_spacing(self) -> float:
        return float(self.spacing.max())

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(lo, u, m) for lo, u, m in zip(self.lower, self.upper, self.shape)]

    def coords(self) -> np.ndarray:
        """Node coordinates, shape ``shape + (dim,)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def contains(self, points: np.ndarray, margin: float = 0.0) -> np.ndarray:
        pts = np.atleast_2d(points)
        lo = np.array(self.lower) + margin
        hi = np.array(self.upper) - margin
        return np.all((pts >= lo) & (pts <= hi), axis=-1)

    def describe(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper), "shape": list(self.shape)}


@dataclass(frozen=True, eq=False)
class GridMeasure:
    """Signed or probability measure stored as nodal masses (density x cell volume)."""

    grid: Grid
    weights: np.ndarray
    kind: str = "signed"

    def __post_init__(self) -> None:
        w = np.array(self.weights, dtype=float)
        if w.shape != self.grid.shape:
            raise ValueError(f"weights shape {w.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        if self.kind not in ("signed", "probability"):
            raise ValueError(f"unknown measure kind {self.kind!r}")
        if self.kind == "probability":
            if np.any(w < 0):
                raise ValueError("probability measure has negative weights")
            if abs(w.sum() - 1.0) > MASS_TOL:
                raise ValueError(f"probability measure has mass {w.sum()!r}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    @property
    def density(self) -> np.ndarray:
        return self.weights / self.grid.cell_volume

    def __add__(self, other: GridMeasure) -> GridMeasure:
        _check_same_grid(self.grid, other.grid)
        return GridMeasure(self.grid, self.weights + other.weights)

    def __sub__(self, other: GridMeasure) -> GridMeasure:
        _check_same_grid(self.grid, other.grid)
        return GridMeasure(self.grid, self.weights - other.weights)

    def __mul__(self, c: float) -> GridMeasure:
        return GridMeasure(self.grid, float(c) * self.weights)

    __rmul__ = __mul__

    def __neg__(self) -> GridMeasure:
        return GridMeasure(self.grid, -self.weights)


@dataclass(frozen=True, eq=False)
class ParticleConfig:
    points: np.ndarray = field()

    def __post_init__(self) -> None:
        p = np.array(self.points, dtype=float)
        if p.ndim != 2 or p.shape[0] < 1:
            raise ValueError("points must be a nonempty (N, d) array")
        if not np.all(np.isfinite(p)):
            raise ValueError("particle coordinates must be finite")
        p.setflags(write=False)
        object.__setattr__(self, "points", p)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def _check_same_grid(a: Grid, b: Grid) -> None:
    if a != b:
        raise GridMismatchError(f"grid mismatch: {a} vs {b}")


def confinement_half_width(potential, nbeta: float, dim: int, tail: float = 1e-12,
                           lo: float = 0.5, hi: float = 1e3) -> float:
    """Smallest L with exp(-N beta V(L e_1)) < tail, by bisection on the ray."""
    target = -np.log(tail) / nbeta

    def excess(L: float) -> float:
        x = np.zeros((1, dim))
        x[0, 0] = L
        return float(np.asarray(potential(x)).ravel()[0]) - target

    if excess(lo) > 0:
        return lo
    if excess(hi) <= 0:
        raise ValueError("potential does not confine within the search range")
    a, b = lo, hi
    for _ in range(200):
        mid = 0.5 * (a + b)
        if excess(mid) > 0:
            b = mid
        else:
            a = mid
    return b


def multilinear_stencil(grid: Grid, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Flat node indices and weights of the 2^d surrounding nodes for each point.

    Returns arrays of shape ``(N, 2^d)``. Weights of a row sum to 1.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    inside = grid.contains(pts)
    if not np.all(inside):
        bad = int(np.flatnonzero(~inside)[0])
        raise OutOfDomainError(f"particle {bad} at {pts[bad].tolist()} lies outside the grid box", bad)
    lo = np.array(grid.lower)
    h = grid.spacing
    shape = np.array(grid.shape)
    u = (pts - lo) / h
    base = np.clip(np.floor(u).astype(np.int64), 0, shape - 2)
    frac = np.clip(u - base, 0.0, 1.0)
    d = grid.dim
    corners = np.array(list(product((0, 1), repeat=d)))
    idx = base[:, None, :] + corners[None, :, :]
    wts = np.prod(np.where(corners[None, :, :] == 1, frac[:, None, :], 1.0 - frac[:, None, :]), axis=-1)
    flat = np.ravel_multi_index(tuple(idx[..., k] for k in range(d)), grid.shape)
    return flat, wts


def bin_to_grid(p: ParticleConfig, grid: Grid) -> GridMeasure:
    """Empirical measure with each particle's 1/N split multilinearly to its cell corners."""
    if p.dim != grid.dim:
        raise GridMismatchError(f"particles in R^{p.dim}, grid in R^{grid.dim}")
    flat, wts = multilinear_stencil(grid, p.points)
    w = np.bincount(flat.ravel(), weights=wts.ravel() / p.n, minlength=grid.size)
    w /= w.sum()
    return GridMeasure(grid, w.reshape(grid.shape), kind="probability")


def interpolate(field: np.ndarray, grid: Grid, points: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of a nodal field; the adjoint of binning."""
    flat, wts = multilinear_stencil(grid, points)
    return np.sum(np.asarray(field).ravel()[flat] * wts, axis=1)


def mollify(p: ParticleConfig, eps: float, grid: Grid) -> GridMeasure:
    """Sample P * lambda_eps on the grid: each particle spreads 1/N uniformly over B(x_i, eps)."""
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if eps < grid.max_spacing:
        raise UnderResolvedError(f"eps={eps} is below the grid spacing {grid.max_spacing}")
    inside = grid.contains(p.points, margin=eps)
    if not np.all(inside):
        bad = int(np.flatnonzero(~inside)[0])
        raise OutOfDomainError(f"ball around particle {bad} leaves the grid box", bad)
    h = grid.spacing
    lo = np.array(grid.lower)
    w = np.zeros(grid.shape)
    for x in p.points:
        a = np.maximum(np.floor((x - eps - lo) / h).astype(int), 0)
        b = np.minimum(np.ceil((x + eps - lo) / h).astype(int) + 1, grid.shape)
        sl = tuple(slice(i, j) for i, j in zip(a, b))
        local = np.stack(np.meshgrid(*[lo[k] + h[k] * np.arange(a[k], b[k]) for k in range(grid.dim)],
                                     indexing="ij"), axis=-1)
        hit = np.linalg.norm(local - x, axis=-1) <= eps
        w[sl] += hit / (hit.sum() * p.n)
    return GridMeasure(grid, w / w.sum(), kind="probability")


def exact_ball_density(n: int, eps: float, dim: int) -> float:
    """Density of one particle's blob in P * lambda_eps."""
    return 1.0 / (n * unit_ball_volume(dim) * eps**dim)


@lru_cache(maxsize=16)
def _kernel_table(grid: Grid, kernel: CoulombKernel) -> np.ndarray:
    # g at every node offset, self-offset replaced by the half-cell smeared value
    h = grid.spacing
    offs = [h[k] * np.arange(-(m - 1), m) for k, m in enumerate(grid.shape)]
    r = np.sqrt(sum(o**2 for o in np.meshgrid(*offs, indexing="ij", sparse=True)))
    center = tuple(m - 1 for m in grid.shape)
    r[center] = 1.0
    table = np.asarray(kernel.radial(r), dtype=float)
    table[center] = self_node_value(grid, kernel)
    table.setflags(write=False)
    return table


def self_node_value(grid: Grid, kernel: CoulombKernel) -> float:
    return float(smeared_g_radial(kernel, 0.5 * float(grid.spacing.min()), 0.0))


@lru_cache(maxsize=16)
def _kernel_spectrum(grid: Grid, kernel: CoulombKernel):
    table = _kernel_table(grid, kernel)
    full = [2 * m - 1 + m - 1 for m in grid.shape]
    fshape = [sfft.next_fast_len(n, real=True) for n in full]
    return sfft.rfftn(table, fshape), fshape


def _field_fft(w: np.ndarray, grid: Grid, kernel: CoulombKernel) -> np.ndarray:
    spec, fshape = _kernel_spectrum(grid, kernel)
    conv = sfft.irfftn(sfft.rfftn(w, fshape) * spec, fshape)
    sl = tuple(slice(m - 1, 2 * m - 1) for m in grid.shape)
    return conv[sl]


def _field_direct(w: np.ndarray, grid: Grid, kernel: CoulombKernel) -> np.ndarray:
    table = _kernel_table(grid, kernel)
    shape = grid.shape
    out = np.zeros(shape)
    src = np.argwhere(w != 0)
    for b in src:
        sl = tuple(slice(m - 1 - bk, 2 * m - 1 - bk) for m, bk in zip(shape, b))
        out += w[tuple(b)] * table[sl]
    return out


def potential_field(mu: GridMeasure, kernel: CoulombKernel, backend: str = "auto") -> np.ndarray:
    """Nodal values of h^mu = g * mu with the self-node term regularized.

    ``backend`` is ``"direct"`` (O(n^2) summation), ``"fft"`` (zero-padded
    convolution) or ``"auto"``.
    """
    if kernel.dim != mu.grid.dim:
        raise GridMismatchError(f"kernel in R^{kernel.dim}, grid in R^{mu.grid.dim}")
    if backend == "auto":
        backend = "direct" if mu.grid.size <= DIRECT_SUM_MAX_NODES and np.count_nonzero(mu.weights) < 256 else "fft"
    if backend == "direct":
        return _field_direct(mu.weights, mu.grid, kernel)
    if backend == "fft":
        return _field_fft(mu.weights, mu.grid, kernel)
    raise ValueError(f"unknown backend {backend!r}")


def integrate(f: np.ndarray, mu: GridMeasure) -> float:
    f = np.asarray(f, dtype=float)
    if f.shape != mu.grid.shape:
        raise GridMismatchError(f"field shape {f.shape} does not match grid {mu.grid.shape}")
    return float(np.sum(f * mu.weights))


# -- serialization ---------------------------------------------------------
# Binary layout, little-endian: int64 dim, int64 m per axis, float64 lower
# corner, float64 upper corner, then float64 weights in row-major order.

def write_binary(mu: GridMeasure, path: str | Path) -> None:
    g = mu.grid
    with open(path, "wb") as fh:
        fh.write(struct.pack("<q", g.dim))
        fh.write(struct.pack(f"<{g.dim}q", *g.shape))
        fh.write(struct.pack(f"<{g.dim}d", *g.lower))
        fh.write(struct.pack(f"<{g.dim}d", *g.upper))
        fh.write(np.ascontiguousarray(mu.weights, dtype="<f8").tobytes(order="C"))


def read_binary(path: str | Path, kind: str = "signed") -> GridMeasure:
    with open(path, "rb") as fh:
        (dim,) = struct.unpack("<q", fh.read(8))
        shape = struct.unpack(f"<{dim}q", fh.read(8 * dim))
        lower = struct.unpack(f"<{dim}d", fh.read(8 * dim))
        upper = struct.unpack(f"<{dim}d", fh.read(8 * dim))
        w = np.frombuffer(fh.read(), dtype="<f8").reshape(shape)
    return GridMeasure(Grid(lower, upper, shape), w.astype(float), kind=kind)


def write_csv(mu: GridMeasure, path: str | Path, value_name: str = "weight") -> None:
    write_field_csv(mu.grid, mu.weights, path, value_name)


def write_field_csv(grid: Grid, values: np.ndarray, path: str | Path, value_name: str = "value") -> None:
    coords = grid.coords().reshape(-1, grid.dim)
    names = ["x", "y", "z"][: grid.dim]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow([*names, value_name])
        for c, v in zip(coords, np.asarray(values).ravel()):
            wr.writerow([repr(float(t)) for t in c] + [repr(float(v))])


def read_csv(path: str | Path, kind: str = "signed") -> GridMeasure:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    dim = data.shape[1] - 1
    axes = [np.unique(data[:, k]) for k in range(dim)]
    grid = Grid(tuple(a[0] for a in axes), tuple(a[-1] for a in axes), tuple(len(a) for a in axes))
    idx = tuple(np.searchsorted(axes[k], data[:, k]) for k in range(dim))
    w = np.zeros(grid.shape)
    w[idx] = data[:, -1]
    return GridMeasure(grid, w, kind=kind)
