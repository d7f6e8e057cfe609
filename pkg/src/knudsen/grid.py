"""Phase-space discretization of the torus times a truncated velocity box.

Fields are stored as real arrays of shape ``(n_x**d, n_v**d)``: the first
axis runs over spatial nodes (C order over the ``d`` spatial axes), the second
over velocity nodes (C order over the ``d`` velocity axes).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class GridConfig:
    spatial_dim: int = 2
    n_x: int = 16
    n_v: int = 24
    v_max: float = 6.0
    torus_period: float = 1.0

    def validate(self) -> None:
        if self.spatial_dim not in (1, 2, 3):
            raise ValueError(f"spatial_dim must be 1, 2 or 3, got {self.spatial_dim}")
        if self.n_x < 4 or self.n_x % 2:
            raise ValueError(f"n_x must be even and >= 4, got {self.n_x}")
        if self.n_v < 8:
            raise ValueError(f"n_v must be >= 8, got {self.n_v}")
        if self.torus_period <= 0:
            raise ValueError("torus_period must be positive")
        tail = gaussian_tail_mass(self.v_max, self.spatial_dim)
        if tail > 1e-4:
            raise ValueError(
                f"v_max={self.v_max} leaves Gaussian tail mass {tail:.2e} > 1e-4 outside the velocity box"
            )


def gaussian_tail_mass(v_max: float, d: int) -> float:
    """Mass of the standard Gaussian in R^d lying outside the box [-v_max, v_max]^d."""
    inside_1d = math.erf(v_max / math.sqrt(2.0))
    return 1.0 - inside_1d**d


@dataclass(frozen=True, eq=False)
class PhaseGrid:
    config: GridConfig
    x_axis: np.ndarray
    v_axis: np.ndarray
    x_nodes: np.ndarray  # (N_x, d)
    v_nodes: np.ndarray  # (N_v, d)
    w_x: np.ndarray  # (N_x,)
    w_v: np.ndarray  # (N_v,)
    mu: np.ndarray = field(repr=False)

    @property
    def d(self) -> int:
        return self.config.spatial_dim

    @property
    def n_x(self) -> int:
        return self.config.n_x

    @property
    def n_v(self) -> int:
        return self.config.n_v

    @property
    def dv(self) -> float:
        return float(self.v_axis[1] - self.v_axis[0])

    @property
    def nx_total(self) -> int:
        return self.x_nodes.shape[0]

    @property
    def nv_total(self) -> int:
        return self.v_nodes.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx_total, self.nv_total)

    @property
    def speed2(self) -> np.ndarray:
        return np.sum(self.v_nodes**2, axis=1)

    def bracket(self, k: float) -> np.ndarray:
        """Japanese bracket <v>^k on the velocity nodes."""
        return (1.0 + self.speed2) ** (0.5 * k)

    def wavenumbers(self) -> np.ndarray:
        """Angular wavenumbers 2*pi*n/period, shape (d, n_x, ..., n_x) for the spatial FFT grid."""
        n = np.fft.fftfreq(self.n_x, d=1.0 / self.n_x)
        k1 = 2.0 * np.pi * n / self.config.torus_period
        return np.stack(np.meshgrid(*([k1] * self.d), indexing="ij"))

    def spatial_shape(self) -> tuple[int, ...]:
        return (self.n_x,) * self.d

    def velocity_shape(self) -> tuple[int, ...]:
        return (self.n_v,) * self.d

    def same_as(self, other: PhaseGrid) -> bool:
        return self is other or self.config == other.config


def build_phase_grid(cfg: GridConfig) -> PhaseGrid:
    cfg.validate()
    d = cfg.spatial_dim
    x_axis = cfg.torus_period * np.arange(cfg.n_x) / cfg.n_x
    v_axis = np.linspace(-cfg.v_max, cfg.v_max, cfg.n_v)
    x_nodes = np.stack(np.meshgrid(*([x_axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    v_nodes = np.stack(np.meshgrid(*([v_axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    w_x = np.full(x_nodes.shape[0], (cfg.torus_period / cfg.n_x) ** d)

    dv = v_axis[1] - v_axis[0]
    w1 = np.full(cfg.n_v, dv)
    w1[0] = w1[-1] = 0.5 * dv  # trapezoid
    w_v = w1
    for _ in range(d - 1):
        w_v = np.multiply.outer(w_v, w1)
    w_v = np.asarray(w_v).reshape(-1)

    mu = (2.0 * np.pi) ** (-0.5 * d) * np.exp(-0.5 * np.sum(v_nodes**2, axis=1))
    return PhaseGrid(cfg, x_axis, v_axis, x_nodes, v_nodes, w_x, w_v, mu)


def maxwellian(grid: PhaseGrid) -> np.ndarray:
    """Global equilibrium (2 pi)^(-d/2) exp(-|v|^2/2) sampled on the velocity nodes."""
    return grid.mu.copy()


@dataclass(frozen=True, eq=False)
class DistributionField:
    values: np.ndarray
    grid: PhaseGrid

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            raise ValueError(f"field shape {vals.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field has non-finite entries")
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_profile(cls, profile: np.ndarray, grid: PhaseGrid) -> DistributionField:
        """Spatially constant field with the given velocity profile."""
        return cls(np.broadcast_to(profile, grid.shape).copy(), grid)


def field_values(h: DistributionField | np.ndarray, grid: PhaseGrid | None = None) -> np.ndarray:
    if isinstance(h, DistributionField):
        if grid is not None and not h.grid.same_as(grid):
            raise ValueError("field lives on a different grid")
        return h.values
    arr = np.asarray(h, dtype=float)
    if grid is not None and arr.shape != grid.shape:
        raise ValueError(f"array shape {arr.shape} does not match grid {grid.shape}")
    return arr


WEIGHT_KINDS = ("polynomial", "inverse_maxwellian", "nu_scaled")


@dataclass(frozen=True)
class NormSpec:
    p: float = 1
    q: float = 1
    k: float = 0.0
    alpha: int = 0
    beta: int = 0
    weight_kind: str = "polynomial"

    def validate(self) -> None:
        for name, val in (("p", self.p), ("q", self.q)):
            if val not in (1, 2, math.inf):
                raise ValueError(f"unsupported Lebesgue exponent {name}={val}; use 1, 2 or inf")
        if self.alpha not in (0, 1):
            raise ValueError(f"alpha must be 0 or 1, got {self.alpha}")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.alpha > self.beta:
            raise ValueError(f"alpha={self.alpha} > beta={self.beta} is not an admissible space")
        if self.k < 0:
            raise ValueError("k must be >= 0")
        if self.weight_kind not in WEIGHT_KINDS:
            raise ValueError(f"unknown weight_kind {self.weight_kind!r}")

    @property
    def label(self) -> str:
        def e(x):
            return "inf" if x == math.inf else f"{x:g}"

        base = f"W{self.alpha}_{e(self.q)}v_W{self.beta}_{e(self.p)}x"
        if self.weight_kind == "polynomial":
            return f"{base}_k{self.k:g}"
        if self.weight_kind == "nu_scaled":
            return f"{base}_k{self.k:g}nu"
        return f"{base}_invmu"


def norm_weight(grid: PhaseGrid, spec: NormSpec, nu: np.ndarray | None = None) -> np.ndarray:
    if spec.weight_kind == "polynomial":
        return grid.bracket(spec.k)
    if spec.weight_kind == "inverse_maxwellian":
        return grid.mu ** -0.5
    if nu is None:
        raise ValueError("nu_scaled weight requires the collision frequency profile")
    qexp = 0.0 if spec.q == math.inf else 1.0 / spec.q
    return grid.bracket(spec.k) * np.asarray(nu) ** qexp


def spectral_derivative(values: np.ndarray, grid: PhaseGrid, orders: tuple[int, ...]) -> np.ndarray:
    """Spatial derivative d^orders/dx^orders of a field, by FFT on the torus."""
    if not any(orders):
        return values
    shp = grid.spatial_shape() + (values.shape[1],)
    axes = tuple(range(grid.d))
    fh = np.fft.fftn(values.reshape(shp), axes=axes)
    kk = grid.wavenumbers()
    mult = np.ones(grid.spatial_shape(), dtype=complex)
    for ax, o in enumerate(orders):
        if o:
            kax = kk[ax].copy()
            if o % 2 == 1:
                # odd derivatives of the Nyquist mode are not representable as real fields
                nyq = np.abs(kax) == np.max(np.abs(kk[ax]))
                kax[nyq] = 0.0
            mult = mult * (1j * kax) ** o
    out = np.fft.ifftn(fh * mult[..., None], axes=axes).real
    return out.reshape(values.shape)


def velocity_derivative(values: np.ndarray, grid: PhaseGrid, orders: tuple[int, ...]) -> np.ndarray:
    """Velocity derivative by second-order centered differences, one-sided at the box edge."""
    if not any(orders):
        return values
    shp = (values.shape[0],) + grid.velocity_shape()
    out = values.reshape(shp)
    for ax, o in enumerate(orders):
        for _ in range(o):
            out = np.gradient(out, grid.dv, axis=ax + 1, edge_order=2)
    return out.reshape(values.shape)


def _multi_indices(d: int, max_order: int):
    for idx in itertools.product(range(max_order + 1), repeat=d):
        if sum(idx) <= max_order:
            yield idx


def _mixed_lebesgue(values: np.ndarray, grid: PhaseGrid, p: float, q: float) -> float:
    a = np.abs(values)
    if p == math.inf:
        inner = a.max(axis=0)
    else:
        inner = (grid.w_x @ a**p) ** (1.0 / p)
    if q == math.inf:
        return float(inner.max())
    return float((grid.w_v @ inner**q) ** (1.0 / q))


def weighted_norm(
    h: DistributionField | np.ndarray,
    spec: NormSpec,
    grid: PhaseGrid | None = None,
    nu: np.ndarray | None = None,
) -> float:
    """Mixed Sobolev norm with the spatial integral inside and the velocity integral outside.

    Sums ||(d_x^l d_v^j h) m||_{L^q_v L^p_x} over multi-indices with |j| <= alpha,
    |l| <= beta and |j| + |l| <= max(alpha, beta).
    """
    if grid is None:
        if not isinstance(h, DistributionField):
            raise ValueError("a grid is required when passing a raw array")
        grid = h.grid
    spec.validate()
    vals = field_values(h, grid)
    m = norm_weight(grid, spec, nu)
    top = max(spec.alpha, spec.beta)
    total = 0.0
    for l in _multi_indices(grid.d, spec.beta):
        dx = spectral_derivative(vals, grid, l)
        for j in _multi_indices(grid.d, spec.alpha):
            if sum(l) + sum(j) > top:
                continue
            dxv = velocity_derivative(dx, grid, j)
            total += _mixed_lebesgue(dxv * m, grid, spec.p, spec.q)
    return total

