"""Bilinear collision operator and collision frequency for cutoff hard or Maxwellian potentials.

The kernel is B(v - v_*, sigma) = c_phi |v - v_*|^gamma b(cos theta). Post-collision
values of the fields are obtained by tensor Lagrange interpolation on the velocity
lattice (``interp_order`` points per axis; 2 gives multilinear interpolation) and are
taken as zero outside the velocity box.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from . import _kernels
from .grid import DistributionField, GridConfig, PhaseGrid, build_phase_grid, field_values

B_TABLE_SIZE = 4001
TENSOR_MEMORY_LIMIT = 1.2e9  # bytes


def sphere_area(d: int) -> float:
    """|S^{d-1}|, the surface measure of the unit sphere in R^d."""
    return 2.0 * math.pi ** (0.5 * d) / special.gamma(0.5 * d)


@dataclass(frozen=True)
class KernelConfig:
    gamma: float = 1.0
    c_phi: float = 1.0
    b_name: str = "constant"
    bump_center: float = 0.0
    bump_width: float = 0.5
    n_sigma: int = 16
    interp_order: int = 6
    envelope_temperature: float = 2.0

    def validate(self) -> None:
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.c_phi <= 0:
            raise ValueError("c_phi must be positive")
        if self.b_name not in ("constant", "bump"):
            raise ValueError(f"unknown angular function {self.b_name!r}")
        if self.b_name == "bump" and self.bump_width <= 0:
            raise ValueError("bump_width must be positive")
        if self.n_sigma < 2 or self.n_sigma % 2:
            raise ValueError("n_sigma must be even and >= 2")
        if self.interp_order not in (2, 4, 6, 8):
            raise ValueError("interp_order must be one of 2, 4, 6, 8")
        if self.envelope_temperature < 0:
            raise ValueError("envelope_temperature must be >= 0 (0 disables the envelope)")


def angular_function(kernel: KernelConfig, d: int):
    """The angular factor b as a vectorized callable on [-1, 1], normalized to integrate to 1 on the sphere."""
    area = sphere_area(d)
    if kernel.b_name == "constant":
        return lambda z: np.full_like(np.asarray(z, dtype=float), 1.0 / area)

    def raw(z):
        return np.exp(-0.5 * ((np.asarray(z, dtype=float) - kernel.bump_center) / kernel.bump_width) ** 2)

    # int_{S^{d-1}} b(sigma . e) dsigma = |S^{d-2}| int_{-1}^{1} b(z) (1 - z^2)^((d-3)/2) dz
    if d == 2:
        total, _ = integrate.quad(lambda t: float(raw(math.cos(t))), 0.0, 2.0 * math.pi, limit=200)
    else:
        sub = sphere_area(d - 1)
        total, _ = integrate.quad(lambda z: float(raw(z)) * (1.0 - z * z) ** (0.5 * (d - 3)), -1.0, 1.0, limit=200)
        total *= sub
    return lambda z: raw(z) / total


@dataclass(frozen=True, eq=False)
class SigmaQuadrature:
    directions: np.ndarray  # (n_sigma, d)
    weights: np.ndarray  # (n_sigma,)
    half_directions: np.ndarray  # one representative per antipodal pair
    half_weights: np.ndarray  # doubled weights for the half set


def sigma_quadrature(d: int, n_sigma: int) -> SigmaQuadrature:
    """Uniform angles on S^1, or a Gauss-Legendre x uniform-azimuth product rule on S^2.

    For d = 3, n_sigma is rounded to 2 m^2 with m polar nodes and 2m azimuths.
    """
    if d == 1:
        dirs = np.array([[1.0], [-1.0]])
        w = np.array([1.0, 1.0])
        half = slice(0, 1)
        order = np.arange(2)
    elif d == 2:
        ang = 2.0 * np.pi * np.arange(n_sigma) / n_sigma
        dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        w = np.full(n_sigma, 2.0 * np.pi / n_sigma)
        half = slice(0, n_sigma // 2)
        order = np.arange(n_sigma)
    elif d == 3:
        m = max(1, int(round(math.sqrt(n_sigma / 2.0))))
        z, wz = np.polynomial.legendre.leggauss(m)
        phi = np.pi * np.arange(2 * m) / m
        zz, pp = np.meshgrid(z, phi, indexing="ij")
        rho = np.sqrt(1.0 - zz**2)
        dirs = np.stack([rho * np.cos(pp), rho * np.sin(pp), zz], axis=-1).reshape(-1, 3)
        w = np.outer(wz, np.full(2 * m, np.pi / m)).reshape(-1)
        # azimuth in [0, pi) represents each antipodal pair (z, phi) ~ (-z, phi + pi)
        keep = (pp < np.pi - 1e-12).reshape(-1)
        order = np.concatenate([np.flatnonzero(keep), np.flatnonzero(~keep)])
        dirs, w = dirs[order], w[order]
        half = slice(0, int(keep.sum()))
    else:
        raise ValueError(f"unsupported dimension {d}")
    return SigmaQuadrature(dirs, w, np.ascontiguousarray(dirs[half]), 2.0 * w[half])


def post_collision_velocities(v, v_star, sigma):
    """Return (v', v'_*) = ((v+v_*)/2 + |v-v_*| sigma/2, (v+v_*)/2 - |v-v_*| sigma/2)."""
    v = np.asarray(v, dtype=float)
    v_star = np.asarray(v_star, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    center = 0.5 * (v + v_star)
    half_rel = 0.5 * np.linalg.norm(v - v_star, axis=-1, keepdims=True)
    return center + half_rel * sigma, center - half_rel * sigma


class CollisionOperator:
    """Quadrature data for one (grid, kernel) pair, with lazily built loss weights and bilinear tensor."""

    def __init__(self, kernel: KernelConfig, grid: PhaseGrid):
        kernel.validate()
        if grid.n_v < kernel.interp_order:
            raise ValueError("velocity grid is smaller than the interpolation stencil")
        self.kernel = kernel
        self.grid = grid
        d = grid.d
        self.quad = sigma_quadrature(d, kernel.n_sigma)
        b = angular_function(kernel, d)
        z = np.linspace(-1.0, 1.0, B_TABLE_SIZE)
        table = b(z)
        self.c_b = float(table.max())
        # even part of b: exact for every integrand that is symmetric under sigma -> -sigma
        self.b_table = 0.5 * (table + table[::-1])
        self._K: np.ndarray | None = None
        self._T: np.ndarray | None = None

    # shared argument tuple of the compiled kernels
    def _geom_args(self):
        g = self.grid
        return (
            g.v_nodes,
            g.w_v,
            self.quad.half_directions,
            self.quad.half_weights,
            self.b_table,
        )

    @property
    def inv_temperature(self) -> float:
        t = self.kernel.envelope_temperature
        return 0.0 if t == 0 else 1.0 / t

    @property
    def envelope(self) -> np.ndarray:
        """Interpolation envelope exp(-|v|^2 / 2T) at the nodes (ones when disabled)."""
        return np.exp(-0.5 * self.inv_temperature * self.grid.speed2)

    def _interp_args(self):
        g = self.grid
        return (float(g.v_axis[0]), g.dv, g.n_v, self.kernel.interp_order, g.config.v_max, self.inv_temperature)

    @property
    def loss_matrix(self) -> np.ndarray:
        if self._K is None:
            v, w, sig, sw, bt = self._geom_args()
            self._K = _kernels.loss_weights(v, w, sig, sw, bt, float(self.kernel.gamma), float(self.kernel.c_phi))
        return self._K

    def nu(self) -> np.ndarray:
        return self.loss_matrix @ self.grid.mu

    def tensor_bytes(self) -> float:
        return 8.0 * self.grid.nv_total**3

    def bilinear_tensor(self) -> np.ndarray:
        """Dense tensor T of shape (N_v, N_v * N_v) with Q(g, h)_i = sum_ab T[i, a N_v + b] g_a h_b."""
        if self._T is None:
            if self.tensor_bytes() > TENSOR_MEMORY_LIMIT:
                raise MemoryError(f"bilinear tensor would need {self.tensor_bytes() / 1e9:.1f} GB")
            v, w, sig, sw, bt = self._geom_args()
            T = _kernels.gain_tensor(
                v, w, sig, sw, bt, float(self.kernel.gamma), float(self.kernel.c_phi), *self._interp_args(), self.envelope
            )
            K = self.loss_matrix
            n = self.grid.nv_total
            idx = np.arange(n)
            # loss 1/2 (h_i (K g)_i + g_i (K h)_i)
            T[idx, idx, :] -= 0.5 * K
            T[idx, :, idx] -= 0.5 * K
            self._T = T.reshape(n, n * n)
        return self._T

    def gain(self, g: np.ndarray, h: np.ndarray) -> np.ndarray:
        v, w, sig, sw, bt = self._geom_args()
        env = self.envelope[:, None]
        G = np.ascontiguousarray(g.T / env)
        H = np.ascontiguousarray(h.T / env)
        out = _kernels.gain_direct(
            G, H, v, w, sig, sw, bt, float(self.kernel.gamma), float(self.kernel.c_phi), *self._interp_args()
        )
        return out.T

    def loss(self, g: np.ndarray, h: np.ndarray) -> np.ndarray:
        K = self.loss_matrix
        return 0.5 * (h * (g @ K.T) + g * (h @ K.T))

    def __call__(self, g: np.ndarray, h: np.ndarray, method: str = "direct") -> np.ndarray:
        """Q(g, h) for arrays of shape (..., N_v); leading axes are spatial nodes."""
        g = np.asarray(g, dtype=float)
        h = np.asarray(h, dtype=float)
        if g.shape != h.shape or g.shape[-1] != self.grid.nv_total:
            raise ValueError("fields must share the velocity grid")
        lead = g.shape[:-1]
        g2 = g.reshape(-1, g.shape[-1])
        h2 = h.reshape(-1, h.shape[-1])
        if method == "tensor":
            n = self.grid.nv_total
            gh = (g2[:, :, None] * h2[:, None, :]).reshape(g2.shape[0], n * n)
            out = gh @ self.bilinear_tensor().T
        elif method == "direct":
            out = self.gain(g2, h2) - self.loss(g2, h2)
        else:
            raise ValueError(f"unknown method {method!r}")
        return out.reshape(lead + (g.shape[-1],))


@functools.lru_cache(maxsize=8)
def _operator_for(kernel: KernelConfig, grid_cfg: GridConfig) -> CollisionOperator:
    return CollisionOperator(kernel, build_phase_grid(grid_cfg))


def collision_operator(kernel: KernelConfig, grid: PhaseGrid) -> CollisionOperator:
    """Cached operator for a (kernel, grid) pair; grids are identified by their configuration."""
    return _operator_for(kernel, grid.config)


def eval_Q(
    g: DistributionField | np.ndarray,
    h: DistributionField | np.ndarray,
    kernel: KernelConfig,
    grid: PhaseGrid,
    method: str = "direct",
) -> DistributionField | np.ndarray:
    """Symmetrized bilinear collision operator, evaluated independently at each spatial node.

    Accepts fields on the grid or bare velocity profiles of length N_v.
    """
    for f in (g, h):
        if isinstance(f, DistributionField) and not f.grid.same_as(grid):
            raise ValueError("grid mismatch between field and operator")
    gv = field_values(g)
    hv = field_values(h)
    if gv.shape != hv.shape:
        raise ValueError("grid mismatch between the two fields")
    if gv.shape[-1] != grid.nv_total:
        raise ValueError("grid mismatch: velocity dimension differs")
    out = collision_operator(kernel, grid)(gv, hv, method=method)
    if isinstance(g, DistributionField) or isinstance(h, DistributionField):
        return DistributionField(out, grid)
    return out


@dataclass(frozen=True, eq=False)
class NuProfile:
    values: np.ndarray
    nu0: float
    nu1: float
    c_b: float


def eval_nu(kernel: KernelConfig, grid: PhaseGrid) -> NuProfile:
    """Collision frequency nu(v) = int b |v - v_*|^gamma mu_* on the nodes, with two-sided bounds."""
    op = collision_operator(kernel, grid)
    nu = op.nu()
    ratio = nu / (1.0 + np.sqrt(grid.speed2) ** kernel.gamma)
    return NuProfile(nu, float(ratio.min()), float(ratio.max()), op.c_b)


def collision_frequency_at(points: np.ndarray, kernel: KernelConfig, grid: PhaseGrid) -> np.ndarray:
    """nu(v) at arbitrary velocities by the same (v_*, sigma) quadrature used on the nodes."""
    op = collision_operator(kernel, grid)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    rel = pts[:, None, :] - grid.v_nodes[None, :, :]
    r = np.linalg.norm(rel, axis=-1)
    dirs = op.quad.half_directions
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.einsum("pjd,sd->pjs", rel, dirs) / r[..., None]
    cos = np.where(r[..., None] > 0, cos, dirs[None, None, :, 0])
    z = np.linspace(-1.0, 1.0, op.b_table.size)
    bvals = np.interp(cos, z, op.b_table)
    ang = bvals @ op.quad.half_weights
    kin = kernel.c_phi * r**kernel.gamma
    return (kin * ang) @ (grid.w_v * grid.mu)
