"""Velocity-space matrices of the linearized collision operator and its compact/dissipative splitting.

Every matrix acts on velocity profiles and is applied identically at each spatial
node; the physical operators carry a factor 1/epsilon^2 that is not stored.

The discrete inner product is <f, g> = sum_v w_v f g / mu, the quadrature version
of L^2_v(mu^{-1/2}). The assembled linearized operator is the raw strong-form
quadrature matrix sandwiched between projections onto the orthogonal complement of
the collision invariants. This makes its kernel exactly the d + 2 invariant
directions and makes it exactly conservative. The correction relative to the raw
quadrature is of interpolation-error size and is carried by the non-compact part
of the splitting, so that the splitting identity is exact.

Self-adjointness holds to interpolation accuracy only. Symmetrizing the matrix in
the weighted inner product would multiply tail interpolation errors by ratios of
Maxwellian values and wreck the operator in polynomially weighted L^1.
"""

from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import _kernels
from .collision import KernelConfig, collision_operator
from .grid import DistributionField, GridConfig, PhaseGrid, build_phase_grid, field_values

KINDS = ("L", "A_delta", "B2_delta", "nu_mult")


@dataclass(frozen=True, eq=False)
class LinearOperator:
    matrix: np.ndarray
    kind: str
    delta: float | None = None
    epsilon_scaling: int = -2  # physical operator is matrix * epsilon**epsilon_scaling

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown operator kind {self.kind!r}")

    def apply(self, h: np.ndarray) -> np.ndarray:
        """Apply to profiles stored along the last axis."""
        return h @ self.matrix.T

    def scaled(self, epsilon: float) -> np.ndarray:
        return self.matrix * epsilon**self.epsilon_scaling


# ---------------------------------------------------------------- invariants and projections


def invariant_profiles(grid: PhaseGrid) -> np.ndarray:
    """Columns phi_0 = 1, phi_i = v_i, phi_{d+1} = (|v|^2 - d)/sqrt(2d) on the nodes."""
    d = grid.d
    cols = [np.ones(grid.nv_total)] + [grid.v_nodes[:, i] for i in range(d)]
    cols.append((grid.speed2 - d) / math.sqrt(2.0 * d))
    return np.stack(cols, axis=1)


@functools.lru_cache(maxsize=16)
def _orthonormal_invariants(cfg: GridConfig) -> np.ndarray:
    grid = build_phase_grid(cfg)
    phi = invariant_profiles(grid)
    gram = phi.T @ ((grid.w_v * grid.mu)[:, None] * phi)
    # re-orthonormalize against the quadrature so that the projection is exactly idempotent
    chol = np.linalg.cholesky(gram)
    return np.linalg.solve(chol, phi.T).T


def orthonormal_invariants(grid: PhaseGrid) -> np.ndarray:
    """Invariant profiles orthonormalized in the discrete sum_v w_v mu phi_i phi_j."""
    return _orthonormal_invariants(grid.config)


def projection_matrix(grid: PhaseGrid) -> np.ndarray:
    phi = orthonormal_invariants(grid)
    return (grid.mu[:, None] * phi) @ (phi * grid.w_v[:, None]).T


def project_piL(h: np.ndarray, grid: PhaseGrid) -> np.ndarray:
    """sum_i (int h phi_i dv) phi_i mu for profiles stored along the last axis."""
    phi = orthonormal_invariants(grid)
    h = np.asarray(h, dtype=float)
    coeffs = (h * grid.w_v) @ phi
    return (coeffs @ phi.T) * grid.mu


def project_PiG(h: DistributionField | np.ndarray, grid: PhaseGrid) -> DistributionField | np.ndarray:
    """Projection onto the kernel of the full linear operator: pi_L of the spatial average, constant in x."""
    vals = field_values(h, grid)
    mean = (grid.w_x @ vals) / grid.w_x.sum()
    out = np.broadcast_to(project_piL(mean, grid), vals.shape).copy()
    if isinstance(h, DistributionField):
        return DistributionField(out, grid)
    return out


def inner_weights(grid: PhaseGrid) -> np.ndarray:
    """Diagonal of the discrete L^2_v(mu^{-1/2}) inner product."""
    return grid.w_v / grid.mu


def adjoint(M: np.ndarray, grid: PhaseGrid) -> np.ndarray:
    lam = inner_weights(grid)
    return (M.T * lam[None, :]) / lam[:, None]


def symmetrized(M: np.ndarray, grid: PhaseGrid) -> np.ndarray:
    """Matrix conjugated into an ordinary symmetric one, Lambda^{1/2} M Lambda^{-1/2}."""
    s = np.sqrt(inner_weights(grid))
    S = M * s[:, None] / s[None, :]
    return 0.5 * (S + S.T)


# ---------------------------------------------------------------- mollifier


@njit(cache=True)
def _mollifier_many(speed, rel, abs_cos, delta):
    out = np.empty(speed.shape[0])
    for n in range(speed.shape[0]):
        out[n] = _kernels.mollifier_value(speed[n], rel[n], abs_cos[n], delta)
    return out


@dataclass(frozen=True)
class Mollifier:
    delta: float

    def __post_init__(self) -> None:
        if not 0.0 < self.delta <= 0.5:
            raise ValueError(f"delta must lie in (0, 0.5], got {self.delta}")

    def from_scalars(self, speed, rel_speed, abs_cos) -> np.ndarray:
        speed, rel_speed, abs_cos = np.broadcast_arrays(
            np.asarray(speed, float), np.asarray(rel_speed, float), np.abs(np.asarray(abs_cos, float))
        )
        out = _mollifier_many(speed.ravel().copy(), rel_speed.ravel().copy(), abs_cos.ravel().copy(), self.delta)
        return out.reshape(speed.shape)

    def __call__(self, v, v_star, sigma) -> np.ndarray:
        v = np.atleast_2d(np.asarray(v, float))
        v_star = np.atleast_2d(np.asarray(v_star, float))
        sigma = np.atleast_2d(np.asarray(sigma, float))
        rel = v - v_star
        r = np.linalg.norm(rel, axis=-1)
        with np.errstate(invalid="ignore", divide="ignore"):
            cos = np.where(r > 0, np.sum(rel * sigma, axis=-1) / r, 0.0)
        return self.from_scalars(np.linalg.norm(v, axis=-1), r, cos)


def build_mollifier(delta: float) -> Mollifier:
    return Mollifier(float(delta))


# ---------------------------------------------------------------- assembly


@functools.lru_cache(maxsize=16)
def _raw_parts(kernel: KernelConfig, cfg: GridConfig, delta: float) -> tuple[np.ndarray, np.ndarray]:
    grid = build_phase_grid(cfg)
    op = collision_operator(kernel, grid)
    v, w, sig, sw, bt = op._geom_args()
    return _kernels.linear_parts(
        v, w, grid.mu, sig, sw, bt, float(kernel.gamma), float(kernel.c_phi), *op._interp_args(), op.envelope, float(delta)
    )


def raw_linearized_matrix(kernel: KernelConfig, grid: PhaseGrid) -> np.ndarray:
    """Direct quadrature of 2Q(mu, h) before any correction."""
    _, R = _raw_parts(kernel, grid.config, 0.0)
    nu = collision_operator(kernel, grid).nu()
    return R - np.diag(nu)


@functools.lru_cache(maxsize=8)
def _assembled_L(kernel: KernelConfig, cfg: GridConfig) -> np.ndarray:
    grid = build_phase_grid(cfg)
    raw = raw_linearized_matrix(kernel, grid)
    perp = np.eye(grid.nv_total) - projection_matrix(grid)
    return perp @ raw @ perp


def assemble_L(kernel: KernelConfig, grid: PhaseGrid) -> LinearOperator:
    """Matrix of h -> 2Q(mu, h) with the collision invariants as exact kernel and exact left kernel."""
    return LinearOperator(_assembled_L(kernel, grid.config), "L")


def split_operators(
    kernel: KernelConfig, grid: PhaseGrid, delta: float
) -> tuple[LinearOperator, LinearOperator, np.ndarray]:
    """Return (A, B2, nu) with A + B2 - diag(nu) equal to the assembled linearized operator."""
    moll = build_mollifier(delta)
    if support_radius(moll.delta) > math.sqrt(grid.d) * grid.config.v_max:
        warnings.warn(
            f"support radius {support_radius(moll.delta):g} of the compact part exceeds the velocity box",
            stacklevel=2,
        )
    A_raw, _ = _raw_parts(kernel, grid.config, moll.delta)
    nu = collision_operator(kernel, grid).nu()
    L = _assembled_L(kernel, grid.config)
    B2 = L + np.diag(nu) - A_raw
    return LinearOperator(A_raw, "A_delta", moll.delta), LinearOperator(B2, "B2_delta", moll.delta), nu


def support_radius(delta: float) -> float:
    return 2.0 / delta


# ---------------------------------------------------------------- spectrum


@dataclass(frozen=True, eq=False)
class SpectralReport:
    kernel_dim: int
    lambda_0: float
    kernel_basis_error: float
    eigenvalues: np.ndarray
    plateau: dict = field(default_factory=dict)
    max_nonkernel_eigenvalue: float = 0.0


class KernelDimensionError(RuntimeError):
    pass


def spectral_gap(L: LinearOperator, grid: PhaseGrid, kernel_tol: float = 1e-6, strict: bool = True) -> SpectralReport:
    """Eigen-decomposition of the symmetrized operator with a tolerance-plateau nullspace count."""
    if L.kind != "L":
        raise ValueError("spectral_gap expects the linearized operator")
    S = symmetrized(L.matrix, grid)
    evals, evecs = np.linalg.eigh(S)
    scale = np.abs(evals).max()
    plateau = {}
    for tol in (kernel_tol / 10.0, kernel_tol, kernel_tol * 10.0):
        plateau[tol] = int(np.sum(np.abs(evals) < tol * scale))
    dim = plateau[kernel_tol]
    expected = grid.d + 2
    if strict and (len(set(plateau.values())) != 1 or dim != expected):
        raise KernelDimensionError(f"nullspace count {plateau} does not settle on {expected}")
    in_kernel = np.abs(evals) < kernel_tol * scale
    rest = evals[~in_kernel]
    lam0 = float(-rest.max()) if rest.size else float("nan")
    # principal angles between the numerical nullspace and the invariant directions
    s = np.sqrt(inner_weights(grid))
    target = s[:, None] * (grid.mu[:, None] * invariant_profiles(grid))
    q_target, _ = np.linalg.qr(target)
    null = evecs[:, in_kernel]
    if null.shape[1]:
        sv = np.linalg.svd(q_target.T @ null, compute_uv=False)
        err = float(np.sqrt(max(0.0, 1.0 - sv.min() ** 2)))
    else:
        err = 1.0
    return SpectralReport(dim, lam0, err, evals, plateau, float(rest.max()) if rest.size else 0.0)


# ---------------------------------------------------------------- closed-form thresholds


def k_star(q: float, gamma: float) -> float:
    """Smallest admissible polynomial weight exponent in L^q_v."""
    if q == math.inf:
        return (3.0 + 7.0) / 2.0 + gamma
    return (3.0 + math.sqrt(49.0 - 48.0 / q)) / 2.0 + gamma * (1.0 - 1.0 / q)


def phi_q(k: float, q: float) -> float:
    """Limit contraction factor (4/(k+2))^{1/q} (4/(k-1))^{1-1/q} of the non-compact gain part."""
    if k <= 1:
        raise ValueError("phi_q requires k > 1")
    inv = 0.0 if q == math.inf else 1.0 / q
    return (4.0 / (k + 2.0)) ** inv * (4.0 / (k - 1.0)) ** (1.0 - inv)


# ---------------------------------------------------------------- dissipativity


def transport_term(h: np.ndarray, grid: PhaseGrid) -> np.ndarray:
    """v . grad_x h by spatial FFT for a field of shape (N_x, N_v)."""
    shp = grid.spatial_shape() + (grid.nv_total,)
    axes = tuple(range(grid.d))
    fh = np.fft.fftn(h.reshape(shp), axes=axes)
    kk = grid.wavenumbers()
    out = np.zeros(shp, dtype=complex)
    for ax in range(grid.d):
        kax = kk[ax].copy()
        kax[np.abs(kax) == np.abs(kk[ax]).max()] = 0.0
        out += (1j * kax)[..., None] * fh * grid.v_nodes[:, ax]
    return np.fft.ifftn(out, axes=axes).real.reshape(h.shape)


def refine_spatial(h: np.ndarray, grid: PhaseGrid, factor: int) -> tuple[np.ndarray, np.ndarray]:
    """Trigonometric interpolant of a field on a grid `factor` times finer per axis, with its weights."""
    if factor == 1:
        return h, grid.w_x
    n = grid.n_x
    m = n * factor
    shp = grid.spatial_shape() + (h.shape[1],)
    axes = tuple(range(grid.d))
    fh = np.fft.fftn(h.reshape(shp), axes=axes)
    # split the Nyquist mode symmetrically so the interpolant stays real
    big = np.zeros((m,) * grid.d + (h.shape[1],), dtype=complex)
    half = n // 2
    src = [np.r_[0:half, half, half, n - half + 1 : n] for _ in axes]
    dst = [np.r_[0:half, half, m - half, m - half + 1 : m] for _ in axes]
    scale = [np.r_[np.ones(half), 0.5, 0.5, np.ones(half - 1)] for _ in axes]
    for ax in axes:
        fh = np.take(fh, src[ax], axis=ax)
        shape = [1] * fh.ndim
        shape[ax] = -1
        fh = fh * scale[ax].reshape(shape)
    big[np.ix_(*dst, np.arange(h.shape[1]))] = fh
    fine = np.fft.ifftn(big, axes=axes).real * factor**grid.d
    w = np.full(m**grid.d, grid.w_x[0] / factor**grid.d)
    return fine.reshape(m**grid.d, h.shape[1]), w


def norm_and_derivative(
    h: np.ndarray, hdot: np.ndarray, grid: PhaseGrid, k: float, p: float, q: float, w_x: np.ndarray | None = None
):
    """Value of ||h||_{L^q_v L^p_x(<v>^k)} and its time derivative along hdot, for p, q in {1, 2}.

    ``w_x`` overrides the spatial weights when h lives on a refined spatial grid.
    """
    m = grid.bracket(k)
    wx = grid.w_x if w_x is None else w_x
    if p == 1:
        nx = wx @ np.abs(h)
        nx_dot = wx @ (np.sign(h) * hdot)
    elif p == 2:
        nx = np.sqrt(wx @ h**2)
        with np.errstate(invalid="ignore", divide="ignore"):
            nx_dot = np.where(nx > 0, (wx @ (h * hdot)) / nx, 0.0)
    else:
        raise ValueError("derivative available for p in {1, 2}")
    if q == 1:
        return float(grid.w_v @ (m * nx)), float(grid.w_v @ (m * nx_dot))
    if q == 2:
        val = math.sqrt(float(grid.w_v @ (m * nx) ** 2))
        return val, float(grid.w_v @ (m**2 * nx * nx_dot)) / val
    raise ValueError("derivative available for q in {1, 2}")


def weighted_l1_log_norm(M: np.ndarray, grid: PhaseGrid, k: float) -> float:
    """Logarithmic norm of M in L^1_v(<v>^k); negative means M is dissipative there."""
    c = grid.w_v * grid.bracket(k)
    off = np.abs(M) * c[:, None] / c[None, :]
    col = off.sum(axis=0) - np.abs(np.diag(M)) + np.diag(M)
    return float(col.max())


@dataclass(frozen=True, eq=False)
class DissipativityResult:
    rates: np.ndarray  # -(d/dt ||h||)/||h|| per sample
    normalized: np.ndarray  # rates * epsilon^2
    worst: float  # min of normalized
    epsilon: float
    k: float
    q: float
    p: float
    delta: float
    log_norm: float  # worst case over all spatially homogeneous profiles, times -1

    @property
    def all_positive(self) -> bool:
        return bool(np.all(self.rates > 0))


def dissipativity_samples(grid: PhaseGrid, rng: np.random.Generator, n_random: int, n_modes: int = 2) -> list[np.ndarray]:
    """Random smooth fields plus profiles concentrated in the Gaussian tail."""
    fields = []
    kk = grid.wavenumbers()
    x = grid.x_nodes
    for _ in range(n_random):
        prof = rng.standard_normal((3, grid.nv_total))
        centers = rng.uniform(-2.5, 2.5, (3, grid.d))
        widths = rng.uniform(0.6, 1.5, 3)
        h = np.zeros(grid.shape)
        for c in range(3):
            bump = np.exp(-np.sum((grid.v_nodes - centers[c]) ** 2, axis=1) / (2 * widths[c] ** 2))
            vel = bump * (1.0 + 0.3 * prof[c])
            n = rng.integers(-n_modes, n_modes + 1, grid.d)
            phase = rng.uniform(0, 2 * np.pi)
            spatial = 1.0 + rng.uniform(-1.5, 1.5) * np.cos(2 * np.pi * (x @ n) / grid.config.torus_period + phase)
            h += rng.choice([-1.0, 1.0]) * np.outer(spatial, vel)
        fields.append(h)
    del kk
    for radius in (2.0, 3.0, 4.0, 0.8 * grid.config.v_max):
        center = np.zeros(grid.d)
        center[0] = radius
        bump = np.exp(-np.sum((grid.v_nodes - center) ** 2, axis=1) / 0.5)
        fields.append(np.broadcast_to(bump, grid.shape).copy())
    return fields


def measure_dissipativity(
    A: LinearOperator,
    B2: LinearOperator,
    nu: np.ndarray,
    grid: PhaseGrid,
    k: float,
    q: float,
    delta: float,
    epsilon: float,
    p: float = 1,
    fields: list[np.ndarray] | None = None,
    rng: np.random.Generator | None = None,
    n_random: int = 100,
    gamma: float = 1.0,
    check: bool = True,
    oversample: int = 4,
) -> DissipativityResult:
    """Decay rate of ||h|| along dh/dt = (B2 - nu)/eps^2 h - v.grad_x h / eps on a sample of fields.

    The spatial integrals of the norm and of its derivative are taken on the
    trigonometric interpolant sampled ``oversample`` times more finely, since the
    node sum of sign(h) v.grad_x h is not zero where h changes sign.
    """
    del A  # the compact part is not part of the dissipative generator
    if fields is None:
        fields = dissipativity_samples(grid, rng or np.random.default_rng(0), n_random)
    gen = B2.matrix - np.diag(nu)
    rates = []
    for h in fields:
        h = np.asarray(h, dtype=float)
        hdot = (h @ gen.T) / epsilon**2 - transport_term(h, grid) / epsilon
        hf, wf = refine_spatial(h, grid, oversample)
        hdf, _ = refine_spatial(hdot, grid, oversample)
        val, der = norm_and_derivative(hf, hdf, grid, k, p, q, w_x=wf)
        rates.append(-der / val)
    rates = np.asarray(rates)
    normalized = rates * epsilon**2
    logn = -weighted_l1_log_norm(gen, grid, k) if q == 1 else float("nan")
    res = DissipativityResult(rates, normalized, float(normalized.min()), epsilon, k, q, p, delta, logn)
    if check and k > k_star(q, gamma) and not res.all_positive:
        raise RuntimeError(f"non-dissipative sample for k={k} > k*={k_star(q, gamma):.3f}")
    return res
