"""Hydrodynamic moments, Chapman-Enskog transport coefficients and a periodic Navier-Stokes-Boussinesq solver.

Transport coefficients (L is non-positive, hence the minus signs):

    nu_visc = -1/((d-1)(d+2)) sum_ij int L^{-1}(A_ij mu) A_ij dv,  A_ij = v_i v_j - |v|^2 delta_ij / d
    kappa   = -2/(d(d+2))     sum_i  int L^{-1}(B_i mu)  B_i  dv,  B_i  = v_i (|v|^2 - (d+2)) / 2

With these normalizations the relaxation operator -(h - pi_L h) gives nu_visc =
kappa = 1, and kappa is the diffusivity of theta = (1/d) int (|v|^2 - d) h dv.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .grid import DistributionField, PhaseGrid, field_values, spectral_derivative
from .linop import LinearOperator, project_piL, projection_matrix, transport_term


@dataclass(frozen=True, eq=False)
class HydroState:
    rho: np.ndarray  # (N_x,)
    u: np.ndarray  # (N_x, d)
    theta: np.ndarray  # (N_x,)
    nu_visc: float | None = None
    kappa: float | None = None
    pressure: np.ndarray | None = None

    def __post_init__(self) -> None:
        for name in ("rho", "u", "theta"):
            arr = getattr(self, name)
            if np.iscomplexobj(arr) or not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be real and finite")


def moments(h: DistributionField | np.ndarray, grid: PhaseGrid) -> HydroState:
    """Density, velocity and temperature fluctuations at every spatial node."""
    vals = field_values(h, grid)
    w = grid.w_v
    rho = vals @ w
    u = vals @ (w[:, None] * grid.v_nodes)
    theta = vals @ (w * (grid.speed2 - grid.d)) / grid.d
    return HydroState(rho, u, theta)


# ---------------------------------------------------------------- transport coefficients


@dataclass(frozen=True)
class TransportCoefficients:
    nu_visc: float
    kappa: float
    residual: float  # max relative residual of the restricted solves
    factorization_gap: float  # max relative difference between the two solvers


def _viscous_sources(grid: PhaseGrid):
    d, v, s2 = grid.d, grid.v_nodes, grid.speed2
    out = []
    for i in range(d):
        for j in range(d):
            out.append(v[:, i] * v[:, j] - (s2 / d if i == j else 0.0))
    return np.stack(out, axis=1)


def _heat_sources(grid: PhaseGrid):
    d = grid.d
    return np.stack([grid.v_nodes[:, i] * (grid.speed2 - (d + 2)) / 2.0 for i in range(d)], axis=1)


def _solve_shifted(L: np.ndarray, P: np.ndarray, R: np.ndarray) -> np.ndarray:
    # L - P is invertible; since P L = 0 and P R = 0 the solution satisfies P X = 0 and L X = R
    return linalg.lu_solve(linalg.lu_factor(L - P), R)


def _solve_reduced(L: np.ndarray, P: np.ndarray, R: np.ndarray) -> np.ndarray:
    # Galerkin solve on an orthonormal basis of the range of I - P
    Z = linalg.null_space(P)
    y = linalg.solve(Z.T @ L @ Z, Z.T @ R)
    return Z @ y


def estimate_transport_coeffs(L: LinearOperator | np.ndarray, grid: PhaseGrid) -> TransportCoefficients:
    """Viscosity and heat diffusivity from two restricted solves of L X = source on Ker(L)^perp."""
    M = L.matrix if isinstance(L, LinearOperator) else np.asarray(L)
    P = projection_matrix(grid)
    perp = np.eye(grid.nv_total) - P
    d = grid.d
    Av = _viscous_sources(grid)
    Bv = _heat_sources(grid)
    # remove the quadrature-size component on the invariants so the sources lie in the range of L
    src = perp @ (grid.mu[:, None] * np.hstack([Av, Bv]))
    X1 = _solve_shifted(M, P, src)
    X2 = _solve_reduced(M, P, src)
    if not (np.all(np.isfinite(X1)) and np.all(np.isfinite(X2))):
        raise np.linalg.LinAlgError("restricted solve is singular; the velocity grid is too coarse")
    res = np.linalg.norm(M @ X1 - src, axis=0) / np.linalg.norm(src, axis=0)
    gap = np.linalg.norm(X1 - X2, axis=0) / np.linalg.norm(X1, axis=0)
    w = grid.w_v
    nA = Av.shape[1]
    visc = -float(np.sum(w[:, None] * X1[:, :nA] * Av)) / ((d - 1) * (d + 2))
    heat = -2.0 * float(np.sum(w[:, None] * X1[:, nA:] * Bv)) / (d * (d + 2))
    return TransportCoefficients(visc, heat, float(res.max()), float(gap.max()))


def first_order_correction(h_hydro: np.ndarray, L: LinearOperator | np.ndarray, grid: PhaseGrid) -> np.ndarray:
    """Kinetic part X with L X = (I - pi_L)(v . grad_x h_hydro) and zero hydrodynamic moments.

    Adding eps * X to a hydrodynamic profile places the datum on the slow manifold
    to first order in eps, which suppresses the initial acoustic layer.
    """
    M = L.matrix if isinstance(L, LinearOperator) else np.asarray(L)
    tt = transport_term(np.asarray(h_hydro, dtype=float), grid)
    src = tt - project_piL(tt, grid)
    return _solve_shifted(M, projection_matrix(grid), src.T).T


# ---------------------------------------------------------------- Navier-Stokes-Boussinesq


class CFLError(RuntimeError):
    pass


@dataclass(eq=False)
class NSTrajectory:
    times: np.ndarray
    states: list[HydroState] = field(default_factory=list)
    max_divergence: float = 0.0


class _Spectral2D:
    def __init__(self, n: int, period: float):
        k1 = 2.0 * np.pi * np.fft.fftfreq(n, d=1.0 / n) / period
        self.kx, self.ky = np.meshgrid(k1, k1, indexing="ij")
        self.k2 = self.kx**2 + self.ky**2
        self.inv_k2 = np.where(self.k2 > 0, 1.0 / np.where(self.k2 > 0, self.k2, 1.0), 0.0)
        nn = np.abs(np.fft.fftfreq(n, d=1.0 / n))
        keep = nn < n / 3.0
        self.dealias = np.outer(keep, keep)
        self.n = n

    def leray(self, uh, vh):
        div = self.kx * uh + self.ky * vh
        return uh - self.kx * div * self.inv_k2, vh - self.ky * div * self.inv_k2

    def grad(self, fh):
        return np.fft.ifft2(1j * self.kx * fh).real, np.fft.ifft2(1j * self.ky * fh).real

    def divergence(self, uh, vh) -> float:
        return float(np.abs(np.fft.ifft2(1j * (self.kx * uh + self.ky * vh))).max())


def _to_grid2(field_1d: np.ndarray, n: int) -> np.ndarray:
    return np.asarray(field_1d, dtype=float).reshape(n, n)


def solve_ns(
    initial: HydroState,
    t_end: float,
    grid: PhaseGrid,
    nu_visc: float | None = None,
    kappa: float | None = None,
    times=None,
    dt: float | None = None,
    cfl: float = 0.5,
    nonlinear: bool = True,
) -> NSTrajectory:
    """Incompressible Navier-Stokes for u with an advected-diffused theta, on the 2D periodic grid.

    Exact integrating factor for the diffusion terms, classical RK4 for the
    Leray-projected advection, 2/3-rule dealiasing of the quadratic products.
    rho follows from the Boussinesq relation rho + theta = const.
    """
    if grid.d != 2:
        raise ValueError("the Navier-Stokes solver is two-dimensional")
    nu_visc = initial.nu_visc if nu_visc is None else nu_visc
    kappa = initial.kappa if kappa is None else kappa
    if nu_visc is None or kappa is None or nu_visc <= 0 or kappa <= 0:
        raise ValueError("positive nu_visc and kappa are required")
    n = grid.n_x
    sp = _Spectral2D(n, grid.config.torus_period)
    uh = np.fft.fft2(_to_grid2(initial.u[:, 0], n))
    vh = np.fft.fft2(_to_grid2(initial.u[:, 1], n))
    if sp.divergence(uh, vh) > 1e-10 * max(1.0, np.abs(initial.u).max()):
        warnings.warn("initial velocity is not divergence free; projecting", stacklevel=2)
    uh, vh = sp.leray(uh, vh)
    th = np.fft.fft2(_to_grid2(initial.theta, n))
    rho_plus_theta = float(np.mean(initial.rho + initial.theta))

    out_times = np.array([t_end] if times is None else times, dtype=float)
    if np.any(np.diff(out_times) < 0) or out_times[0] < 0 or out_times[-1] > t_end + 1e-12:
        raise ValueError("output times must be sorted inside [0, t_end]")
    dx = grid.config.torus_period / n

    def max_speed(uh_, vh_):
        return float(np.sqrt(np.fft.ifft2(uh_).real ** 2 + np.fft.ifft2(vh_).real ** 2).max())

    def advection(uh_, vh_, th_):
        u = np.fft.ifft2(uh_ * sp.dealias).real
        v = np.fft.ifft2(vh_ * sp.dealias).real
        ux, uy = sp.grad(uh_ * sp.dealias)
        vx, vy = sp.grad(vh_ * sp.dealias)
        tx, ty = sp.grad(th_ * sp.dealias)
        return tuple(np.fft.fft2(f) * sp.dealias for f in (u * ux + v * uy, u * vx + v * vy, u * tx + v * ty))

    def rhs(uh_, vh_, th_):
        if not nonlinear:
            z = np.zeros_like(uh_)
            return z, z, z
        a, b, c = advection(uh_, vh_, th_)
        a, b = sp.leray(-a, -b)
        return a, b, -c

    def state(uh_, vh_, th_):
        u = np.stack([np.fft.ifft2(uh_).real.ravel(), np.fft.ifft2(vh_).real.ravel()], axis=1)
        theta = np.fft.ifft2(th_).real.ravel()
        p = np.zeros_like(theta)
        if nonlinear:
            # Laplacian of p equals minus the divergence of the advection term
            a, b, _ = advection(uh_, vh_, th_)
            p = np.fft.ifft2(1j * (sp.kx * a + sp.ky * b) * sp.inv_k2).real.ravel()
        return HydroState(rho_plus_theta - theta, u, theta, nu_visc, kappa, p)

    speed = max_speed(uh, vh)
    dt_cfl = cfl * dx / speed if speed > 0 else math.inf
    if dt is None:
        dt = min(dt_cfl, 0.02, max(t_end, 1e-12) / 10.0)
    elif dt > dt_cfl:
        raise CFLError(f"dt={dt:.3e} violates the advective CFL bound {dt_cfl:.3e}")

    traj = NSTrajectory(out_times)
    t = 0.0
    max_div = sp.divergence(uh, vh)
    for target in out_times:
        while t < target - 1e-14:
            h = min(dt, target - t)
            eu = np.exp(-nu_visc * sp.k2 * h)
            eu2 = np.exp(-nu_visc * sp.k2 * h / 2)
            et = np.exp(-kappa * sp.k2 * h)
            et2 = np.exp(-kappa * sp.k2 * h / 2)
            # integrating-factor RK4
            a1 = rhs(uh, vh, th)
            s2 = (eu2 * (uh + 0.5 * h * a1[0]), eu2 * (vh + 0.5 * h * a1[1]), et2 * (th + 0.5 * h * a1[2]))
            a2 = rhs(*s2)
            s3 = (eu2 * uh + 0.5 * h * a2[0], eu2 * vh + 0.5 * h * a2[1], et2 * th + 0.5 * h * a2[2])
            a3 = rhs(*s3)
            s4 = (eu * uh + h * eu2 * a3[0], eu * vh + h * eu2 * a3[1], et * th + h * et2 * a3[2])
            a4 = rhs(*s4)
            uh = eu * uh + h / 6 * (eu * a1[0] + 2 * eu2 * (a2[0] + a3[0]) + a4[0])
            vh = eu * vh + h / 6 * (eu * a1[1] + 2 * eu2 * (a2[1] + a3[1]) + a4[1])
            th = et * th + h / 6 * (et * a1[2] + 2 * et2 * (a2[2] + a3[2]) + a4[2])
            t += h
            max_div = max(max_div, sp.divergence(uh, vh))
            speed = max_speed(uh, vh)
            if not math.isfinite(speed) or (speed > 0 and dt > cfl * dx / speed * 1.5):
                raise CFLError(f"advective CFL bound violated at t={t:g}")
        traj.states.append(state(uh, vh, th))
    traj.max_divergence = max_div
    return traj


# ---------------------------------------------------------------- limit diagnostics


def _spatial_gradient_norm(f: np.ndarray, grid: PhaseGrid) -> float:
    total = 0.0
    for ax in range(grid.d):
        orders = tuple(1 if a == ax else 0 for a in range(grid.d))
        g = spectral_derivative(f[:, None], grid, orders)[:, 0]
        total += float(grid.w_x @ g**2)
    return math.sqrt(total)


def boussinesq_residual(state: HydroState, grid: PhaseGrid) -> float:
    """||grad(rho + theta)|| / (||grad rho|| + ||grad theta||), zero when both gradients vanish."""
    num = _spatial_gradient_norm(state.rho + state.theta, grid)
    den = _spatial_gradient_norm(state.rho, grid) + _spatial_gradient_norm(state.theta, grid)
    if den <= 1e-14 * max(1.0, float(np.abs(state.rho).max() + np.abs(state.theta).max())):
        return 0.0
    return num / den


ERROR_COLUMNS = ("epsilon", "t", "err_rho", "err_u", "err_theta", "boussinesq_residual")


@dataclass(frozen=True, eq=False)
class HydroErrorTable:
    epsilon: float
    t: np.ndarray
    err_rho: np.ndarray
    err_u: np.ndarray
    err_theta: np.ndarray
    boussinesq_residual: np.ndarray
    resampled: bool = False

    def max_errors(self) -> dict[str, float]:
        return {c: float(np.max(getattr(self, c))) for c in ERROR_COLUMNS[2:]}

    def rows(self):
        for i in range(self.t.size):
            yield (self.epsilon, self.t[i], self.err_rho[i], self.err_u[i], self.err_theta[i], self.boussinesq_residual[i])

    def write_csv(self, path, append: bool = False) -> None:
        with open(path, "a" if append else "w", newline="") as fh:
            w = csv.writer(fh)
            if not append:
                w.writerow(ERROR_COLUMNS)
            for row in self.rows():
                w.writerow([f"{x:.12e}" for x in row])


def _l2x(f: np.ndarray, grid: PhaseGrid) -> float:
    f = f.reshape(grid.nx_total, -1)
    return math.sqrt(float(grid.w_x @ np.sum(f**2, axis=1)))


def _interp_state(ns: NSTrajectory, t: float) -> HydroState:
    times = ns.times
    j = int(np.searchsorted(times, t))
    if j < times.size and abs(times[j] - t) < 1e-12:
        return ns.states[j]
    j = min(max(j, 1), times.size - 1)
    a = (t - times[j - 1]) / (times[j] - times[j - 1])
    s0, s1 = ns.states[j - 1], ns.states[j]
    return HydroState((1 - a) * s0.rho + a * s1.rho, (1 - a) * s0.u + a * s1.u, (1 - a) * s0.theta + a * s1.theta)


def hydro_limit_error(kinetic_times, kinetic_snapshots, ns: NSTrajectory, grid: PhaseGrid, epsilon: float) -> HydroErrorTable:
    """L^2_x distance between kinetic moments and Navier-Stokes fields at the kinetic snapshot times."""
    kt = np.asarray(kinetic_times, dtype=float)
    resampled = ns.times.shape != kt.shape or not np.allclose(ns.times, kt, atol=1e-12)
    if resampled:
        if kt[0] < ns.times[0] - 1e-12 or kt[-1] > ns.times[-1] + 1e-12:
            raise ValueError("kinetic times fall outside the Navier-Stokes trajectory")
        warnings.warn("time grids differ; Navier-Stokes fields are linearly interpolated", stacklevel=2)
    cols = {c: [] for c in ERROR_COLUMNS[2:]}
    for t, h in zip(kt, kinetic_snapshots):
        m = moments(h, grid)
        ref = _interp_state(ns, t)
        cols["err_rho"].append(_l2x(m.rho - ref.rho, grid))
        cols["err_u"].append(_l2x(m.u - ref.u, grid))
        cols["err_theta"].append(_l2x(m.theta - ref.theta, grid))
        cols["boussinesq_residual"].append(boussinesq_residual(m, grid))
    return HydroErrorTable(epsilon, kt, *(np.asarray(cols[c]) for c in ERROR_COLUMNS[2:]), resampled=resampled)
