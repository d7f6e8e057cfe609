from __future__ import annotations

import csv
import math

import numpy as np
import pytest
from scipy import linalg

from knudsen.evolve import (
    BlowUpError,
    EvolveConfig,
    FourierTransport,
    Operators,
    TimeStepError,
    Trajectory,
    build_operators,
    collision_bound_ratio,
    conserved_quantities,
    evolve_linear,
    evolve_nonlinear,
    evolve_split_system,
    fit_decay_rate,
    measure_T1,
    scale_to_norm,
    step_linear,
    well_prepared_data,
)
from knudsen.grid import NormSpec, weighted_norm
from knudsen.hydro import moments
from knudsen.linop import invariant_profiles, inner_weights, project_PiG, spectral_gap, symmetrized, LinearOperator

from oracles import line_fit


@pytest.fixture(scope="module")
def small_ops(small_grid, kernel):
    return build_operators(kernel, small_grid, 0.25)


def test_transport_is_unitary_per_velocity_node(small_grid):
    rng = np.random.default_rng(0)
    h = rng.normal(size=small_grid.shape)
    tr = FourierTransport(small_grid, 0.37, 0.5)
    out = h
    for _ in range(5):
        out = tr(out)
    np.testing.assert_allclose(small_grid.w_x @ out**2, small_grid.w_x @ h**2, rtol=1e-12)


def test_transport_shifts_a_fourier_mode(small_grid):
    x = small_grid.x_nodes
    period = small_grid.config.torus_period
    h = np.outer(np.cos(2 * np.pi * x[:, 0] / period), small_grid.mu)
    tau, eps = 0.3, 0.5
    out = FourierTransport(small_grid, tau, eps)(h)
    shift = small_grid.v_nodes[:, 0] * tau / eps
    exact = np.cos(2 * np.pi * (x[:, :1] - shift[None, :]) / period) * small_grid.mu
    np.testing.assert_allclose(out, exact, atol=1e-13)


def test_kernel_is_stationary(small_grid, small_ops):
    coeffs = np.array([0.3, -1.2, 0.5, 2.0])
    prof = (invariant_profiles(small_grid) @ coeffs) * small_grid.mu
    h = np.broadcast_to(prof, small_grid.shape).copy()
    out = step_linear(h, 0.05, 0.5, small_ops, small_grid)
    assert np.abs(out - h).max() < 1e-10 * np.abs(h).max()


def test_step_rejects_large_dt(small_grid, small_ops):
    with pytest.raises(TimeStepError) as err:
        step_linear(np.zeros(small_grid.shape), 1.0, 0.5, small_ops, small_grid)
    assert 0 < err.value.required_dt < 1.0


def test_homogeneous_decay_matches_matrix_exponential(small_grid, small_ops):
    eps, dt, n = 0.5, 0.02, 20
    S = symmetrized(small_ops.L, small_grid)
    evals, evecs = np.linalg.eigh(S)
    lam0 = spectral_gap(LinearOperator(small_ops.L, "L"), small_grid).lambda_0
    # slowest non-kernel mode, mapped back from the symmetric frame
    j = np.argmin(np.abs(evals + lam0))
    prof = evecs[:, j] / np.sqrt(inner_weights(small_grid))
    h = np.broadcast_to(prof, small_grid.shape).copy()
    out = h
    for _ in range(n):
        out = step_linear(out, dt, eps, small_ops, small_grid)
    exact = h @ linalg.expm(small_ops.L * (n * dt / eps**2)).T
    np.testing.assert_allclose(out, exact, atol=1e-10 * np.abs(h).max())
    w = inner_weights(small_grid)
    rate = -math.log(math.sqrt(out[0] @ (w * out[0])) / math.sqrt(h[0] @ (w * h[0]))) / (n * dt)
    assert rate == pytest.approx(lam0 / eps**2, rel=1e-2)


def test_global_kernel_datum_gives_flat_trajectory(small_grid, small_ops, kernel):
    rng = np.random.default_rng(1)
    h = project_PiG(rng.normal(size=small_grid.shape) * small_grid.mu, small_grid)
    traj = evolve_linear(h, EvolveConfig(epsilon=0.5, t_end=0.5), kernel, small_grid, small_ops)
    assert np.abs(traj.norm()).max() < 1e-12


def test_linear_rate_consistent_across_norms(small_grid, small_ops, kernel):
    h = well_prepared_data(small_grid, np.random.default_rng(2))
    specs = (NormSpec(k=3.0), NormSpec(p=2, q=2, weight_kind="inverse_maxwellian"))
    cfg = EvolveConfig(epsilon=0.5, t_end=6.0, record_norms=specs, record_stride=4)
    traj = evolve_linear(h, cfg, kernel, small_grid, small_ops)
    rates = [fit_decay_rate(traj.t, traj.norm(s.label), transient=1.0).rate for s in specs]
    assert rates[0] > 0 and rates[1] > 0
    assert abs(rates[0] - rates[1]) <= 0.2 * max(rates)


def test_blowup_detected(small_grid, kernel, small_ops):
    growing = Operators(small_grid, kernel, 20.0 * np.eye(small_grid.nv_total), small_ops.nu)
    h = well_prepared_data(small_grid, np.random.default_rng(3))
    with pytest.raises(BlowUpError):
        evolve_linear(h, EvolveConfig(epsilon=0.5, t_end=2.0), kernel, small_grid, growing)


def test_nonlinear_zero_datum_stays_zero(small_grid, small_ops, kernel):
    traj = evolve_nonlinear(np.zeros(small_grid.shape), EvolveConfig(epsilon=0.5, t_end=0.25), kernel, small_grid, small_ops)
    assert np.all(traj.norm() == 0.0)
    assert traj.conservation_drift() == 0.0


def test_nonlinear_preconditions(small_grid, small_ops, kernel):
    h = well_prepared_data(small_grid, np.random.default_rng(4))
    big = scale_to_norm(h, small_grid, NormSpec(k=3.0), 1.0)
    with pytest.raises(ValueError, match="smallness"):
        evolve_nonlinear(big, EvolveConfig(epsilon=0.5, t_end=0.1), kernel, small_grid, small_ops)
    small = scale_to_norm(h, small_grid, NormSpec(k=3.0), 0.01) + 1e-5 * small_grid.mu
    with pytest.raises(ValueError, match="kernel"):
        evolve_nonlinear(small, EvolveConfig(epsilon=0.5, t_end=0.1), kernel, small_grid, small_ops)


def test_nonlinear_moments_stay_zero(small_grid, small_ops, kernel):
    h = scale_to_norm(well_prepared_data(small_grid, np.random.default_rng(5)), small_grid, NormSpec(k=3.0), 0.01)
    cfg = EvolveConfig(epsilon=0.5, t_end=0.5, snapshot_stride=2)
    traj = evolve_nonlinear(h, cfg, kernel, small_grid, small_ops)
    for snap in traj.snapshots:
        m = moments(snap, small_grid)
        total = [small_grid.w_x @ m.rho, *(small_grid.w_x @ m.u), small_grid.w_x @ m.theta]
        scale = small_grid.w_x @ np.abs(snap) @ small_grid.w_v
        # L is exactly conservative; the discrete Q conserves to ~1e-4 of a term quadratic in the datum
        assert np.abs(total).max() < 1e-6 * scale
    assert np.all(np.asarray(traj.ledger["min_f"]) > 0)


def test_split_recombination_close_to_direct(small_grid, small_ops, kernel):
    h = scale_to_norm(well_prepared_data(small_grid, np.random.default_rng(6)), small_grid, NormSpec(k=3.0), 0.01)
    cfg = EvolveConfig(epsilon=0.5, t_end=0.25, dt=1 / 64, snapshot_stride=10**6)
    direct = evolve_nonlinear(h, cfg, kernel, small_grid, small_ops).snapshots[-1]
    res = evolve_split_system(h, cfg, kernel, small_grid, small_ops)
    spec = NormSpec(k=3.0)
    dev = weighted_norm(res.final - direct, spec, small_grid) / weighted_norm(direct, spec, small_grid)
    assert dev < 10 * cfg.dt**2
    # h0 relaxes on the fast scale eps^-2, much faster than the full solution
    n0 = res.h0.norm()
    rate0 = -math.log(n0[-1] / n0[0]) / cfg.t_end
    assert rate0 * cfg.epsilon**2 > 0.5


def test_T1_starts_at_norm_of_A_and_decays(small_grid, small_ops, kernel):
    tab = measure_T1(0.25, 0.5, small_grid, [0.0, 0.25, 0.5, 1.0], kernel, k=3.0, operators=small_ops)
    c = small_grid.w_v * small_grid.bracket(3.0)
    normA = (np.abs(small_ops.A) * c[:, None] / c[None, :]).sum(axis=0).max() / 0.25
    assert tab.norms[0] == pytest.approx(normA, rel=1e-12)
    assert np.all(np.diff(tab.norms) < 0)


def test_T1_with_sampled_fields_dominated_by_basis(small_grid, small_ops, kernel):
    fields = [well_prepared_data(small_grid, np.random.default_rng(s)) for s in range(2)]
    base = measure_T1(0.25, 0.5, small_grid, [0.0, 0.5], kernel, k=3.0, operators=small_ops)
    with_fields = measure_T1(0.25, 0.5, small_grid, [0.0, 0.5], kernel, k=3.0, fields=fields, operators=small_ops)
    np.testing.assert_allclose(with_fields.norms, base.norms, rtol=1e-12)


def test_fit_exact_exponential():
    t = np.linspace(0, 3, 31)
    fit = fit_decay_rate(t, 5.0 * np.exp(-2.0 * t))
    assert fit.rate == pytest.approx(2.0, abs=1e-6)
    assert fit.amplitude == pytest.approx(5.0, rel=1e-9)
    assert fit.r2 == pytest.approx(1.0)


def test_fit_constant_norms():
    fit = fit_decay_rate(np.arange(12.0), np.full(12, 3.0))
    assert fit.rate == pytest.approx(0.0, abs=1e-12)
    assert fit.reliable


def test_fit_two_exponential_mixture_matches_oracle():
    t = np.linspace(0, 4, 41)
    y = np.exp(-0.5 * t) + 50.0 * np.exp(-6.0 * t)
    fit = fit_decay_rate(t, y)
    ref_rate, ref_amp = line_fit(t, y)
    assert fit.rate == pytest.approx(ref_rate, rel=1e-10)
    assert fit.amplitude == pytest.approx(ref_amp, rel=1e-10)
    assert 0.5 < fit.rate < 6.0
    assert not fit.reliable
    late = fit_decay_rate(t, y, transient=2.5)
    assert late.reliable and late.rate == pytest.approx(0.5, rel=1e-2)


@pytest.mark.parametrize("norms", [np.array([1.0, 0.0] + [1.0] * 10), np.array([1.0, -1.0] + [1.0] * 10)])
def test_fit_rejects_nonpositive(norms):
    with pytest.raises(ValueError):
        fit_decay_rate(np.arange(12.0), norms)


def test_fit_requires_samples_after_transient():
    with pytest.raises(ValueError):
        fit_decay_rate(np.arange(12.0), np.ones(12), transient=5.0)


def test_trajectory_csv_and_ordering(tmp_path):
    traj = Trajectory(0.5, 0.1)
    traj.record(0.0, {"n": 1.0}, {"mass": 1.0, "momentum_1": 0.0, "momentum_2": 0.0, "energy": 1.0, "min_f": 0.1})
    traj.record(0.1, {"n": 0.5}, {"mass": 1.0, "momentum_1": 0.0, "momentum_2": 0.0, "energy": 1.0, "min_f": 0.1})
    with pytest.raises(ValueError):
        traj.record(0.05, {"n": 0.4})
    path = tmp_path / "t.csv"
    traj.write_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["time", "n", "mass", "momentum_1", "momentum_2", "energy", "min_f"]
    assert len(rows) == 3


def test_conserved_quantities_of_equilibrium(small_grid):
    q = conserved_quantities(np.zeros(small_grid.shape), small_grid, 0.5)
    volume = small_grid.config.torus_period**2
    assert q["mass"] == pytest.approx(volume, rel=1e-5)
    assert q["energy"] == pytest.approx(volume, rel=1e-4)  # int |v|^2/2 mu = d/2 = 1
    assert abs(q["momentum_1"]) < 1e-12


def test_well_prepared_data_structure(small_grid):
    h = well_prepared_data(small_grid, np.random.default_rng(7), kinetic_fraction=0.0)
    assert np.abs(project_PiG(h, small_grid)).max() < 1e-15
    m = moments(h, small_grid)
    # exact for Gaussian moments; the truncated velocity box costs a few 1e-4
    np.testing.assert_allclose(m.rho, -m.theta, atol=1e-3 * np.abs(m.theta).max())
    from knudsen.grid import spectral_derivative

    div = sum(spectral_derivative(m.u[:, [i]], small_grid, tuple(int(a == i) for a in range(2)))[:, 0] for i in range(2))
    assert np.abs(div).max() < 1e-12 * np.abs(m.u).max() * 10


def test_collision_bound_ratio_positive(small_grid, kernel):
    rng = np.random.default_rng(8)
    f = rng.normal(size=small_grid.shape) * small_grid.mu
    g = rng.normal(size=small_grid.shape) * small_grid.mu
    r = collision_bound_ratio(f, g, kernel, small_grid)
    assert 0 < r < 10


def test_evolve_config_validation():
    for bad in (EvolveConfig(epsilon=0.0), EvolveConfig(mode="x"), EvolveConfig(delta=0.7), EvolveConfig(record_stride=0)):
        with pytest.raises(ValueError):
            bad.validate()
