from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.integrate import trapezoid

from knudsen.collision import (
    KernelConfig,
    collision_frequency_at,
    collision_operator,
    eval_nu,
    eval_Q,
    post_collision_velocities,
    sigma_quadrature,
    sphere_area,
)
from knudsen.grid import DistributionField, GridConfig, build_phase_grid

from oracles import mean_relative_speed_2d


def _invariant_residuals(q, grid, f):
    tests = [np.ones(grid.nv_total), grid.v_nodes[:, 0], grid.v_nodes[:, 1], grid.speed2]
    scale = (grid.w_v * (1 + grid.speed2)) @ np.abs(collision_operator(KernelConfig(), grid).loss(f, f)).T
    return np.array([np.abs(q @ (grid.w_v * t)) / scale for t in tests])


def test_post_collision_algebra():
    rng = np.random.default_rng(0)
    v, vs = rng.normal(size=(50, 3)), rng.normal(size=(50, 3))
    s = rng.normal(size=(50, 3))
    s /= np.linalg.norm(s, axis=1, keepdims=True)
    vp, vsp = post_collision_velocities(v, vs, s)
    np.testing.assert_allclose(vp + vsp, v + vs, atol=1e-14)
    np.testing.assert_allclose((vp**2).sum(1) + (vsp**2).sum(1), (v**2).sum(1) + (vs**2).sum(1), rtol=1e-13)


def test_post_collision_special_cases():
    v = np.array([[1.0, 2.0]])
    sig = np.array([[0.6, 0.8]])
    vp, vsp = post_collision_velocities(v, v, sig)
    np.testing.assert_allclose(vp, v)
    np.testing.assert_allclose(vsp, v)
    vs = np.array([[-2.0, 0.5]])
    s = (v - vs) / np.linalg.norm(v - vs)
    vp, vsp = post_collision_velocities(v, vs, s)
    np.testing.assert_allclose(vp, v, atol=1e-14)
    np.testing.assert_allclose(vsp, vs, atol=1e-14)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_sigma_quadrature_integrates_constants(d):
    q = sigma_quadrature(d, 16)
    assert q.weights.sum() == pytest.approx(sphere_area(d), rel=1e-12)
    assert q.half_weights.sum() == pytest.approx(sphere_area(d), rel=1e-12)


def test_nu_constant_for_maxwell_molecules():
    g = build_phase_grid(GridConfig(n_x=4, n_v=24, v_max=6.0))
    k = KernelConfig(gamma=0.0)
    nu = eval_nu(k, g).values
    np.testing.assert_allclose(nu, 1.0, rtol=1e-6)


def test_nu_at_origin_matches_mean_speed(grid24, kernel):
    val = collision_frequency_at(np.zeros((1, 2)), kernel, grid24)[0]
    assert val == pytest.approx(math.sqrt(math.pi / 2.0), rel=5e-3)


def test_nu_profile_matches_rice_oracle(grid24, kernel):
    nu = eval_nu(kernel, grid24).values
    inner = np.sqrt(grid24.speed2) <= 3.0
    ref = mean_relative_speed_2d(np.sqrt(grid24.speed2[inner]))
    np.testing.assert_allclose(nu[inner], ref, rtol=5e-3)


def test_nu_two_sided_bound(grid24, kernel):
    prof = eval_nu(kernel, grid24)
    ratio = prof.values / (1.0 + np.sqrt(grid24.speed2))
    assert prof.nu0 > 0
    assert np.all(ratio >= prof.nu0 - 1e-15) and np.all(ratio <= prof.nu1 + 1e-15)


def test_equilibrium_annihilated(grid24, kernel):
    mu = grid24.mu[None, :]
    q = eval_Q(mu, mu, kernel, grid24)
    loss = collision_operator(kernel, grid24).loss(mu, mu)
    assert np.abs(q) @ grid24.w_v < 1e-4 * (np.abs(loss) @ grid24.w_v)


def test_symmetry_and_bilinearity(tiny_grid, kernel):
    rng = np.random.default_rng(1)
    g = rng.normal(size=(2, tiny_grid.nv_total)) * tiny_grid.mu
    h = rng.normal(size=(2, tiny_grid.nv_total)) * tiny_grid.mu
    q_gh = eval_Q(g, h, kernel, tiny_grid)
    np.testing.assert_array_equal(q_gh, eval_Q(h, g, kernel, tiny_grid))
    np.testing.assert_allclose(eval_Q(3.0 * g, h, kernel, tiny_grid), 3.0 * q_gh, rtol=1e-12, atol=1e-16)


def test_direct_and_tensor_routes_agree(tiny_grid, kernel):
    rng = np.random.default_rng(2)
    g = rng.normal(size=(3, tiny_grid.nv_total)) * tiny_grid.mu
    h = rng.normal(size=(3, tiny_grid.nv_total)) * tiny_grid.mu
    direct = eval_Q(g, h, kernel, tiny_grid, method="direct")
    tensor = eval_Q(g, h, kernel, tiny_grid, method="tensor")
    np.testing.assert_allclose(tensor, direct, rtol=1e-10, atol=1e-14 * np.abs(direct).max())


def test_conservation_improves_with_refinement(grid24, grid32, kernel):
    res = []
    for g in (grid24, grid32):
        f = np.exp(-np.sum((g.v_nodes - [0.7, -0.4]) ** 2, axis=1) / 1.5)[None, :] + g.mu[None, :]
        res.append(_invariant_residuals(eval_Q(f, f, kernel, g), g, f).max())
    assert res[0] < 1e-4
    assert res[1] < res[0]


def test_grid_mismatch_rejected(grid24, tiny_grid, kernel):
    f = DistributionField.from_profile(tiny_grid.mu, tiny_grid)
    with pytest.raises(ValueError):
        eval_Q(f, f, kernel, grid24)
    with pytest.raises(ValueError):
        eval_Q(np.zeros(5), np.zeros(5), kernel, grid24)


def test_bump_angular_function_is_normalized():
    k = KernelConfig(b_name="bump", bump_center=0.3, bump_width=0.4)
    g = build_phase_grid(GridConfig(n_x=4, n_v=12, v_max=5.0))
    op = collision_operator(k, g)
    z = np.linspace(-1, 1, op.b_table.size)
    # integral of the even part over the circle: 2 * int_{-1}^{1} b(z) / sqrt(1-z^2) dz
    th = np.linspace(0, 2 * np.pi, 20001)
    vals = np.interp(np.cos(th), z, op.b_table)
    assert trapezoid(vals, th) == pytest.approx(1.0, rel=1e-3)


def test_kernel_config_validation():
    for bad in (KernelConfig(gamma=1.5), KernelConfig(b_name="nope"), KernelConfig(n_sigma=1)):
        with pytest.raises(ValueError):
            bad.validate()
