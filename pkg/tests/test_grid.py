from __future__ import annotations

import math

import numpy as np
import pytest

from knudsen.grid import (
    DistributionField,
    GridConfig,
    NormSpec,
    build_phase_grid,
    maxwellian,
    spectral_derivative,
    weighted_norm,
)

from oracles import gaussian_moment


def test_node_counts():
    g = build_phase_grid(GridConfig(n_x=16, n_v=16, v_max=6.0))
    assert g.shape == (256, 256)


@pytest.mark.parametrize("cfg", [GridConfig(n_x=4, n_v=8, v_max=5.0), GridConfig(spatial_dim=1, n_x=10, n_v=9, v_max=5.0)])
def test_unit_torus_weights(cfg):
    assert build_phase_grid(cfg).w_x.sum() == pytest.approx(1.0, abs=1e-14)


def test_mass_quadrature_fine_grid():
    g = build_phase_grid(GridConfig(n_x=4, n_v=32, v_max=8.0))
    assert abs(g.w_v @ maxwellian(g) - 1.0) < 1e-6


@pytest.mark.parametrize("bad", [GridConfig(n_x=7), GridConfig(v_max=3.0), GridConfig(n_v=4), GridConfig(spatial_dim=4)])
def test_rejected_grids(bad):
    with pytest.raises(ValueError):
        build_phase_grid(bad)


def test_maxwellian_at_origin():
    g = build_phase_grid(GridConfig(n_x=4, n_v=9, v_max=5.0))
    centre = np.argmin(g.speed2)
    assert g.speed2[centre] == 0.0
    assert maxwellian(g)[centre] == pytest.approx(1.0 / (2.0 * math.pi), rel=1e-14)


@pytest.mark.parametrize("k", [0, 2, 4])
def test_weighted_moments_match_gaussian_oracle(k):
    g = build_phase_grid(GridConfig(n_x=4, n_v=32, v_max=7.0))
    h = DistributionField.from_profile(maxwellian(g), g)
    assert weighted_norm(h, NormSpec(k=k)) == pytest.approx(gaussian_moment(2, k), rel=1e-8)


def test_second_moment_is_one_plus_d():
    g = build_phase_grid(GridConfig(n_x=4, n_v=32, v_max=7.0))
    assert g.w_v @ (g.bracket(2) * g.mu) == pytest.approx(1.0 + g.d, rel=1e-8)


def test_zero_field_norm(tiny_grid):
    for spec in (NormSpec(), NormSpec(p=2, q=2, k=3, alpha=1, beta=1), NormSpec(p=math.inf, q=math.inf)):
        assert weighted_norm(np.zeros(tiny_grid.shape), spec, tiny_grid) == 0.0


@pytest.mark.parametrize(
    "spec", [NormSpec(p=3), NormSpec(alpha=1, beta=0), NormSpec(alpha=2, beta=2), NormSpec(weight_kind="bogus")]
)
def test_rejected_norms(spec, tiny_grid):
    with pytest.raises(ValueError):
        weighted_norm(np.zeros(tiny_grid.shape), spec, tiny_grid)


@pytest.mark.parametrize("beta", [1, 2, 3])
def test_fourier_mode_derivative_scaling(beta):
    g = build_phase_grid(GridConfig(spatial_dim=1, n_x=16, n_v=9, v_max=5.0))
    n = 3
    h = np.outer(np.cos(2 * math.pi * n * g.x_nodes[:, 0]), g.mu)
    d = spectral_derivative(h, g, (beta,))
    ratio = np.abs(d).max() / np.abs(h).max()
    assert ratio == pytest.approx((2 * math.pi * n) ** beta, rel=1e-12)


def test_field_shape_and_finiteness(tiny_grid):
    with pytest.raises(ValueError):
        DistributionField(np.zeros((3, 3)), tiny_grid)
    bad = np.zeros(tiny_grid.shape)
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        DistributionField(bad, tiny_grid)


def test_velocity_derivative_of_linear_profile_is_exact(tiny_grid):
    h = np.broadcast_to(tiny_grid.v_nodes[:, 0], tiny_grid.shape)
    spec0 = NormSpec(p=1, q=1, k=0, alpha=0, beta=1)
    spec1 = NormSpec(p=1, q=1, k=0, alpha=1, beta=1)
    # the alpha=1 norm adds ||d_v1 h|| + ||d_v2 h|| = box volume * torus volume
    box = (2 * tiny_grid.config.v_max) ** 2
    extra = weighted_norm(h, spec1, tiny_grid) - weighted_norm(h, spec0, tiny_grid)
    assert extra == pytest.approx(box * tiny_grid.config.torus_period**2, rel=1e-12)
