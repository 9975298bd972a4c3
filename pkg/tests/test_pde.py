"""Backward slope PDE and surface assembly.

Oracles: the risk-neutral equation is the plain backward heat equation, so a
Gaussian bump evolves with variance 1 + sigma^2 (T - t); the linear price map
has closed-form P, chi and Gamma surfaces; constants are preserved exactly.
"""

import math

import numpy as np
import pytest
from scipy.stats import norm

import kyleback as kb
from kyleback.errors import AssemblyError, BudgetError
from kyleback.pde import (
    RSolution,
    _nonuniform_dt,
    check_system_residual,
    martingale_generator_residual,
    refined_time_grid,
    save_surface_field_csv,
    solve_R_data,
)


class TestTimeGrid:
    def test_endpoints_and_monotone(self):
        t = refined_time_grid(2.0, 128, 1e-4)
        assert t[0] == 0.0
        assert t[-1] == 2.0
        assert np.all(np.diff(t) > 0.0)

    def test_last_step_matches_fraction(self):
        t = refined_time_grid(1.0, 512, 1.0 / 8192.0)
        assert (t[-1] - t[-2]) == pytest.approx(1.0 / 8192.0, rel=1e-9)

    def test_validation(self):
        with pytest.raises(ValueError):
            refined_time_grid(1.0, 1)
        with pytest.raises(ValueError):
            refined_time_grid(1.0, 512, 0.5)
        with pytest.raises(ValueError):
            refined_time_grid(1.0, 512, -1e-4)


class TestModelParams:
    def test_properties(self):
        p = kb.ModelParams(T=2.0, sigma=0.5, gamma=0.1, l_cap=1.5)
        assert p.s2 == pytest.approx(0.5)
        assert p.budget == pytest.approx(0.1 * 0.5 * 1.5)

    @pytest.mark.parametrize("kwargs", [
        dict(T=0.0, sigma=0.5, gamma=0.1, l_cap=1.0),
        dict(T=1.0, sigma=0.0, gamma=0.1, l_cap=1.0),
        dict(T=1.0, sigma=0.5, gamma=-0.1, l_cap=1.0),
        dict(T=1.0, sigma=0.5, gamma=0.1, l_cap=0.0),
    ])
    def test_field_validation(self, kwargs):
        with pytest.raises(ValueError):
            kb.ModelParams(**kwargs)

    def test_budget_gate(self):
        with pytest.raises(BudgetError, match="budget"):
            kb.ModelParams(T=1.0, sigma=0.5, gamma=1.2, l_cap=4.0)


def test_heat_kernel_bump():
    # gamma = 0 reduces the slope equation to the backward heat equation
    params = kb.ModelParams(T=1.0, sigma=0.5, gamma=0.0, l_cap=1.0)
    grid = np.linspace(-6.0, 6.0, 1537)
    t_grid = refined_time_grid(1.0, 512)
    rsol = solve_R_data(norm.pdf(grid), params, t_grid, grid[1] - grid[0])
    assert not rsol.floor_activated
    for k in [0, 64, 256, 511]:
        var = 1.0 + 0.25 * (1.0 - t_grid[k])
        oracle = np.exp(-grid ** 2 / (2.0 * var)) \
            / math.sqrt(2.0 * math.pi * var)
        assert np.max(np.abs(rsol.values[k] - oracle)) <= 1e-6


def test_constant_slope_preserved():
    params = kb.ModelParams(T=1.0, sigma=0.5, gamma=0.1, l_cap=2.0)
    grid = np.linspace(-4.0, 4.0, 513)
    t_grid = refined_time_grid(1.0, 256)
    rsol = solve_R_data(np.full_like(grid, 1.3), params, t_grid,
                        grid[1] - grid[0])
    assert np.max(np.abs(rsol.values - 1.3)) <= 1e-12


def test_solver_respects_data_range(uniform_build):
    rsol = uniform_build.rsol
    data = rsol.values[-1]
    assert rsol.values.min() >= data.min() - 1e-12
    assert rsol.values.max() <= data.max() + 1e-12
    assert not rsol.floor_activated


def test_linear_surfaces_closed_form(linear_build):
    lb = linear_build
    s = lb.surface
    p = lb.params
    lam, m = lb.lam, lb.m
    tau = (p.T - s.t_grid)[:, None]
    xi = s.xi_grid[None, :]
    den = 1.0 - p.gamma * p.sigma ** 2 * lam * tau
    P_ref = lam * xi + m
    chi_ref = den * xi - p.gamma * p.sigma ** 2 * tau * m
    gamma_ref = 0.5 * lam * den * xi ** 2 + m * den * xi \
        - 0.5 * p.gamma * p.sigma ** 2 * tau * m ** 2 \
        - np.log(den) / (2.0 * p.gamma)
    assert np.max(np.abs(s.P - (P_ref + 0 * tau))) <= 1e-10
    assert np.max(np.abs(s.Chi - chi_ref)) <= 1e-12
    assert np.max(np.abs(s.Gamma - gamma_ref)) <= 1e-8


def test_terminal_slices_exact(uniform_build):
    s = uniform_build.surface
    pot = uniform_build.pot
    assert np.array_equal(s.P[-1], pot.g)
    assert np.array_equal(s.Chi[-1], pot.grid)
    assert np.array_equal(s.Gamma[-1], pot.phi)


def test_anchor_holds_exactly(uniform_build):
    ub = uniform_build
    s = ub.surface
    assert abs(s.Chi[0, s.i0] - ub.rep.chi00) <= 1e-12
    assert abs(s.Gamma[0, s.i0] - ub.gamma00_eff) <= 1e-12


def test_assembly_rejects_bad_slope_field(uniform_build):
    ub = uniform_build
    bad = RSolution(t_grid=ub.rsol.t_grid, values=ub.rsol.values * 1.2,
                    floor_activated=False, halvings=0)
    with pytest.raises(AssemblyError, match="outside"):
        kb.assemble_surfaces(bad, ub.pot, ub.params)


def test_system_residuals_small(uniform_build):
    res_gamma, res_chi = check_system_residual(uniform_build.surface)
    assert res_gamma <= 5e-4   # measured 4.2e-5
    assert res_chi <= 5e-5     # measured 1.0e-6
    assert uniform_build.surface.identity_residual <= 5e-4


def test_price_generator_residual(uniform_build):
    assert martingale_generator_residual(uniform_build.surface) <= 1e-3


def test_chi_slope_identity(uniform_build):
    s = uniform_build.surface
    p = s.params
    tau = p.T - s.t_grid
    ref = 1.0 - p.gamma * p.sigma ** 2 * tau[:, None] * s.R
    assert np.max(np.abs(s.chi_slope - ref)) <= 1e-15
    assert np.all(s.chi_slope <= 1.0 + 1e-9)
    assert np.all(s.chi_slope >= 1.0 - p.budget - 1e-9)


class TestSurfaceInterpolation:
    def test_rows_at_grid_times_bitwise(self, uniform_build):
        s = uniform_build.surface
        for k in [0, 17, len(s.t_grid) - 1]:
            assert np.array_equal(s.row_at(s.P, s.t_grid[k]), s.P[k])

    def test_linear_between_rows(self, uniform_build):
        s = uniform_build.surface
        t = 0.5 * (s.t_grid[3] + s.t_grid[4])
        mid = s.row_at(s.Gamma, t)
        assert np.allclose(mid, 0.5 * (s.Gamma[3] + s.Gamma[4]), atol=1e-13)

    def test_value_at_nodes(self, uniform_build):
        s = uniform_build.surface
        j = s.i0 + 11
        assert s.price(s.t_grid[5], s.xi_grid[j]) == s.P[5, j]

    def test_time_out_of_range(self, uniform_build):
        s = uniform_build.surface
        with pytest.raises(ValueError):
            s.price(-0.1, 0.0)
        with pytest.raises(ValueError):
            s.price(1.1, 0.0)


def test_save_surface_field_csv(tmp_path, uniform_build):
    s = uniform_build.surface
    path = tmp_path / "P.csv"
    save_surface_field_csv(s, "P", path, stride_t=8, stride_xi=8)
    with open(path) as fh:
        assert fh.readline().strip() == "t,xi,value"
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    assert data[:, 0].max() == pytest.approx(s.t_grid[-1])
    assert data[:, 1].max() == pytest.approx(s.xi_grid[-1])
    # last row of the dump is the bottom-right corner of the field
    assert data[-1, 2] == pytest.approx(s.P[-1, -1], rel=1e-11)


def test_time_derivative_exact_for_quadratics():
    t = refined_time_grid(1.0, 32)
    coef = np.array([[3.0, -2.0, 1.0], [0.5, 0.0, -1.0]]).T  # (3, 2)
    arr = coef[0] * t[:, None] ** 2 + coef[1] * t[:, None] + coef[2]
    ref = 2.0 * coef[0] * t[1:-1, None] + coef[1]
    assert np.max(np.abs(_nonuniform_dt(arr, t) - ref)) <= 1e-10
