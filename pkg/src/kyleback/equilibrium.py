"""Equilibrium functionals built on the solved pricing surface.

With the surfaces (P, Γ, χ) in hand, the equilibrium state admits an
explicit transition density

    G(r,x; t,y) = ∂ξχ(t,y) · exp( γΓ(t,y) − γΓ(r,x)
                  − (χ(t,y) − χ(r,x))² / (2σ²(t−r)) ) / √(2πσ²(t−r)),

whose t = T slice is the terminal state density.  This module exposes that
kernel together with the objects read off from it: the market maker's
conditional distribution of the liquidation value, the insider's optimal
drift, price impact λ = ∂ξP/∂ξχ and market depth ζ = 1/λ with their time
drifts, the insider's expected utility

    −exp( ṽ²γ²σ²T/2 + γ(ṽ·χ(0,0) − Γ(0,0)) − γφ*(ṽ) ),

where φ* is the convex dual of the potential, the propagation kernel of a
past trade, and the Gaussian-belief closed form used as a benchmark.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson

from .errors import DegenerateDistributionError, SingularDriftError
from .fixed_point import Representation
from .numerics import MonotoneCurve, exp_quadratic_cell_masses
from .pde import ModelParams, PricingSurface
from .potential import ConvexPotential


def transition_density(surface: PricingSurface, r: float, x: float,
                       t: float, y):
    """Density of the state at time t given state x at time r (< t)."""
    if t <= r:
        raise ValueError("transition density needs r < t")
    p = surface.params
    gam = p.gamma
    y_arr = np.atleast_1d(np.asarray(y, dtype=float))
    chi_ty = np.interp(y_arr, surface.xi_grid, surface.row_at(surface.Chi, t))
    gamma_ty = np.interp(y_arr, surface.xi_grid,
                         surface.row_at(surface.Gamma, t))
    slope_ty = np.interp(y_arr, surface.xi_grid,
                         surface.row_at(surface.chi_slope, t))
    chi_rx = surface.chi_at(r, x)
    gamma_rx = surface.gamma_at(r, x)
    s2d = p.sigma ** 2 * (t - r)
    dev = chi_ty - chi_rx
    out = slope_ty * np.exp(gam * gamma_ty - gam * gamma_rx
                            - dev * dev / (2.0 * s2d)) \
        / math.sqrt(2.0 * math.pi * s2d)
    return float(out[0]) if np.ndim(y) == 0 else out


@dataclass
class ConditionalValueDistribution:
    """Market maker's posterior over the liquidation value given ξ_t = ξ."""

    t: float
    xi: float
    v_nodes: np.ndarray
    cdf_nodes: np.ndarray
    mean: float
    _curve: MonotoneCurve

    def cdf(self, v):
        return self._curve.evaluate(v)

    def quantile(self, u: float) -> float:
        lo, hi = self._curve.ys[0], self._curve.ys[-1]
        return self._curve.invert(min(max(float(u), lo), hi))

    def median(self) -> float:
        return self.quantile(0.5)

    def iqr(self) -> float:
        return self.quantile(0.75) - self.quantile(0.25)


def conditional_value_cdf(surface: PricingSurface, pot: ConvexPotential,
                          t: float, xi: float) -> ConditionalValueDistribution:
    """Posterior CDF of ṽ = g(ξ_T) given the time-t state.

    The terminal-state exponent is piecewise quadratic on the potential's
    grid with strictly negative cell curvature, so the per-cell mass is an
    exact erf difference; the value CDF then rides on the nodes v = g(ξ)
    with flat stretches of g collapsing to their last node.
    """
    p = surface.params
    if t >= p.T:
        raise DegenerateDistributionError(
            "at t = T the liquidation value is revealed; the conditional "
            "distribution is a point mass")
    s2e = p.sigma ** 2 * (p.T - t)
    center = surface.chi_at(t, xi)
    grid = pot.grid
    gam = p.gamma
    dev = center - grid
    expo = gam * pot.phi - dev * dev / (2.0 * s2e)
    expo = expo - expo.max()  # normalized away below
    slopes = np.diff(pot.g) / pot.h
    curv = 0.5 * (gam * slopes - 1.0 / s2e)
    beta = gam * pot.g[:-1] + dev[:-1] / s2e
    masses = exp_quadratic_cell_masses(pot.h, expo[:-1], beta, curv)
    total = masses.sum()
    if not np.isfinite(total) or total <= 0.0:
        raise DegenerateDistributionError(
            f"conditional mass degenerate at (t={t:.6g}, xi={xi:.6g})")
    cdf_y = np.concatenate(([0.0], np.cumsum(masses))) / total
    mean = float(((pot.g[:-1] + pot.g[1:]) * 0.5 * masses).sum() / total)

    v = pot.g
    keep = np.concatenate((v[1:] != v[:-1], [True]))
    xs = v[keep]
    ys = cdf_y[keep]
    if len(xs) < 2:
        raise DegenerateDistributionError(
            "price map is constant; value distribution is a point mass")
    curve = MonotoneCurve(xs, ys, extrapolation="clamp")
    return ConditionalValueDistribution(t=t, xi=xi, v_nodes=xs, cdf_nodes=ys,
                                        mean=mean, _curve=curve)


def _state_for_value(pot: ConvexPotential, v: float) -> float:
    """inverse of g with warning clamp at the attainable range edges."""
    lo, hi = pot.range_of_g()
    if v <= lo or v >= hi:
        if v < lo or v > hi:
            warnings.warn(
                f"value {v!r} outside attainable range [{lo:.6g}, {hi:.6g}]; "
                "clamping", RuntimeWarning, stacklevel=3)
        return float(pot.grid[0]) if v <= lo else float(pot.grid[-1])
    return pot.inverse_g(v)


def insider_drift(surface: PricingSurface, pot: ConvexPotential,
                  t: float, xi: float, v: float) -> float:
    """Optimal total-order drift θ = (g⁻¹(ṽ) − ξ) / (T − t)."""
    p = surface.params
    if t >= p.T:
        raise SingularDriftError("insider drift is singular at t = T")
    return (_state_for_value(pot, v) - xi) / (p.T - t)


def insider_drift_via_price(surface: PricingSurface, pot: ConvexPotential,
                            t: float, xi: float, v: float) -> float:
    """Same drift through the pricing surfaces:
    θ = −γσ²P(t,ξ) − (χ(t,ξ) − g⁻¹(ṽ)) / (T − t)."""
    p = surface.params
    if t >= p.T:
        raise SingularDriftError("insider drift is singular at t = T")
    x_v = _state_for_value(pot, v)
    return (-p.gamma * p.sigma ** 2 * surface.price(t, xi)
            - (surface.chi_at(t, xi) - x_v) / (p.T - t))


@dataclass
class EquilibriumReport:
    """Price impact λ, market depth ζ = 1/λ and their time drifts on the
    surface grid.  ``valid`` masks nodes where the depth quantities are
    finite (the impact vanishes wherever the price map is locally flat)."""

    t_grid: np.ndarray
    xi_grid: np.ndarray
    price_impact: np.ndarray
    depth: np.ndarray
    impact_drift: np.ndarray
    depth_drift: np.ndarray
    valid: np.ndarray


def impact_and_depth(surface: PricingSurface) -> EquilibriumReport:
    """Evaluate λ = R/∂ξχ, ζ = 1/λ and the closed-form drifts

        dλ drift = −γσ²λ²  (≤ 0),
        dζ drift = γσ² + γσ⁴(T−t)(∂ξR)²/(R²(∂ξχ)³) + σ²(∂ξR)²/((∂ξχ)²R³),

    each a sum of γσ² and squares, hence ≥ γσ² wherever defined.
    """
    p = surface.params
    tau = (p.T - surface.t_grid)[:, None]
    lam = surface.R / surface.chi_slope
    dR = np.gradient(surface.R, surface.h, axis=1)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        depth = 1.0 / lam
        impact_drift = -p.gamma * p.sigma ** 2 * lam * lam
        term_a = p.gamma * p.sigma ** 4 * tau * dR * dR \
            / (surface.R ** 2 * surface.chi_slope ** 3)
        term_b = p.sigma ** 2 * dR * dR \
            / (surface.chi_slope ** 2 * surface.R ** 3)
        depth_drift = p.gamma * p.sigma ** 2 + term_a + term_b
    valid = (surface.R > 0.0) & np.isfinite(depth_drift) & np.isfinite(depth)
    return EquilibriumReport(
        t_grid=surface.t_grid, xi_grid=surface.xi_grid, price_impact=lam,
        depth=depth, impact_drift=impact_drift, depth_drift=depth_drift,
        valid=valid)


def convex_dual(pot: ConvexPotential, v: float) -> float:
    """Legendre transform φ*(v) = v·g⁻¹(v) − φ(g⁻¹(v))."""
    x_v = _state_for_value(pot, v)
    return v * x_v - pot.eval_phi(x_v)


def expected_utility(pot: ConvexPotential, rep: Representation,
                     params: ModelParams, v: float) -> float:
    """Insider's expected exponential utility given liquidation value ṽ = v."""
    if params.gamma == 0.0:
        return -1.0
    gam = params.gamma
    expo = v * v * gam * gam * params.s2 / 2.0 \
        + gam * (v * rep.chi00 - rep.gamma00) - gam * convex_dual(pot, v)
    return -math.exp(expo)


def gaussian_benchmark(params: ModelParams, prior_mean: float,
                       prior_stdev: float):
    """Exact linear-equilibrium coefficients for a Gaussian belief:
    the price map is g(ξ) = λξ + m with

        λ = −γΣ²/2 + √(γ²Σ⁴/4 + Σ²/(σ²T)),   m = prior mean.
    """
    s2 = params.s2
    var = prior_stdev ** 2
    lam = -params.gamma * var / 2.0 \
        + math.sqrt(params.gamma ** 2 * var * var / 4.0 + var / s2)
    return lam, prior_mean


def impact_kernel(surface: PricingSurface, times: np.ndarray,
                  states: np.ndarray, i_r: int, i_t: int) -> float:
    """Propagation weight of a trade at sample time r onto the price at t:

        K(r,t) = (1/∂ξχ(t,ξ_t)) · exp( ∫ᵣᵗ γσ² λ(s,ξ_s) ds )

    along a sampled state path; r and t are given as sample indices.
    """
    if i_r > i_t:
        raise ValueError("impact kernel needs r <= t")
    p = surface.params
    denom_t = surface.chi_slope_at(float(times[i_t]), float(states[i_t]))
    if i_r == i_t:
        return 1.0 / denom_t
    seg_t = np.asarray(times[i_r:i_t + 1], dtype=float)
    seg_x = np.asarray(states[i_r:i_t + 1], dtype=float)
    lam = np.empty(len(seg_t))
    for j, (ts, xs) in enumerate(zip(seg_t, seg_x)):
        r_val = surface.slope_at(ts, xs)
        lam[j] = r_val / (1.0 - p.gamma * p.sigma ** 2 * (p.T - ts) * r_val)
    integral = simpson(p.gamma * p.sigma ** 2 * lam, x=seg_t)
    return math.exp(integral) / denom_t
