"""Optimal-transport fixed point for the insider's terminal price map.

An admissible price map g (nondecreasing, slope ≤ l_cap) induces, through the
stochastic representation of the pricing system, a terminal state density

    f(y) = (2πσ²T)^(-1/2) exp( γφ(y) − γΓ(0,0) − (χ(0,0) − y)² / (2σ²T) ),

where φ is the antiderivative of g and the constants (χ(0,0), Γ(0,0)) come
from the strictly convex scalar function

    G(z) = E[ exp( z²/(2σ²T) + γ φ(z + σ B_T) ) ],
    χ(0,0) = argmin G,   Γ(0,0) = ln G(χ00)/γ − χ00²/(2σ²Tγ),

with the risk-neutral limit χ(0,0) = 0, Γ(0,0) = E[φ(σ B_T)].  Equilibrium
requires g to push f forward to the belief ν, i.e. g = F_ν⁻¹ ∘ F_f, the
monotone (Brenier) transport map.  The fixed point is found by damped Picard
iteration started from g ≡ 0, with the update residual weighted by the
standard normal density of ξ/(σ√T) so that far-tail discrepancies, which the
transport cannot see, do not dominate.

Requires γ·l_cap·σ²T < 1/2 so that G is strongly convex.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .beliefs import CDF_CLAMP, BeliefDistribution, slope_budget
from .errors import BudgetError, ConvergenceError, GridCoverageError
from .numerics import (MonotoneCurve, QuadratureRule, exp_quadratic_cell_masses,
                       gauss_hermite_rule, minimize_convex_1d)
from .pde import ModelParams
from .potential import (ConvexPotential, save_potential_csv, uniform_grid,
                        zero_potential)

logger = logging.getLogger(__name__)

RENORM_WARN = 1e-4    # terminal density trapezoid mass drift worth logging
RENORM_FAIL = 1e-3    # ... and the point where the grid is too narrow
DIVERGENCE_RUN = 5    # consecutive residual increases treated as divergence
TAIL_TRUST = 1e-10    # tail mass below which quantiles are ill-conditioned


def params_for_belief(nu: BeliefDistribution, T: float = 1.0,
                      sigma: float = 0.5, gamma: float = 0.1) -> ModelParams:
    """Model constants with the slope cap implied by the belief."""
    l_cap = slope_budget(nu, sigma, T, gamma)
    return ModelParams(T=T, sigma=sigma, gamma=gamma, l_cap=l_cap)


@dataclass(frozen=True)
class Representation:
    """Constants (χ(0,0), Γ(0,0)) of the stochastic representation, plus the
    attained minimum of G and the gradient left by the minimizer."""

    chi00: float
    gamma00: float
    g_min: float
    grad_norm: float


def eval_G_and_derivatives(pot: ConvexPotential, params: ModelParams,
                           z: float, rule: QuadratureRule):
    """(G, G', G'') at a scalar argument, one quadrature pass.

    G''(z) ≥ G(z)/(σ²T) > 0, so the minimizer bracket always closes.
    """
    s2 = params.s2
    pts = z + params.sigma * math.sqrt(params.T) * rule.nodes
    expo = z * z / (2.0 * s2) + params.gamma * pot.eval_phi(pts)
    e = np.exp(expo)
    if not np.all(np.isfinite(e)):
        raise BudgetError(
            "representation integrand overflows; the slope budget "
            "gamma*l_cap*sigma^2*T is too close to 1/2")
    psi1 = z / s2 + params.gamma * pot.eval_g(pts)
    psi2 = 1.0 / s2 + params.gamma * pot.eval_g_slope(pts)
    w = rule.weights
    big_g = float(w @ e)
    d1 = float(w @ (psi1 * e))
    d2 = float(w @ ((psi1 * psi1 + psi2) * e))
    return big_g, d1, d2


def solve_representation(pot: ConvexPotential, params: ModelParams,
                         rule: QuadratureRule | None = None) -> Representation:
    """Minimize G to recover (χ(0,0), Γ(0,0)) for the given price map."""
    rule = rule if rule is not None else gauss_hermite_rule()
    if params.gamma == 0.0:
        pts = params.sigma * math.sqrt(params.T) * rule.nodes
        gamma00 = float(rule.weights @ pot.eval_phi(pts))
        return Representation(chi00=0.0, gamma00=gamma00, g_min=1.0,
                              grad_norm=0.0)
    if params.gamma * params.l_cap * params.s2 >= 0.5:
        raise BudgetError(
            f"gamma*l_cap*sigma^2*T = {params.gamma * params.l_cap * params.s2:.6g}"
            " >= 1/2: the scalar representation is not integrable")

    def value(z):
        return eval_G_and_derivatives(pot, params, z, rule)[0]

    def deriv(z):
        return eval_G_and_derivatives(pot, params, z, rule)[1]

    init = -params.gamma * params.s2 * pot.eval_g(0.0)
    chi00, g_min = minimize_convex_1d(value, deriv, init=init)
    gamma00 = math.log(g_min) / params.gamma \
        - chi00 * chi00 / (2.0 * params.s2 * params.gamma)
    return Representation(chi00=chi00, gamma00=gamma00, g_min=g_min,
                          grad_norm=abs(deriv(chi00)))


@dataclass
class TerminalDensity:
    """Terminal state density f and its exact piecewise-erf CDF.

    ``renorm`` records the trapezoid mass of the raw density before
    normalization; drift from 1 measures grid truncation plus quadrature
    error in Γ(0,0).
    """

    grid: np.ndarray
    density: np.ndarray
    cdf_curve: MonotoneCurve
    renorm: float
    cell_masses: np.ndarray = field(repr=False, default=None)

    def cdf(self, x):
        return self.cdf_curve.evaluate(x)

    def quantile(self, u: float) -> float:
        u = min(max(float(u), CDF_CLAMP), 1.0 - CDF_CLAMP)
        lo, hi = self.cdf_curve.ys[0], self.cdf_curve.ys[-1]
        return self.cdf_curve.invert(min(max(u, lo), hi))


def terminal_density(pot: ConvexPotential, rep: Representation,
                     params: ModelParams) -> TerminalDensity:
    """Evaluate f on the potential's grid and integrate it exactly per cell.

    The cell exponent is quadratic with curvature (γ·slope − 1/σ²T)/2, which
    the slope budget keeps strictly negative, so each cell mass is an erf
    difference rather than a quadrature.
    """
    xi = pot.grid
    s2 = params.s2
    gam = params.gamma
    dev = rep.chi00 - xi
    ln_f = gam * pot.phi - gam * rep.gamma00 - dev * dev / (2.0 * s2) \
        - 0.5 * math.log(2.0 * math.pi * s2)
    f_raw = np.exp(ln_f)
    if not np.all(np.isfinite(f_raw)):
        raise GridCoverageError("terminal density overflows on the grid")
    z_mass = float(np.trapezoid(f_raw, xi))
    if abs(z_mass - 1.0) > RENORM_FAIL:
        raise GridCoverageError(
            f"terminal density mass {z_mass:.6g} is off by more than "
            f"{RENORM_FAIL:g}; widen the state grid")
    if abs(z_mass - 1.0) > RENORM_WARN:
        logger.warning("terminal density mass drift %.3g", z_mass - 1.0)
    f = f_raw / z_mass

    slopes = np.diff(pot.g) / pot.h
    curv = 0.5 * (gam * slopes - 1.0 / s2)
    alpha = ln_f[:-1] - math.log(z_mass)
    beta = gam * pot.g[:-1] + dev[:-1] / s2
    masses = exp_quadratic_cell_masses(pot.h, alpha, beta, curv)
    cdf_nodes = np.concatenate(([0.0], np.cumsum(masses)))
    total = cdf_nodes[-1]
    if abs(total - 1.0) > RENORM_FAIL:
        raise GridCoverageError(
            f"cell masses sum to {total:.6g}; widen the state grid")
    cdf_nodes /= total
    curve = MonotoneCurve(xi, cdf_nodes, extrapolation="clamp")
    return TerminalDensity(grid=xi, density=f, cdf_curve=curve,
                           renorm=z_mass, cell_masses=masses)


def brenier_update(density: TerminalDensity, nu: BeliefDistribution,
                   l_cap: float, budget: float) -> ConvexPotential:
    """Monotone transport map of the terminal density onto the belief,
    tabulated on the density's grid.

    Beyond the nodes holding less than TAIL_TRUST of tail mass the quantile
    is ill-conditioned (and pinned by the CDF clamp, which would leave a
    slope kink), so the map continues linearly with the edge slope there,
    clipped into the belief's support.  The affected region carries
    negligible terminal mass, so the equilibrium itself is unchanged.
    """
    u_raw = density.cdf_curve.ys
    inner = (u_raw > TAIL_TRUST) & (u_raw < 1.0 - TAIL_TRUST)
    if np.count_nonzero(inner) < 2:
        raise GridCoverageError(
            "terminal CDF has fewer than two well-conditioned nodes; "
            "widen the state grid")
    i_lo = int(np.argmax(inner))
    i_hi = len(u_raw) - 1 - int(np.argmax(inner[::-1]))
    x = density.grid
    g_new = np.empty_like(x)
    core = slice(i_lo, i_hi + 1)
    u = np.clip(u_raw[core], CDF_CLAMP, 1.0 - CDF_CLAMP)
    g_new[core] = np.asarray(nu.quantile(u), dtype=float)
    lo, hi = nu.support
    if i_lo > 0:
        s = (g_new[i_lo + 1] - g_new[i_lo]) / (x[i_lo + 1] - x[i_lo])
        g_new[:i_lo] = np.clip(
            g_new[i_lo] + s * (x[:i_lo] - x[i_lo]), lo, hi)
    if i_hi < len(x) - 1:
        s = (g_new[i_hi] - g_new[i_hi - 1]) / (x[i_hi] - x[i_hi - 1])
        g_new[i_hi + 1:] = np.clip(
            g_new[i_hi] + s * (x[i_hi + 1:] - x[i_hi]), lo, hi)
    return ConvexPotential(grid=x, g=g_new, l_cap=l_cap, budget=budget)


def _weighted_residual(delta: np.ndarray, xi: np.ndarray, s2: float) -> float:
    w = np.exp(-xi * xi / (2.0 * s2)) / math.sqrt(2.0 * math.pi)
    return float(np.abs(delta * w).max())


@dataclass
class FixedPointResult:
    potential: ConvexPotential
    representation: Representation
    mu_density: TerminalDensity
    residuals: np.ndarray
    renorm_factors: np.ndarray
    iterations: int
    converged: bool
    params: ModelParams


def picard_solve(nu: BeliefDistribution, params: ModelParams,
                 tol: float = 1e-6, max_iter: int = 200,
                 damping: float = 1.0, n_nodes: int = 2049,
                 grid_halfwidth: float | None = None,
                 rule: QuadratureRule | None = None,
                 checkpoint_dir: str | None = None) -> FixedPointResult:
    """Damped Picard iteration g ↦ F_ν⁻¹ ∘ F_f(g) started from g ≡ 0.

    Convergence is declared when the weighted sup-norm of the update falls
    below ``tol``; the returned triple (potential, representation, density)
    is internally consistent, i.e. the density belongs to the returned
    potential.  Five consecutive residual increases raise ConvergenceError,
    and a candidate breaching the slope cap is checkpointed (when a directory
    is given) before BudgetError propagates.
    """
    if not 0.0 < damping <= 1.0:
        raise ValueError("damping must be in (0, 1]")
    halfwidth = (8.0 * params.sigma * math.sqrt(params.T)
                 if grid_halfwidth is None else float(grid_halfwidth))
    grid = uniform_grid(halfwidth, n_nodes)
    rule = rule if rule is not None else gauss_hermite_rule()
    budget = params.gamma * params.sigma ** 2 * params.T
    if params.gamma > 0.0 and budget * params.l_cap >= 0.5:
        raise BudgetError(
            f"gamma*l_cap*sigma^2*T = {budget * params.l_cap:.6g} >= 1/2: "
            "the fixed-point map is outside its convergence regime")

    current = zero_potential(grid, params.l_cap, budget)
    residuals: list[float] = []
    renorms: list[float] = []
    rep = None
    dens = None
    converged = False
    prev = math.inf
    growth = 0
    for _ in range(max_iter):
        rep = solve_representation(current, params, rule)
        dens = terminal_density(current, rep, params)
        try:
            update = brenier_update(dens, nu, params.l_cap, budget)
        except BudgetError:
            if checkpoint_dir is not None:
                os.makedirs(checkpoint_dir, exist_ok=True)
                u = np.clip(dens.cdf_curve.ys, CDF_CLAMP, 1.0 - CDF_CLAMP)
                raw = np.asarray(nu.quantile(u), dtype=float)
                path = os.path.join(checkpoint_dir, "g_breach.csv")
                np.savetxt(path, np.column_stack([grid, raw]), delimiter=",",
                           header="xi,g", comments="", fmt="%.12e")
                logger.error("slope cap breached; candidate saved to %s", path)
            raise
        resid = _weighted_residual(update.g - current.g, grid, params.s2)
        residuals.append(resid)
        renorms.append(dens.renorm)
        if resid <= tol:
            converged = True
            break
        if resid > prev:
            growth += 1
            if growth >= DIVERGENCE_RUN:
                raise ConvergenceError(
                    f"residual grew {DIVERGENCE_RUN} iterations in a row "
                    f"(last {resid:.3g}); lower the damping factor")
        else:
            growth = 0
        prev = resid
        # a convex combination of slope-capped maps is itself capped
        blended = (1.0 - damping) * current.g + damping * update.g
        current = ConvexPotential(grid=grid, g=blended,
                                  l_cap=params.l_cap, budget=budget)

    return FixedPointResult(
        potential=current, representation=rep, mu_density=dens,
        residuals=np.asarray(residuals), renorm_factors=np.asarray(renorms),
        iterations=len(residuals), converged=converged, params=params)


def save_fixed_point_csvs(result: FixedPointResult, out_dir: str) -> None:
    """g_star.csv, residuals.csv and mu_density.csv for a solved fixed point."""
    os.makedirs(out_dir, exist_ok=True)
    save_potential_csv(result.potential, os.path.join(out_dir, "g_star.csv"))
    hist = np.column_stack([
        np.arange(1, result.iterations + 1, dtype=float),
        result.residuals, result.renorm_factors])
    np.savetxt(os.path.join(out_dir, "residuals.csv"), hist, delimiter=",",
               header="iteration,residual,mass", comments="", fmt="%.12e")
    dens = result.mu_density
    np.savetxt(os.path.join(out_dir, "mu_density.csv"),
               np.column_stack([dens.grid, dens.density, dens.cdf_curve.ys]),
               delimiter=",", header="xi,density,cdf", comments="",
               fmt="%.12e")
