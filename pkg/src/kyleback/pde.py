"""Backward quasilinear PDE for the price slope and surface assembly.

The price P(t,ξ), its slope R = ∂ξP, the state map χ and the value function
core Γ satisfy, under risk aversion γ and noise volatility σ,

    ∂tR + ∂ξ( σ² ∂ξR / (2 (1 − γσ²(T−t)R)²) ) = 0,       R(T,·) = ∂ξξφ,
    χ(t,ξ) = ξ − γσ²(T−t) P(t,ξ),
    Γ(t,ξ) = Ã(t) + ∫₀^ξ P(t,r) dr − (γσ²(T−t)/2) P(t,ξ)²,

with P recovered from R through the center-line integrals

    A(t) = ∫ₜᵀ σ² ∂ξR(s,0) / (2 (1 − γσ²(T−s)R(s,0))²) ds,
    Ã(t) = ∫ₜᵀ σ² R(s,0) / (2 (1 − γσ²(T−s)R(s,0))) ds,
    P(t,ξ) = ∂ξφ(0) + A(t) + ∫₀^ξ R(t,r) dr.

The solver marches R in divergence form with a semi-implicit Crank-Nicolson
scheme (nonlinear coefficient lagged, two sweeps per step, implicit-Euler
startup substeps to damp data kinks) on a time grid geometrically refined
toward T.  The diffusion denominator is floored at (1 − γσ²T·l_cap)/2, a
penalization that never activates for admissible data and is logged if it
does.  Bounds 0 ≤ R ≤ l_cap and the comparison principle (R stays inside the
range of its final data) are monitored each step; violations trigger step
halving and, past a cap, an error.

Assembly uses the trapezoid-equivalent form
P(t,ξ) = ∂ξφ(ξ) + A(t) + ∫₀^ξ (R(t,r) − R(T,r)) dr, which makes the final
slice exact: P(T,·) = ∂ξφ, χ(T,·) = id and Γ(T,·) = φ bitwise.  When a
representation anchor (χ(0,0), Γ(0,0)) is supplied, the A and Ã integrals
are corrected by distributing the endpoint discrepancy linearly in T−t, so
both anchors hold exactly at t=0 while the final slice stays exact.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .errors import AssemblyError, BudgetError, StabilityError
from .potential import ConvexPotential, center_index, integrate_from_center

logger = logging.getLogger(__name__)

IDENTITY_RESIDUAL_TOL = 5e-4   # sup-norm gate on P = ∂ξΓ/∂ξχ at assembly
BOUND_SLACK = 1e-9             # roundoff slack on R and ∂ξχ bounds
DEFAULT_T_STEPS = 512
DEFAULT_LAST_STEP_FRACTION = 1.0 / 8192.0


@dataclass(frozen=True)
class ModelParams:
    """Market constants: horizon T, noise volatility σ, risk aversion γ,
    and the admissible Lipschitz cap l_cap for price-map slopes."""

    T: float
    sigma: float
    gamma: float
    l_cap: float

    def __post_init__(self) -> None:
        if self.T <= 0.0:
            raise ValueError("T must be positive")
        if self.sigma <= 0.0:
            raise ValueError("sigma must be positive")
        if self.gamma < 0.0:
            raise ValueError("gamma must be nonnegative")
        if self.l_cap <= 0.0:
            raise ValueError("l_cap must be positive")
        budget = self.gamma * self.sigma ** 2 * self.T * self.l_cap
        if budget >= 1.0:
            raise BudgetError(
                f"slope budget gamma*sigma^2*T*l_cap = {budget:.6g} >= 1: "
                "the pricing map degenerates; decrease gamma, sigma, T or l_cap")

    @property
    def s2(self) -> float:
        """Terminal noise variance σ²T."""
        return self.sigma ** 2 * self.T

    @property
    def budget(self) -> float:
        return self.gamma * self.sigma ** 2 * self.T * self.l_cap


def refined_time_grid(horizon: float, n_steps: int,
                      last_step_fraction: float = DEFAULT_LAST_STEP_FRACTION
                      ) -> np.ndarray:
    """Time grid on [0, T], geometrically refined toward T.

    t_k = T·(1 − (1 − k/n)^p) with p chosen so the last step is
    T·last_step_fraction.
    """
    if n_steps < 2:
        raise ValueError("need at least 2 steps")
    if not 0.0 < last_step_fraction <= 1.0 / n_steps:
        raise ValueError("last_step_fraction must be in (0, 1/n_steps]")
    p = math.log(1.0 / last_step_fraction) / math.log(n_steps)
    k = np.arange(n_steps + 1, dtype=float)
    t = horizon * (1.0 - (1.0 - k / n_steps) ** p)
    t[0] = 0.0
    t[-1] = horizon
    if np.any(np.diff(t) <= 0.0):
        raise ValueError("degenerate time grid; reduce refinement")
    return t


@dataclass
class RSolution:
    """Solved price-slope field R(t,ξ) on its time grid."""

    t_grid: np.ndarray
    values: np.ndarray  # shape (len(t_grid), n_xi), row k at time t_k
    floor_activated: bool = False
    halvings: int = 0


class _Stepper:
    """One conservative IMEX step of the forward (τ = T−t) diffusion."""

    def __init__(self, params: ModelParams, h: float, n: int):
        self.params = params
        self.h = h
        self.n = n
        self.floor = 0.5 * (1.0 - params.budget)
        self.floor_hit = False

    def _face_diffusion(self, r_mid: np.ndarray, tau_mid: float) -> np.ndarray:
        p = self.params
        r_face = 0.5 * (r_mid[:-1] + r_mid[1:])
        denom = 1.0 - p.gamma * p.sigma ** 2 * tau_mid * r_face
        low = denom < self.floor
        if np.any(low):
            self.floor_hit = True
            denom = np.maximum(denom, self.floor)
        return p.sigma ** 2 / (2.0 * denom * denom)

    def _apply(self, diff: np.ndarray, r: np.ndarray) -> np.ndarray:
        flux = diff * (r[1:] - r[:-1])  # zero flux beyond both boundaries
        out = np.empty_like(r)
        out[0] = flux[0]
        out[-1] = -flux[-1]
        out[1:-1] = flux[1:] - flux[:-1]
        return out / self.h ** 2

    def step(self, r: np.ndarray, tau_a: float, tau_b: float,
             theta: float, sweeps: int = 2) -> np.ndarray:
        dt = tau_b - tau_a
        tau_mid = 0.5 * (tau_a + tau_b)
        r_mid = r
        r_new = r
        for _ in range(sweeps):
            diff = self._face_diffusion(r_mid, tau_mid)
            rhs = r + (1.0 - theta) * dt * self._apply(diff, r)
            c = theta * dt / self.h ** 2
            lower = np.zeros(self.n)
            upper = np.zeros(self.n)
            upper[1:] = -c * diff
            lower[:-1] = -c * diff
            diag = np.ones(self.n)
            diag[:-1] += c * diff
            diag[1:] += c * diff
            ab = np.vstack([upper, diag, lower])
            r_new = solve_banded((1, 1), ab, rhs)
            r_mid = 0.5 * (r + r_new)
        return r_new


def solve_R_data(final_data: np.ndarray, params: ModelParams,
                 t_grid: np.ndarray, h: float,
                 startup_steps: int = 2, max_halvings: int = 2048) -> RSolution:
    """March the divergence-form equation backward from R(T,·) = final_data.

    ``final_data`` must already lie in [0, l_cap].  Range violations beyond
    roundoff trigger recursive step halving; exceeding ``max_halvings`` raises.
    """
    n = len(final_data)
    m = len(t_grid) - 1
    data_min = float(final_data.min())
    data_max = float(final_data.max())
    otol = 1e-9 * max(1.0, data_max)
    stepper = _Stepper(params, h, n)
    taus = params.T - t_grid[::-1]  # 0 = τ_0 < ... < τ_m = T, small steps first
    values = np.empty((m + 1, n))
    values[m] = final_data
    halvings = 0

    def advance(r, tau_a, tau_b, theta, depth):
        nonlocal halvings
        out = stepper.step(r, tau_a, tau_b, theta)
        overshoot = max(out.max() - data_max, data_min - out.min(), 0.0)
        if overshoot <= otol:
            return np.clip(out, data_min, data_max)
        if depth >= 24 or halvings >= max_halvings:
            raise StabilityError(
                f"time step [{tau_a:.6g}, {tau_b:.6g}] still overshoots "
                f"({overshoot:.3g}) after halving cap")
        halvings += 1
        mid = 0.5 * (tau_a + tau_b)
        half = advance(r, tau_a, mid, theta, depth + 1)
        return advance(half, mid, tau_b, theta, depth + 1)

    r = final_data.astype(float).copy()
    for j in range(m):
        tau_a, tau_b = taus[j], taus[j + 1]
        if j < startup_steps:
            # implicit-Euler substeps damp ringing from kinked final data
            mid = 0.5 * (tau_a + tau_b)
            r = advance(r, tau_a, mid, 1.0, 0)
            r = advance(r, mid, tau_b, 1.0, 0)
        else:
            r = advance(r, tau_a, tau_b, 0.5, 0)
        values[m - (j + 1)] = r

    if stepper.floor_hit:
        logger.warning("diffusion denominator floor activated: the slope "
                       "budget is effectively binding")
    return RSolution(t_grid=np.asarray(t_grid, dtype=float), values=values,
                     floor_activated=stepper.floor_hit, halvings=halvings)


def solve_R(pot: ConvexPotential, params: ModelParams,
            t_steps: int = DEFAULT_T_STEPS,
            last_step_fraction: float = DEFAULT_LAST_STEP_FRACTION
            ) -> RSolution:
    """Solve for R(t,ξ) from the potential's curvature final condition."""
    t_grid = refined_time_grid(params.T, t_steps, last_step_fraction)
    data = np.clip(pot.curvature(), 0.0, params.l_cap)
    return solve_R_data(data, params, t_grid, pot.h)


@dataclass
class PricingSurface:
    """Assembled equilibrium surfaces on the time × space grid.

    ``chi_slope`` stores ∂ξχ = 1 − γσ²(T−t)R, used both for the invariant
    1−γσ²T·l ≤ ∂ξχ ≤ 1 and as the state-equation diffusion denominator.
    ``A_of_t`` and ``Atilde_of_t`` are the center-line time integrals fixing
    the integration constants of P and Γ.
    """

    t_grid: np.ndarray
    xi_grid: np.ndarray
    R: np.ndarray
    P: np.ndarray
    Gamma: np.ndarray
    Chi: np.ndarray
    params: ModelParams
    chi_slope: np.ndarray = None
    A_of_t: np.ndarray = None
    Atilde_of_t: np.ndarray = None
    anchor_gap: tuple = (0.0, 0.0)
    identity_residual: float = 0.0
    h: float = field(init=False)
    i0: int = field(init=False)

    def __post_init__(self) -> None:
        self.h = float(self.xi_grid[1] - self.xi_grid[0])
        self.i0 = center_index(self.xi_grid)

    # -- interpolation ----------------------------------------------------

    def time_bracket(self, t: float):
        tg = self.t_grid
        if t < tg[0] - 1e-12 or t > tg[-1] + 1e-12:
            raise ValueError(f"time {t!r} outside [0, {tg[-1]!r}]")
        k = int(np.searchsorted(tg, t, side="right")) - 1
        k = min(max(k, 0), len(tg) - 2)
        w = (t - tg[k]) / (tg[k + 1] - tg[k])
        return k, float(min(max(w, 0.0), 1.0))

    def row_at(self, arr: np.ndarray, t: float) -> np.ndarray:
        k, w = self.time_bracket(t)
        if w == 0.0:
            return arr[k]
        if w == 1.0:
            return arr[k + 1]
        return (1.0 - w) * arr[k] + w * arr[k + 1]

    def value_at(self, arr: np.ndarray, t: float, xi):
        row = self.row_at(arr, t)
        out = np.interp(xi, self.xi_grid, row)
        return float(out) if np.ndim(xi) == 0 else out

    def price(self, t: float, xi):
        return self.value_at(self.P, t, xi)

    def chi_at(self, t: float, xi):
        return self.value_at(self.Chi, t, xi)

    def gamma_at(self, t: float, xi):
        return self.value_at(self.Gamma, t, xi)

    def slope_at(self, t: float, xi):
        return self.value_at(self.R, t, xi)

    def chi_slope_at(self, t: float, xi):
        """∂ξχ via the identity 1 − γσ²(T−t)·R, exact in t."""
        p = self.params
        r = self.value_at(self.R, t, xi)
        return 1.0 - p.gamma * p.sigma ** 2 * (p.T - t) * r


def assemble_surfaces(rsol: RSolution, pot: ConvexPotential,
                      params: ModelParams, anchor: tuple | None = None
                      ) -> PricingSurface:
    """Build (P, Γ, χ) from the solved R field.

    ``anchor`` is an optional (χ(0,0), Γ(0,0)) pair from the stochastic
    representation; when given (and γ > 0) the integration constants are
    corrected so both hold exactly at t = 0.
    """
    t_grid = rsol.t_grid
    R = rsol.values
    xi = pot.grid
    h = pot.h
    i0 = pot.i0
    p = params
    tau = p.T - t_grid
    tau[-1] = 0.0  # exact

    if np.any(R < -BOUND_SLACK) or np.any(R > p.l_cap + BOUND_SLACK):
        raise AssemblyError("R outside [0, l_cap] beyond roundoff")
    chi_slope = 1.0 - p.gamma * p.sigma ** 2 * tau[:, None] * R
    low = 1.0 - p.budget
    if np.any(chi_slope < low - BOUND_SLACK) or np.any(chi_slope > 1.0 + BOUND_SLACK):
        k, j = np.unravel_index(
            int(np.argmin(chi_slope)), chi_slope.shape)
        raise AssemblyError(
            f"∂ξχ = {chi_slope[k, j]:.6g} outside [{low:.6g}, 1] at "
            f"(t={t_grid[k]:.6g}, ξ={xi[j]:.6g})")

    # center-line integrands for the integration constants
    dR0 = (R[:, i0 + 1] - R[:, i0 - 1]) / (2.0 * h)
    den0 = chi_slope[:, i0]
    flux_a = p.sigma ** 2 * dR0 / (2.0 * den0 * den0)
    flux_at = p.sigma ** 2 * R[:, i0] / (2.0 * den0)

    def reverse_cumtrapz(f):
        cells = 0.5 * np.diff(t_grid) * (f[:-1] + f[1:])
        c = np.concatenate(([0.0], np.cumsum(cells)))
        return c[-1] - c

    A = reverse_cumtrapz(flux_a)
    Atil = reverse_cumtrapz(flux_at)
    anchor_gap = (0.0, 0.0)
    if anchor is not None and p.gamma > 0.0:
        chi00, gamma00 = anchor
        p00 = -chi00 / (p.gamma * p.sigma ** 2 * p.T)
        d_a = (p00 - pot.g[i0]) - A[0]
        d_at = (gamma00 + 0.5 * p.gamma * p.sigma ** 2 * p.T * p00 * p00) - Atil[0]
        w = tau / p.T  # 1 at t=0, exactly 0 at t=T
        A = A + d_a * w
        Atil = Atil + d_at * w
        anchor_gap = (float(d_a), float(d_at))

    # P anchored at the exact final slice; ∫(R(t)−R(T)) vanishes bitwise at T
    I_rel = integrate_from_center(xi, R - R[-1][None, :], i0)
    P = pot.g[None, :] + A[:, None] + I_rel
    J = integrate_from_center(xi, P, i0)
    Gamma = Atil[:, None] + J - 0.5 * p.gamma * p.sigma ** 2 * tau[:, None] * P * P
    Chi = xi[None, :] - p.gamma * p.sigma ** 2 * tau[:, None] * P

    # identity gate P = ∂ξΓ/∂ξχ by central differences
    dG = (Gamma[:, 2:] - Gamma[:, :-2]) / (2.0 * h)
    dC = (Chi[:, 2:] - Chi[:, :-2]) / (2.0 * h)
    resid = np.abs(dG / dC - P[:, 1:-1])
    worst = float(resid.max())
    if worst > IDENTITY_RESIDUAL_TOL:
        k, j = np.unravel_index(int(np.argmax(resid)), resid.shape)
        raise AssemblyError(
            f"identity P = ∂ξΓ/∂ξχ fails: residual {worst:.3g} at "
            f"(t={t_grid[k]:.6g}, ξ={xi[j + 1]:.6g})")

    return PricingSurface(
        t_grid=t_grid, xi_grid=xi, R=R, P=P, Gamma=Gamma, Chi=Chi,
        params=params, chi_slope=chi_slope, A_of_t=A, Atilde_of_t=Atil,
        anchor_gap=anchor_gap, identity_residual=worst)


def _nonuniform_dt(arr: np.ndarray, t_grid: np.ndarray) -> np.ndarray:
    """Second-order time derivative at interior time rows (3-point stencil)."""
    a = np.diff(t_grid)[:-1][:, None]   # left gaps
    b = np.diff(t_grid)[1:][:, None]    # right gaps
    return (a * a * arr[2:] - b * b * arr[:-2]
            + (b * b - a * a) * arr[1:-1]) / (a * b * (a + b))


def check_system_residual(surface: PricingSurface):
    """Sup-norm residuals of the coupled Γ and χ equations.

    Central differences on interior nodes; a regression gate, not a solver.
    """
    p = surface.params
    h = surface.h
    sl = np.s_[1:-1, 1:-1]

    def dxx(arr):
        return (arr[:, 2:] - 2.0 * arr[:, 1:-1] + arr[:, :-2]) / (h * h)

    denom2 = np.square(surface.chi_slope[sl])
    coeff = 0.5 * p.sigma ** 2 / denom2
    P_i = surface.P[sl]

    g_t = _nonuniform_dt(surface.Gamma, surface.t_grid)[:, 1:-1]
    res_g = g_t + coeff * dxx(surface.Gamma)[1:-1] \
        - 0.5 * p.gamma * p.sigma ** 2 * P_i * P_i
    c_t = _nonuniform_dt(surface.Chi, surface.t_grid)[:, 1:-1]
    res_c = c_t + coeff * dxx(surface.Chi)[1:-1] - p.gamma * p.sigma ** 2 * P_i
    return float(np.abs(res_g).max()), float(np.abs(res_c).max())


def martingale_generator_residual(surface: PricingSurface) -> float:
    """Sup-norm residual of ∂tP + σ²∂ξξP/(2(∂ξχ)²) = 0 on interior nodes."""
    p = surface.params
    h = surface.h
    p_t = _nonuniform_dt(surface.P, surface.t_grid)[:, 1:-1]
    p_xx = (surface.P[:, 2:] - 2.0 * surface.P[:, 1:-1]
            + surface.P[:, :-2]) / (h * h)
    denom2 = np.square(surface.chi_slope[1:-1, 1:-1])
    res = p_t + 0.5 * p.sigma ** 2 * p_xx[1:-1] / denom2
    return float(np.abs(res).max())


def save_surface_field_csv(surface: PricingSurface, name: str, path,
                           stride_t: int = 1, stride_xi: int = 1) -> None:
    """Write one field as (t, xi, value) rows, optionally strided."""
    fields = {"R": surface.R, "P": surface.P, "Gamma": surface.Gamma,
              "Chi": surface.Chi}
    arr = fields[name]
    t_idx = np.r_[np.arange(0, len(surface.t_grid) - 1, stride_t),
                  len(surface.t_grid) - 1]
    x_idx = np.r_[np.arange(0, len(surface.xi_grid) - 1, stride_xi),
                  len(surface.xi_grid) - 1]
    tt = np.repeat(surface.t_grid[t_idx], len(x_idx))
    xx = np.tile(surface.xi_grid[x_idx], len(t_idx))
    vv = arr[np.ix_(t_idx, x_idx)].ravel()
    np.savetxt(path, np.column_stack([tt, xx, vv]), delimiter=",",
               header="t,xi,value", comments="", fmt="%.12e")
