"""Candidate price maps g = ∂ξφ and their pinned antiderivatives.

A candidate equilibrium is carried around as the derivative g of a convex
potential φ, sampled on a uniform grid [−Ξ, Ξ] that contains 0 as a node.
Membership in the admissible class means g is nondecreasing with finite
difference slopes at most l_cap, and l_cap itself satisfies the budget
γσ²T·l_cap < 1.  The antiderivative φ is accumulated by trapezoid sums and
pinned to φ(0) = 0 exactly.

Between nodes g is interpolated linearly; outside the grid it continues as a
constant (tail slope 0), which keeps every iterate admissible and keeps the
exponential moments used by the representation finite for any risk aversion.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetError

SLOPE_TOL = 1e-9  # slack allowed on node slopes vs l_cap

_CSV_FMT = "%.12e"


def center_index(grid: np.ndarray) -> int:
    """Index of the node closest to 0; that node must be exactly 0."""
    i = int(np.argmin(np.abs(grid)))
    if grid[i] != 0.0:
        raise ValueError("grid must contain 0 as a node")
    return i


def integrate_from_center(grid: np.ndarray, values: np.ndarray,
                          i0: int | None = None) -> np.ndarray:
    """Trapezoid antiderivative of ``values`` vanishing at the center node.

    Row-wise when ``values`` is 2-D.  This exact accumulation order is shared
    by the potential cache and the surface assembly so that equal integrands
    produce bitwise equal antiderivatives.
    """
    if i0 is None:
        i0 = center_index(grid)
    h = np.diff(grid)
    v = np.asarray(values, dtype=float)
    if v.ndim == 1:
        cells = 0.5 * h * (v[:-1] + v[1:])
        out = np.concatenate(([0.0], np.cumsum(cells)))
        return out - out[i0]
    cells = 0.5 * h[None, :] * (v[:, :-1] + v[:, 1:])
    out = np.concatenate((np.zeros((v.shape[0], 1)), np.cumsum(cells, axis=1)),
                         axis=1)
    return out - out[:, i0][:, None]


@dataclass
class ConvexPotential:
    """g = ∂ξφ on a uniform grid with its pinned antiderivative.

    Immutable in use.  ``budget`` (γσ²T), when supplied, is validated against
    l_cap at construction.
    """

    grid: np.ndarray
    g: np.ndarray
    l_cap: float
    phi: np.ndarray = field(init=False, repr=False)
    h: float = field(init=False, repr=False)
    i0: int = field(init=False, repr=False)
    budget: float | None = None

    def __post_init__(self) -> None:
        self.grid = np.asarray(self.grid, dtype=float)
        self.g = np.asarray(self.g, dtype=float)
        if self.grid.ndim != 1 or self.grid.shape != self.g.shape or len(self.grid) < 3:
            raise ValueError("grid and g must be equal-length 1-D arrays")
        steps = np.diff(self.grid)
        h = steps[0]
        if np.any(np.abs(steps - h) > 1e-12 * max(1.0, abs(h))):
            raise ValueError("grid must be uniform")
        self.h = float(h)
        self.i0 = center_index(self.grid)
        dg = np.diff(self.g)
        scale = max(1.0, float(np.max(np.abs(self.g))))
        if np.any(dg < -1e-12 * scale):
            raise ValueError("g must be nondecreasing across nodes")
        # repair roundoff-level dips so downstream monotone code is safe
        self.g = np.maximum.accumulate(self.g)
        if self.l_cap <= 0.0:
            raise ValueError("l_cap must be positive")
        if np.any(np.diff(self.g) / self.h > self.l_cap + SLOPE_TOL):
            worst = float(np.max(np.diff(self.g) / self.h))
            raise BudgetError(
                f"node slope {worst:.6g} exceeds l_cap={self.l_cap:.6g}")
        if self.budget is not None and self.budget * self.l_cap >= 1.0:
            raise BudgetError(
                f"gamma*sigma^2*T*l_cap = {self.budget * self.l_cap:.6g} >= 1; "
                "admissibility requires it below 1")
        self.phi = integrate_from_center(self.grid, self.g, self.i0)

    # -- evaluation -------------------------------------------------------

    def eval_g(self, xi):
        """Piecewise-linear in the grid, constant beyond it; nondecreasing."""
        out = np.interp(xi, self.grid, self.g)
        return float(out) if np.ndim(xi) == 0 else out

    def eval_g_slope(self, xi):
        """Cell slope of the interpolant (0 outside the grid)."""
        xi_arr = np.atleast_1d(np.asarray(xi, dtype=float))
        cell = np.clip(np.searchsorted(self.grid, xi_arr, side="right") - 1,
                       0, len(self.grid) - 2)
        slopes = np.diff(self.g) / self.h
        out = np.where((xi_arr < self.grid[0]) | (xi_arr > self.grid[-1]),
                       0.0, slopes[cell])
        return float(out[0]) if np.ndim(xi) == 0 else out

    def eval_phi(self, xi):
        """Exact antiderivative of the interpolated g, with φ(0) = 0."""
        xi_arr = np.atleast_1d(np.asarray(xi, dtype=float))
        clipped = np.clip(xi_arr, self.grid[0], self.grid[-1])
        cell = np.clip(np.searchsorted(self.grid, clipped, side="right") - 1,
                       0, len(self.grid) - 2)
        u = clipped - self.grid[cell]
        slopes = np.diff(self.g) / self.h
        out = self.phi[cell] + self.g[cell] * u + 0.5 * slopes[cell] * u * u
        # constant-g tails integrate linearly
        left = xi_arr < self.grid[0]
        right = xi_arr > self.grid[-1]
        out[left] += self.g[0] * (xi_arr[left] - self.grid[0])
        out[right] += self.g[-1] * (xi_arr[right] - self.grid[-1])
        return float(out[0]) if np.ndim(xi) == 0 else out

    def inverse_g(self, v: float) -> float:
        """Solve g(ξ) = v for v strictly inside the range of g on the grid.

        On a flat stretch the left edge is returned.
        """
        v = float(v)
        lo, hi = float(self.g[0]), float(self.g[-1])
        if not (lo < v < hi):
            raise ValueError(
                f"value {v!r} not strictly inside the range ({lo!r}, {hi!r}) of g")
        j = int(np.searchsorted(self.g, v, side="left"))
        if self.g[j] == v:
            while j > 0 and self.g[j - 1] == v:
                j -= 1
            return float(self.grid[j])
        denom = self.g[j] - self.g[j - 1]
        t = (v - self.g[j - 1]) / denom
        return float(self.grid[j - 1] + t * self.h)

    def curvature(self) -> np.ndarray:
        """Central-difference curvature at nodes (one-sided at the edges)."""
        g = self.g
        out = np.empty_like(g)
        out[1:-1] = (g[2:] - g[:-2]) / (2.0 * self.h)
        out[0] = (g[1] - g[0]) / self.h
        out[-1] = (g[-1] - g[-2]) / self.h
        return out

    def range_of_g(self) -> tuple:
        return float(self.g[0]), float(self.g[-1])


def eval_g(pot: ConvexPotential, xi):
    return pot.eval_g(xi)


def eval_phi(pot: ConvexPotential, xi):
    return pot.eval_phi(xi)


def inverse_g(pot: ConvexPotential, v: float) -> float:
    return pot.inverse_g(v)


# -- construction helpers --------------------------------------------------

def uniform_grid(halfwidth: float, n_nodes: int) -> np.ndarray:
    """Symmetric uniform grid with an odd node count so 0 is a node."""
    if halfwidth <= 0.0:
        raise ValueError("halfwidth must be positive")
    if n_nodes < 3 or n_nodes % 2 == 0:
        raise ValueError("n_nodes must be odd and at least 3")
    grid = np.linspace(-halfwidth, halfwidth, n_nodes)
    grid[n_nodes // 2] = 0.0  # exact center node
    return grid


def zero_potential(grid: np.ndarray, l_cap: float,
                   budget: float | None = None) -> ConvexPotential:
    return ConvexPotential(grid=grid, g=np.zeros_like(grid), l_cap=l_cap,
                           budget=budget)


def linear_potential(grid: np.ndarray, slope: float, intercept: float,
                     l_cap: float | None = None,
                     budget: float | None = None) -> ConvexPotential:
    if slope < 0.0:
        raise ValueError("slope must be nonnegative")
    if l_cap is None:
        l_cap = max(slope, 1e-12) * (1.0 + 1e-9)
    return ConvexPotential(grid=grid, g=slope * grid + intercept,
                           l_cap=l_cap, budget=budget)


# -- CSV checkpointing -----------------------------------------------------

def save_potential_csv(pot: ConvexPotential, path) -> None:
    data = np.column_stack([pot.grid, pot.g])
    np.savetxt(path, data, delimiter=",", header="xi,g", comments="",
               fmt=_CSV_FMT)


def load_potential_csv(path, l_cap: float | None = None,
                       budget: float | None = None) -> ConvexPotential:
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    grid, g = data[:, 0], data[:, 1]
    if l_cap is None:
        slopes = np.diff(g) / np.diff(grid)
        l_cap = max(float(np.max(slopes)), 1e-12) * (1.0 + 1e-9)
    return ConvexPotential(grid=grid, g=g, l_cap=l_cap, budget=budget)
