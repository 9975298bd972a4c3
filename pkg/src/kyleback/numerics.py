"""Deterministic numerical kernels shared by the solver modules.

Four small tools live here:

* Gauss-Hermite quadrature against the standard normal weight, so that
  E[f(m + s·Z)] for Z ~ N(0,1) is a fixed dot product,
* the standard normal cdf/pdf/quantile,
* monotone piecewise-cubic curves with inversion (used for CDFs and their
  quantile functions; the interpolant is the Fritsch-Carlson limited cubic,
  which never overshoots the bracketing knot values),
* a bracketed Newton-style minimizer for strictly convex scalar functions.

There is also an exact integrator for densities whose log is piecewise
quadratic: each cell integral of exp(a + b·u + c·u²), c < 0, completes the
square to a Gaussian mass, so cumulative distribution values can be
accumulated to near machine precision instead of trapezoid accuracy.

Everything here is pure and reentrant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq
from scipy.special import ndtr, ndtri

from .errors import ConvexityError

_SQRT_2PI = np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights for expectations against the standard normal law.

    Weights are normalized to sum to 1, so a plain dot product of weights with
    integrand values is the expectation.  Exact for polynomials of degree
    2*order - 1.
    """

    nodes: np.ndarray
    weights: np.ndarray
    order: int

    def __post_init__(self) -> None:
        if self.order < 1 or len(self.nodes) != self.order:
            raise ValueError("rule order must match the node count")
        if np.any(self.weights <= 0.0):
            raise ValueError("quadrature weights must be positive")


def gauss_hermite_rule(order: int = 64) -> QuadratureRule:
    """Gauss-Hermite rule in probabilist form (weight e^{-x^2/2})."""
    nodes, weights = np.polynomial.hermite_e.hermegauss(order)
    # hermegauss weights sum to sqrt(2*pi); renormalize so they sum to 1.
    weights = weights / weights.sum()
    return QuadratureRule(nodes=nodes, weights=weights, order=order)


def gaussian_expectation(f, rule: QuadratureRule, mean: float = 0.0,
                         stdev: float = 1.0) -> float:
    """E[f(mean + stdev*Z)] for Z standard normal, by the given rule.

    ``f`` may be vectorized over a node array or accept scalars.  Any
    non-finite integrand value aborts with an error naming the node.
    """
    if stdev <= 0.0:
        raise ValueError("stdev must be positive")
    points = mean + stdev * rule.nodes
    try:
        values = np.asarray(f(points), dtype=float)
        vectorized = values.shape == points.shape
    except TypeError:
        vectorized = False
    if not vectorized:
        # scalar-only callable: evaluate node by node
        values = np.array([float(f(p)) for p in points])
    bad = ~np.isfinite(values)
    if bad.any():
        i = int(np.argmax(bad))
        raise ValueError(
            f"integrand not finite at quadrature node {i} (x={points[i]!r})")
    return float(np.dot(rule.weights, values))


def std_normal(kind: str, x: float):
    """Standard normal cdf, pdf or quantile.

    The quantile is defined on the open interval (0,1); callers that want to
    evaluate at clamped CDF values must clamp explicitly first.
    """
    if kind == "cdf":
        return ndtr(x)
    if kind == "pdf":
        return np.exp(-0.5 * np.square(x)) / _SQRT_2PI
    if kind == "quantile":
        u = np.asarray(x, dtype=float)
        if np.any(u <= 0.0) or np.any(u >= 1.0):
            raise ValueError("quantile level must lie strictly inside (0, 1)")
        return ndtri(x)
    raise ValueError(f"unknown kind {kind!r}; expected cdf, pdf or quantile")


@dataclass
class MonotoneCurve:
    """A nondecreasing curve on a strictly increasing grid.

    Interpolation is monotonicity-preserving piecewise cubic, so evaluation
    between knots stays within the bracketing knot values.  ``extrapolation``
    is either "clamp" (constant beyond the grid, right for CDFs) or
    "linear-tail" (continue with the boundary slope).
    """

    xs: np.ndarray
    ys: np.ndarray
    extrapolation: str = "clamp"
    _pchip: PchipInterpolator = field(init=False, repr=False)
    _slope_left: float = field(init=False, repr=False)
    _slope_right: float = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.xs = np.asarray(self.xs, dtype=float)
        self.ys = np.asarray(self.ys, dtype=float)
        if self.xs.ndim != 1 or self.xs.shape != self.ys.shape or len(self.xs) < 2:
            raise ValueError("xs and ys must be equal-length 1-D arrays")
        if np.any(np.diff(self.xs) <= 0.0):
            raise ValueError("xs must be strictly increasing")
        if np.any(np.diff(self.ys) < 0.0):
            raise ValueError("ys must be nondecreasing")
        if self.extrapolation not in ("clamp", "linear-tail"):
            raise ValueError("extrapolation must be 'clamp' or 'linear-tail'")
        self._pchip = PchipInterpolator(self.xs, self.ys, extrapolate=False)
        deriv = self._pchip.derivative()
        self._slope_left = float(deriv(self.xs[0]))
        self._slope_right = float(deriv(self.xs[-1]))

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        xq = np.atleast_1d(x)
        inner = np.clip(xq, self.xs[0], self.xs[-1])
        out = self._pchip(inner)
        if self.extrapolation == "linear-tail":
            left = xq < self.xs[0]
            right = xq > self.xs[-1]
            out[left] = self.ys[0] + self._slope_left * (xq[left] - self.xs[0])
            out[right] = self.ys[-1] + self._slope_right * (xq[right] - self.xs[-1])
        return float(out[0]) if scalar else out

    def invert(self, y: float) -> float:
        """Solve evaluate(x) = y on the knot range.

        Unique where the curve is strictly increasing; on a flat stretch the
        left edge of the stretch is returned.
        """
        y = float(y)
        if y < self.ys[0] or y > self.ys[-1]:
            raise ValueError(
                f"value {y!r} outside curve range [{self.ys[0]!r}, {self.ys[-1]!r}]")
        j = int(np.searchsorted(self.ys, y, side="left"))
        if j == 0:
            return float(self.xs[0])
        if self.ys[j] == y:
            return float(self.xs[j])
        a, b = self.xs[j - 1], self.xs[j]
        fa = self.ys[j - 1] - y
        if fa == 0.0:
            return float(a)
        root = brentq(lambda x: float(self._pchip(x)) - y, a, b,
                      xtol=1e-14, rtol=8.9e-16)
        return float(root)


def _expand_bracket(derivative, init: float, max_expand: int = 80):
    """Find [a, b] with derivative(a) <= 0 <= derivative(b).

    The derivative is assumed increasing (strict convexity); the bracket walks
    outward with doubling width.
    """
    width = 1.0
    a = init - width
    b = init + width
    for _ in range(max_expand):
        fa = float(derivative(a))
        fb = float(derivative(b))
        if fa <= 0.0 <= fb:
            return a, b
        if fa > 0.0:
            # minimum is left of a
            b = a
            a -= width
        elif fb < 0.0:
            a = b
            b += width
        width *= 2.0
    raise ConvexityError("not strongly convex on bracket: derivative never "
                         f"changed sign expanding from init={init!r}")


def minimize_convex_1d(value, derivative, init: float = 0.0,
                       tol: float = 1e-10, max_iter: int = 200):
    """Minimize a strictly convex scalar function.

    Root-finds the derivative with a bracketed Brent iteration (Newton steps
    with a bisection safeguard), then polishes with secant steps until
    |derivative| <= tol.  Returns (argmin, value(argmin)).
    """
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    a, b = _expand_bracket(derivative, init)
    x = brentq(derivative, a, b, xtol=1e-14, rtol=8.9e-16, maxiter=max_iter)
    x = float(x)
    fx = float(derivative(x))
    if abs(fx) > tol:
        # secant polish; rarely needed after brentq
        h = max(1e-9, 1e-9 * abs(x))
        for _ in range(max_iter):
            slope = (float(derivative(x + h)) - fx) / h
            if slope <= 0.0:
                break
            x = x - fx / slope
            fx = float(derivative(x))
            if abs(fx) <= tol:
                break
    return x, float(value(x))


def exp_quadratic_cell_masses(h: float, alpha: np.ndarray, beta: np.ndarray,
                              curv: np.ndarray) -> np.ndarray:
    """Exact integrals of exp(alpha + beta*u + curv*u^2) over u in [0, h].

    One entry per cell; ``curv`` must be strictly negative everywhere (the
    exponent is concave, as the slope budget guarantees).  Completing the
    square turns each cell into a Gaussian mass evaluated with the normal CDF;
    the Phi difference is flipped to the accurate tail when both endpoints sit
    on the same side of the peak.
    """
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    curv = np.asarray(curv, dtype=float)
    if np.any(curv >= 0.0):
        raise ValueError("cell curvature must be strictly negative")
    s = -curv
    var = 0.5 / s
    sd = np.sqrt(var)
    center = beta / (2.0 * s)           # peak offset from the left edge
    peak_log = alpha + beta * beta / (4.0 * s)
    lo = (0.0 - center) / sd
    hi = (h - center) / sd
    flip = (lo + hi) > 0.0
    lo_eff = np.where(flip, -hi, lo)
    hi_eff = np.where(flip, -lo, hi)
    dphi = ndtr(hi_eff) - ndtr(lo_eff)
    return np.exp(peak_log + 0.5 * np.log(2.0 * np.pi * var)) * dphi
