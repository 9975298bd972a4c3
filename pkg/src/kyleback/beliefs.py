"""Prior beliefs about the asset's terminal value.

A belief is the law ν of the value ṽ that the market maker prices against.
Four kinds are supported:

* gaussian(m, Σ) — log-concave with modulus κ = 1/Σ²,
* uniform(a, b) — compact support, density bounded below,
* truncated_lognormal(μ_log, σ_log, lo, hi) — compact support but its density
  is not bounded away from zero in a useful way near the tails, so it is
  flagged as assumption-violating rather than rejected,
* tabulated(grid, density) — arbitrary user-supplied density on a grid.

Each belief exposes density, CDF, quantile and the slope budget l that bounds
admissible Brenier maps: 2/√(κσ²T) in the strongly log-concave case, and a
cap derived from the peak of the grid-time marginal (≤ 1/√(2πσ²T)) over the
density's lower bound in the compactly supported case.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri
from scipy.stats import lognorm

from .numerics import MonotoneCurve

# Quantile levels are clamped here before inversion of unbounded laws.
CDF_CLAMP = 1e-12


@dataclass
class BeliefDistribution:
    """The prior law of the terminal value.

    ``kappa`` is the strong log-concavity modulus of −ln p_ν (0 when not
    applicable); ``support`` may have infinite endpoints.  Instances are
    immutable in use and safe to share.
    """

    kind: str
    params: dict
    kappa: float
    support: tuple
    assumption_violating: bool = False
    _cdf_curve: MonotoneCurve | None = field(default=None, repr=False)
    _pdf_floor: float = field(default=0.0, repr=False)

    # -- distribution functions -------------------------------------------

    def cdf(self, v):
        v = np.asarray(v, dtype=float)
        if self.kind == "gaussian":
            out = ndtr((v - self.params["m"]) / self.params["stdev"])
        elif self.kind == "uniform":
            a, b = self.params["a"], self.params["b"]
            out = np.clip((v - a) / (b - a), 0.0, 1.0)
        elif self.kind == "truncated_lognormal":
            dist, flo, fspan = self._lognorm_pieces()
            out = np.clip((dist.cdf(np.clip(v, *self.support)) - flo) / fspan,
                          0.0, 1.0)
        else:
            curve = self._cdf_curve
            out = np.clip(curve.evaluate(v), 0.0, 1.0)
        return float(out) if out.ndim == 0 else out

    def quantile(self, u):
        u_arr = np.asarray(u, dtype=float)
        if np.any(u_arr <= 0.0) or np.any(u_arr >= 1.0):
            raise ValueError("quantile level must lie strictly inside (0, 1)")
        if self.kind == "gaussian":
            out = self.params["m"] + self.params["stdev"] * ndtri(u_arr)
        elif self.kind == "uniform":
            a, b = self.params["a"], self.params["b"]
            out = a + (b - a) * u_arr
        elif self.kind == "truncated_lognormal":
            dist, flo, fspan = self._lognorm_pieces()
            out = np.clip(dist.ppf(flo + fspan * u_arr), *self.support)
        else:
            curve = self._cdf_curve
            if u_arr.ndim == 0:
                out = np.asarray(curve.invert(float(u_arr)))
            else:
                out = np.array([curve.invert(float(x)) for x in u_arr])
        return float(out) if out.ndim == 0 else out

    def pdf(self, v):
        v = np.asarray(v, dtype=float)
        if self.kind == "gaussian":
            s = self.params["stdev"]
            z = (v - self.params["m"]) / s
            out = np.exp(-0.5 * z * z) / (s * math.sqrt(2.0 * math.pi))
        elif self.kind == "uniform":
            a, b = self.params["a"], self.params["b"]
            out = np.where((v >= a) & (v <= b), 1.0 / (b - a), 0.0)
        elif self.kind == "truncated_lognormal":
            dist, _flo, fspan = self._lognorm_pieces()
            inside = (v >= self.support[0]) & (v <= self.support[1])
            out = np.where(inside, dist.pdf(v) / fspan, 0.0)
        else:
            grid = self.params["grid"]
            dens = self.params["density"]
            out = np.interp(v, grid, dens, left=0.0, right=0.0)
        return float(out) if out.ndim == 0 else out

    def _lognorm_pieces(self):
        dist = lognorm(s=self.params["sigma_log"],
                       scale=math.exp(self.params["mu_log"]))
        flo = dist.cdf(self.support[0])
        fspan = dist.cdf(self.support[1]) - flo
        return dist, flo, fspan

    # -- metadata ---------------------------------------------------------

    @property
    def density_floor(self) -> float:
        """inf of the density over the support (0 for unbounded kinds)."""
        return self._pdf_floor


def belief_cdf(nu: BeliefDistribution, v):
    return nu.cdf(v)


def belief_quantile(nu: BeliefDistribution, u):
    return nu.quantile(u)


def belief_pdf(nu: BeliefDistribution, v):
    return nu.pdf(v)


# -- constructors ---------------------------------------------------------

def gaussian_belief(m: float, stdev: float) -> BeliefDistribution:
    if stdev <= 0.0:
        raise ValueError("stdev must be positive")
    return BeliefDistribution(
        kind="gaussian",
        params={"m": float(m), "stdev": float(stdev)},
        kappa=1.0 / stdev ** 2,
        support=(-math.inf, math.inf),
    )


def uniform_belief(a: float, b: float) -> BeliefDistribution:
    if not b > a:
        raise ValueError("need b > a")
    return BeliefDistribution(
        kind="uniform",
        params={"a": float(a), "b": float(b)},
        kappa=0.0,
        support=(float(a), float(b)),
        _pdf_floor=1.0 / (b - a),
    )


def truncated_lognormal_belief(mu_log: float, sigma_log: float,
                               lo: float, hi: float) -> BeliefDistribution:
    if sigma_log <= 0.0 or not hi > lo or lo < 0.0:
        raise ValueError("need sigma_log > 0 and 0 <= lo < hi")
    nu = BeliefDistribution(
        kind="truncated_lognormal",
        params={"mu_log": float(mu_log), "sigma_log": float(sigma_log)},
        kappa=0.0,
        support=(float(lo), float(hi)),
        # −ln p is not convex on the left tail and the density dives to ~0 at
        # the far truncation point, so the regularity assumptions fail; the
        # distribution is still usable and is flagged instead of rejected.
        assumption_violating=True,
    )
    dist, _flo, fspan = nu._lognorm_pieces()
    edge = min(dist.pdf(lo) if lo > 0 else 0.0, dist.pdf(hi)) / fspan
    nu._pdf_floor = float(edge)
    # sanity: the truncated density must integrate to 1
    grid = np.linspace(lo if lo > 0 else hi * 1e-6, hi, 20001)
    total = np.trapezoid(nu.pdf(grid), grid)
    if abs(total - 1.0) > 1e-6:
        raise ValueError(f"truncated density integrates to {total}, not 1")
    return nu


def tabulated_belief(grid, density) -> BeliefDistribution:
    grid = np.asarray(grid, dtype=float)
    density = np.asarray(density, dtype=float)
    if grid.ndim != 1 or grid.shape != density.shape or len(grid) < 3:
        raise ValueError("grid and density must be equal-length 1-D arrays")
    if np.any(np.diff(grid) <= 0.0):
        raise ValueError("grid must be strictly increasing")
    if np.any(density < 0.0):
        raise ValueError("density must be nonnegative")
    total = float(np.trapezoid(density, grid))
    if abs(total - 1.0) > 1e-8:
        raise ValueError(f"tabulated density integrates to {total}, "
                         "expected 1 within 1e-8")
    cdf_vals = np.concatenate(
        ([0.0], np.cumsum(0.5 * np.diff(grid) * (density[:-1] + density[1:]))))
    cdf_vals /= cdf_vals[-1]
    curve = MonotoneCurve(xs=grid, ys=cdf_vals, extrapolation="clamp")
    return BeliefDistribution(
        kind="tabulated",
        params={"grid": grid, "density": density / total},
        kappa=0.0,
        support=(float(grid[0]), float(grid[-1])),
        _cdf_curve=curve,
        _pdf_floor=float(density.min() / total),
    )


def belief_from_config(block: dict) -> BeliefDistribution:
    """Build a belief from its JSON config block, e.g. {"kind":"uniform","a":10,"b":20}."""
    kind = block.get("kind", "gaussian")
    if kind == "gaussian":
        return gaussian_belief(block.get("mean", block.get("m", 1.0)),
                               block.get("stdev", 1.0))
    if kind == "uniform":
        return uniform_belief(block["a"], block["b"])
    if kind == "truncated_lognormal":
        return truncated_lognormal_belief(
            block["mu_log"], block["sigma_log"], block["lo"], block["hi"])
    if kind == "tabulated":
        return tabulated_belief(block["grid"], block["density"])
    raise ValueError(f"unknown belief kind {kind!r}")


# -- admissible slope budget ---------------------------------------------

def slope_budget(nu: BeliefDistribution, sigma: float, horizon: float,
                 gamma: float = 0.0) -> float:
    """Lipschitz cap l for Brenier maps transporting onto ``nu``.

    Strongly log-concave target: l = 2/√(κσ²T).  Compact support with a
    density floor p_min: the grid-time marginal peaks below 1/√(2πσ²T), so
    map slopes stay below that over p_min (a 5% margin is added for grid
    effects).  When the resulting cap would break the representation budget
    γσ²T·l < 1/2 (possible only for the flagged assumption-violating kind),
    it falls back to 0.49/(γσ²T).
    """
    s2 = sigma * sigma * horizon
    if s2 <= 0.0:
        raise ValueError("need sigma > 0 and horizon > 0")
    if nu.kappa > 0.0:
        return 2.0 / math.sqrt(nu.kappa * s2)
    if nu.density_floor <= 0.0:
        raise ValueError("belief needs kappa > 0 or a positive density floor")
    cap = 1.05 / (math.sqrt(2.0 * math.pi * s2) * nu.density_floor)
    if gamma > 0.0 and gamma * s2 * cap >= 0.5:
        cap = 0.49 / (gamma * s2)
    return cap
