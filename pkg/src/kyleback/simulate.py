"""Monte-Carlo engine for the equilibrium state dynamics.

Two path laws are simulated on a time grid refined toward T (the insider's
drift scales like 1/(T−t)):

  * the unconditioned state  dξ⁰ = σ/∂ξχ(t,ξ⁰) dB, under which the quoted
    price P(t,ξ⁰_t) is a martingale and ξ⁰_T is distributed like the
    terminal state density;
  * the insider's bridge for a liquidation value ṽ, an Euler step of
    dξ = θ/∂ξχ dt + σ/∂ξχ dB with the simplified drift
    θ = (g⁻¹(ṽ) − ξ)/(T−t), which pins ξ_T to g⁻¹(ṽ) up to the last-step
    noise scale σ√(Δt_last).

Each path owns a counter-based random stream keyed by (seed, path index), so
batches are bitwise reproducible regardless of how paths are blocked.  In
bridge mode the value draw is taken from the stream before the Gaussian
increments, so fixed-value and sampled-value runs share noise.

The order flow is carried by the exact discrete identity

    Y_k = χ(t_k, ξ_k) − χ(0,0) − γσ² Σ_{j<k} P(t_j, ξ_j) Δt_j,

which makes recover_xi_from_flow (the market maker's per-step inversion of
the strictly increasing map χ(t_k, ·)) an exact round trip on simulated
paths.  Wealth is accumulated as the drift strategy's ∫(ṽ−P)dX and compared
against the closed-form exponent decomposition in wealth_decomposition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .beliefs import CDF_CLAMP, BeliefDistribution
from .errors import GridExitError
from .fixed_point import Representation, TerminalDensity
from .pde import ModelParams, PricingSurface, refined_time_grid
from .potential import ConvexPotential

DEFAULT_N_STEPS = 512
DEFAULT_LAST_STEP_FRACTION = 1e-4
CLAMP_FRACTION_LIMIT = 1e-3
MARTINGALE_CHECKPOINTS = 10


@dataclass
class BatchConfig:
    """Size, seeding and time resolution of one simulation batch."""

    n_paths: int
    n_steps: int = DEFAULT_N_STEPS
    seed: int = 0
    fixed_v: float | None = None
    block_size: int = 4096
    last_step_fraction: float = DEFAULT_LAST_STEP_FRACTION

    def __post_init__(self) -> None:
        if self.n_paths < 1 or self.n_steps < 2:
            raise ValueError("need n_paths >= 1 and n_steps >= 2")


@dataclass
class SimulationBatch:
    """Simulated paths with their driving noise and derived flows.

    All path arrays have shape (n_paths, n_steps+1); row k=0 is t=0 where
    ξ = Y = B = 0.  ``v_targets``, ``pinning_gaps`` and ``terminal_wealth``
    are present in bridge mode only.
    """

    seed: int
    n_paths: int
    n_steps: int
    t_grid: np.ndarray
    B: np.ndarray
    Y: np.ndarray
    xi: np.ndarray
    P: np.ndarray
    mode: str
    v_targets: np.ndarray | None = None
    pinning_gaps: np.ndarray | None = None
    terminal_wealth: np.ndarray | None = None
    clamp_count: int = 0

    @property
    def clamp_fraction(self) -> float:
        return self.clamp_count / (self.n_paths * self.n_steps)


def _noise_matrix(cfg: BatchConfig, with_value_draw: bool):
    """Per-path Philox streams; value draw (if any) precedes the normals."""
    normals = np.empty((cfg.n_paths, cfg.n_steps))
    uniforms = np.empty(cfg.n_paths) if with_value_draw else None
    for start in range(0, cfg.n_paths, cfg.block_size):
        stop = min(start + cfg.block_size, cfg.n_paths)
        for i in range(start, stop):
            key = np.array([cfg.seed, i], dtype=np.uint64)
            gen = np.random.Generator(np.random.Philox(key=key))
            if with_value_draw:
                uniforms[i] = gen.random()
            normals[i] = gen.standard_normal(cfg.n_steps)
    return normals, uniforms


def _blend_rows(surface: PricingSurface, t_grid: np.ndarray):
    """Time-interpolated (R, P, χ) rows at every simulation time."""
    m = len(t_grid)
    n = len(surface.xi_grid)
    r_rows = np.empty((m, n))
    p_rows = np.empty((m, n))
    c_rows = np.empty((m, n))
    for k, t in enumerate(t_grid):
        r_rows[k] = surface.row_at(surface.R, t)
        p_rows[k] = surface.row_at(surface.P, t)
        c_rows[k] = surface.row_at(surface.Chi, t)
    return r_rows, p_rows, c_rows


def _step_paths(surface: PricingSurface, cfg: BatchConfig,
                x_targets: np.ndarray | None, v_targets: np.ndarray | None,
                normals: np.ndarray) -> SimulationBatch:
    """Shared Euler loop; ``x_targets`` switches bridge drift on."""
    p = surface.params
    t_grid = refined_time_grid(p.T, cfg.n_steps,
                               min(cfg.last_step_fraction, 1.0 / cfg.n_steps))
    grid = surface.xi_grid
    lo, hi = float(grid[0]), float(grid[-1])
    r_rows, p_rows, c_rows = _blend_rows(surface, t_grid)
    chi00 = float(np.interp(0.0, grid, c_rows[0]))

    n, m = cfg.n_paths, cfg.n_steps
    dt = np.diff(t_grid)
    sqdt = np.sqrt(dt)
    xi = np.zeros((n, m + 1))
    bpath = np.zeros((n, m + 1))
    ypath = np.zeros((n, m + 1))
    prices = np.empty((n, m + 1))
    wealth = np.zeros(n) if x_targets is not None else None
    riemann = np.zeros(n)
    clamps = 0
    x = np.zeros(n)
    for k in range(m + 1):
        p_here = np.interp(x, grid, p_rows[k])
        prices[:, k] = p_here
        ypath[:, k] = np.interp(x, grid, c_rows[k]) - chi00 \
            - p.gamma * p.sigma ** 2 * riemann
        if k == m:
            break
        denom = 1.0 - p.gamma * p.sigma ** 2 * (p.T - t_grid[k]) \
            * np.interp(x, grid, r_rows[k])
        db = sqdt[k] * normals[:, k]
        move = p.sigma * db / denom
        if x_targets is not None:
            theta = (x_targets - x) / (p.T - t_grid[k])
            move = move + theta * dt[k] / denom
            wealth += (v_targets - p_here) * theta * dt[k]
        x_next = x + move
        out = (x_next < lo) | (x_next > hi)
        clamps += int(out.sum())
        x = np.clip(x_next, lo, hi)
        riemann = riemann + p_here * dt[k]
        bpath[:, k + 1] = bpath[:, k] + db
        xi[:, k + 1] = x

    batch = SimulationBatch(
        seed=cfg.seed, n_paths=n, n_steps=m, t_grid=t_grid, B=bpath,
        Y=ypath, xi=xi, P=prices,
        mode="bridge" if x_targets is not None else "noise",
        v_targets=v_targets,
        pinning_gaps=(np.abs(xi[:, -1] - x_targets)
                      if x_targets is not None else None),
        terminal_wealth=wealth, clamp_count=clamps)
    if batch.clamp_fraction > CLAMP_FRACTION_LIMIT:
        raise GridExitError(
            f"{clamps} of {n * m} steps left the state grid "
            f"({batch.clamp_fraction:.2%} > {CLAMP_FRACTION_LIMIT:.2%})")
    return batch


def simulate_xi0(surface: PricingSurface, cfg: BatchConfig) -> SimulationBatch:
    """Unconditioned state paths dξ⁰ = σ/∂ξχ dB from ξ⁰_0 = 0."""
    normals, _ = _noise_matrix(cfg, with_value_draw=False)
    return _step_paths(surface, cfg, None, None, normals)


def simulate_bridge(surface: PricingSurface, pot: ConvexPotential,
                    nu: BeliefDistribution, cfg: BatchConfig
                    ) -> SimulationBatch:
    """Insider bridge paths for per-path values ṽ ~ ν (or a fixed ṽ)."""
    normals, uniforms = _noise_matrix(cfg, with_value_draw=True)
    if cfg.fixed_v is not None:
        v = np.full(cfg.n_paths, float(cfg.fixed_v))
    else:
        u = np.clip(uniforms, CDF_CLAMP, 1.0 - CDF_CLAMP)
        v = np.asarray(nu.quantile(u), dtype=float)
    g_lo, g_hi = pot.range_of_g()
    nudge = 1e-9 * max(g_hi - g_lo, 1.0)
    v_use = np.clip(v, g_lo + nudge, g_hi - nudge)
    x_targets = np.array([pot.inverse_g(val) for val in v_use])
    return _step_paths(surface, cfg, x_targets, v, normals)


def recover_xi_from_flow(surface: PricingSurface, t_grid: np.ndarray,
                         y_path: np.ndarray) -> np.ndarray:
    """Market maker's state recovery: per-step inversion of

        χ(t_k, ξ_k) = χ(0,0) + Y_k + γσ² Σ_{j<k} P(t_j, ξ_j) Δt_j,

    where the left-Riemann sum reuses the already recovered states.  χ(t_k,·)
    is strictly increasing, so each step has a unique solution on the grid.
    """
    p = surface.params
    grid = surface.xi_grid
    _, p_rows, c_rows = _blend_rows(surface, np.asarray(t_grid, dtype=float))
    chi00 = float(np.interp(0.0, grid, c_rows[0]))
    y = np.atleast_2d(np.asarray(y_path, dtype=float))
    n, mm = y.shape
    dt = np.diff(t_grid)
    xi = np.zeros((n, mm))
    riemann = np.zeros(n)
    lo, hi = float(grid[0]), float(grid[-1])
    for k in range(mm):
        target = chi00 + y[:, k] + p.gamma * p.sigma ** 2 * riemann
        c_row = c_rows[k]
        target = np.clip(target, c_row[0], c_row[-1])
        xi[:, k] = np.interp(target, c_row, grid)
        xi[:, k] = np.clip(xi[:, k], lo, hi)
        if k < mm - 1:
            riemann = riemann + np.interp(xi[:, k], grid, p_rows[k]) * dt[k]
    return xi[0] if np.ndim(y_path) == 1 else xi


@dataclass
class WealthDecomposition:
    """Two reconstructions of W_T per path and their discretization gap."""

    direct: np.ndarray
    decomposed: np.ndarray

    @property
    def gaps(self) -> np.ndarray:
        return np.abs(self.direct - self.decomposed)


def wealth_decomposition(batch: SimulationBatch, surface: PricingSurface,
                         pot: ConvexPotential, rep: Representation,
                         params: ModelParams) -> WealthDecomposition:
    """Check the pathwise utility expansion on a bridge batch:

        W_T = Γ(0,0) − ṽχ(0,0) + ṽξ_T − φ(ξ_T) − γσ²T ṽ²/2
              − σ∫(ṽ−P)dB + (γσ²/2)∫(ṽ−P)²dt,

    against the direct drift-strategy wealth Σ(ṽ−P)θΔt recorded while
    stepping.  The gap is the Euler-discretization error of the identity.
    """
    if batch.mode != "bridge" or batch.v_targets is None:
        raise ValueError("wealth decomposition needs a bridge batch")
    v = batch.v_targets
    dt = np.diff(batch.t_grid)
    db = np.diff(batch.B, axis=1)
    gap_v = v[:, None] - batch.P[:, :-1]
    s1 = (gap_v * db).sum(axis=1)
    s2 = (gap_v * gap_v * dt[None, :]).sum(axis=1)
    xi_T = batch.xi[:, -1]
    decomposed = rep.gamma00 - v * rep.chi00 + v * xi_T - pot.eval_phi(xi_T) \
        - 0.5 * params.gamma * params.s2 * v * v \
        - params.sigma * s1 + 0.5 * params.gamma * params.sigma ** 2 * s2
    return WealthDecomposition(direct=batch.terminal_wealth.copy(),
                               decomposed=decomposed)


def martingale_check(batch: SimulationBatch, surface: PricingSurface,
                     n_checkpoints: int = MARTINGALE_CHECKPOINTS) -> np.ndarray:
    """z-scores of mean P(t,ξ⁰_t) against P(0,0) at evenly spaced times."""
    p = surface.params
    targets = p.T * np.arange(1, n_checkpoints + 1) / n_checkpoints
    idx = [int(np.argmin(np.abs(batch.t_grid - tc))) for tc in targets]
    p0 = surface.price(0.0, 0.0)
    zs = np.empty(n_checkpoints)
    for j, k in enumerate(idx):
        col = batch.P[:, k]
        se = col.std(ddof=1) / math.sqrt(batch.n_paths)
        zs[j] = (col.mean() - p0) / se if se > 0.0 else 0.0
    return zs


def ks_distance(sample: np.ndarray, cdf) -> float:
    """One-sample Kolmogorov-Smirnov distance against a CDF callable."""
    x = np.sort(np.asarray(sample, dtype=float))
    n = len(x)
    f = np.asarray(cdf(x), dtype=float)
    i = np.arange(1, n + 1)
    return float(max(np.max(np.abs(f - i / n)),
                     np.max(np.abs(f - (i - 1) / n))))


def pinning_scale(batch: SimulationBatch, pot: ConvexPotential,
                  params: ModelParams) -> float:
    """Price-units pinning tolerance: max map slope × σ√(last Δt)."""
    dt_last = batch.t_grid[-1] - batch.t_grid[-2]
    max_slope = float(np.max(np.diff(pot.g)) / pot.h)
    return max_slope * params.sigma * math.sqrt(dt_last)


def evaluate_gates(xi0_batch: SimulationBatch, bridge_batch: SimulationBatch,
                   surface: PricingSurface, pot: ConvexPotential,
                   dens: TerminalDensity, params: ModelParams,
                   min_sample: int = 100) -> dict:
    """Statistical gate battery for a pair of batches.

    Returns a summary dict with per-gate values, thresholds and verdicts.
    Below ``min_sample`` paths the gates are skipped (noted, passed=None).
    """
    n = xi0_batch.n_paths
    summary: dict = {"n_paths": n, "seed": xi0_batch.seed,
                     "clamp_fraction_xi0": xi0_batch.clamp_fraction,
                     "clamp_fraction_bridge": bridge_batch.clamp_fraction}
    if n < min_sample:
        summary["note"] = (f"insufficient sample: {n} paths "
                           f"< {min_sample}; gates skipped")
        summary["gates"] = {}
        summary["all_passed"] = None
        return summary

    crit = 1.63 / math.sqrt(n)
    ks_xi0 = ks_distance(xi0_batch.xi[:, -1], dens.cdf)
    ks_bridge = ks_distance(bridge_batch.xi[:, -1], dens.cdf)
    zs = martingale_check(xi0_batch, surface)
    scale = pinning_scale(bridge_batch, pot, params)
    price_gap = float(np.mean(np.abs(bridge_batch.P[:, -1]
                                     - bridge_batch.v_targets)))
    gates = {
        "ks_xi0_terminal": {"value": ks_xi0, "threshold": crit,
                            "passed": bool(ks_xi0 < crit)},
        "ks_bridge_pooled": {"value": ks_bridge, "threshold": crit,
                             "passed": bool(ks_bridge < crit)},
        "martingale_max_z": {"value": float(np.max(np.abs(zs))),
                             "threshold": 3.0,
                             "passed": bool(np.max(np.abs(zs)) <= 3.0)},
        "terminal_price_gap": {"value": price_gap, "threshold": 10.0 * scale,
                               "passed": bool(price_gap <= 10.0 * scale)},
    }
    summary["z_scores"] = [float(z) for z in zs]
    summary["mean_pinning_gap"] = float(np.mean(bridge_batch.pinning_gaps))
    summary["pinning_scale"] = scale
    summary["gates"] = gates
    summary["all_passed"] = all(g["passed"] for g in gates.values())
    return summary
