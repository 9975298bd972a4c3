"""Command-line pipeline: fixed point -> PDE surfaces -> reports -> simulation.

Configuration is a single JSON file with blocks ``model``, ``belief``,
``grids``, ``fixed_point``, ``simulate`` and ``outputs``; omitted fields fall
back to the defaults below (market constants (T, sigma, gamma) = (1, 0.5,
0.1), standard Gaussian belief around 1).  Every command writes the fully
resolved config next to its artifacts and produces byte-identical outputs
when re-run with the same inputs.

Artifacts are CSV (comma separated, header row, 12+ significant digits) and
JSON.  Exit codes: 0 success, 2 fixed point did not converge, 3 slope-budget
violation, 4 required artifact missing, 5 statistical gate failure.
"""

from __future__ import annotations

import json
import logging
import math
import os
from copy import deepcopy

import click
import numpy as np

from .beliefs import belief_from_config
from .equilibrium import (conditional_value_cdf, expected_utility,
                          gaussian_benchmark, impact_and_depth)
from .errors import (BudgetError, ConvergenceError, DegenerateDistributionError,
                     GridExitError, KyleBackError, MissingArtifactError)
from .fixed_point import (Representation, params_for_belief, picard_solve,
                          save_fixed_point_csvs, terminal_density)
from .pde import (ModelParams, assemble_surfaces, check_system_residual,
                  martingale_generator_residual, save_surface_field_csv,
                  solve_R)
from .potential import load_potential_csv
from .simulate import (BatchConfig, evaluate_gates, simulate_bridge,
                       simulate_xi0, wealth_decomposition)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_NO_CONVERGENCE = 2
EXIT_BUDGET = 3
EXIT_MISSING_ARTIFACT = 4
EXIT_GATE_FAILURE = 5

DEFAULT_PROBES = [[0.0, 0.0], [0.5, 0.0], [0.95, 0.0],
                  [0.5, 0.5], [0.5, -0.5], [0.95, 0.5], [0.95, -0.5]]

DEFAULT_CONFIG = {
    "model": {"T": 1.0, "sigma": 0.5, "gamma": 0.1},
    "belief": {"kind": "gaussian", "mean": 1.0, "stdev": 1.0},
    "grids": {"xi_nodes": 2049, "xi_halfwidth": None, "t_steps": 512},
    "fixed_point": {"tol": 1e-6, "max_iter": 200, "damping": 1.0},
    "simulate": {"n_paths": 10000, "n_steps": 512, "seed": 0,
                 "min_sample": 100, "fixed_v": None, "full_paths": False},
    "outputs": {"directory": "out", "surface_stride_t": 8,
                "surface_stride_xi": 8, "probes": DEFAULT_PROBES},
}


def _merge(base: dict, override: dict) -> dict:
    out = deepcopy(base)
    for key, val in (override or {}).items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = deepcopy(val)
    return out


def resolve_config(path: str | None, out: str | None = None,
                   seed: int | None = None, paths: int | None = None) -> dict:
    """Load, default-fill and apply flag overrides; returns the full config."""
    raw = {}
    if path is not None:
        with open(path) as fh:
            raw = json.load(fh)
    cfg = _merge(DEFAULT_CONFIG, raw)
    if out is not None:
        cfg["outputs"]["directory"] = out
    if seed is not None:
        cfg["simulate"]["seed"] = int(seed)
    if paths is not None:
        cfg["simulate"]["n_paths"] = int(paths)
    return cfg


def _write_json(path: str, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _prepare_outdir(cfg: dict) -> str:
    outdir = cfg["outputs"]["directory"]
    os.makedirs(outdir, exist_ok=True)
    _write_json(os.path.join(outdir, "config_echo.json"), cfg)
    return outdir


def _model_pieces(cfg: dict):
    """Belief and validated model constants from a resolved config."""
    nu = belief_from_config(cfg["belief"])
    mdl = cfg["model"]
    params = params_for_belief(nu, T=mdl["T"], sigma=mdl["sigma"],
                               gamma=mdl["gamma"])
    return nu, params


def _load_artifacts(cfg: dict, outdir: str):
    """Potential + representation written by the fixed-point command."""
    g_path = os.path.join(outdir, "g_star.csv")
    r_path = os.path.join(outdir, "representation.json")
    for p in (g_path, r_path):
        if not os.path.exists(p):
            raise MissingArtifactError(
                f"required artifact {p} not found; run the fixed-point "
                "command first")
    with open(r_path) as fh:
        info = json.load(fh)
    mdl = cfg["model"]
    params = ModelParams(T=mdl["T"], sigma=mdl["sigma"], gamma=mdl["gamma"],
                         l_cap=info["l_cap"])
    pot = load_potential_csv(g_path, l_cap=info["l_cap"],
                             budget=params.gamma * params.sigma ** 2 * params.T)
    rep = Representation(chi00=info["chi00"], gamma00=info["gamma00"],
                         g_min=info["g_min"], grad_norm=info["grad_norm"])
    return pot, rep, info, params


def _build_surface(cfg: dict, pot, rep, info, params):
    rsol = solve_R(pot, params, t_steps=cfg["grids"]["t_steps"])
    anchor = None
    if params.gamma > 0.0:
        anchor = (rep.chi00, info["gamma00_eff"])
    return rsol, assemble_surfaces(rsol, pot, params, anchor=anchor)


# ---------------------------------------------------------------------------
# command bodies (return exit codes)

def run_fixed_point(cfg: dict) -> int:
    outdir = _prepare_outdir(cfg)
    nu, params = _model_pieces(cfg)
    fp = cfg["fixed_point"]
    grids = cfg["grids"]
    result = picard_solve(
        nu, params, tol=fp["tol"], max_iter=fp["max_iter"],
        damping=fp["damping"], n_nodes=grids["xi_nodes"],
        grid_halfwidth=grids["xi_halfwidth"], checkpoint_dir=outdir)
    save_fixed_point_csvs(result, outdir)
    rep = result.representation
    renorm = float(result.renorm_factors[-1])
    gamma00_eff = rep.gamma00
    if params.gamma > 0.0:
        gamma00_eff = rep.gamma00 + math.log(renorm) / params.gamma
    _write_json(os.path.join(outdir, "representation.json"), {
        "chi00": rep.chi00, "gamma00": rep.gamma00, "g_min": rep.g_min,
        "grad_norm": rep.grad_norm, "gamma00_eff": gamma00_eff,
        "renorm": renorm, "l_cap": params.l_cap,
        "iterations": result.iterations, "converged": result.converged,
        "final_residual": float(result.residuals[-1])})
    if not result.converged:
        click.echo(f"fixed point did not converge in {result.iterations} "
                   f"iterations (residual {result.residuals[-1]:.3g})",
                   err=True)
        return EXIT_NO_CONVERGENCE
    logger.info("fixed point converged in %d iterations", result.iterations)
    return EXIT_OK


def run_pde(cfg: dict) -> int:
    outdir = _prepare_outdir(cfg)
    pot, rep, info, params = _load_artifacts(cfg, outdir)
    rsol, surface = _build_surface(cfg, pot, rep, info, params)
    st = cfg["outputs"]["surface_stride_t"]
    sx = cfg["outputs"]["surface_stride_xi"]
    for name in ("R", "P", "Gamma", "Chi"):
        save_surface_field_csv(surface, name,
                               os.path.join(outdir, f"surface_{name}.csv"),
                               stride_t=st, stride_xi=sx)
    res_gamma, res_chi = check_system_residual(surface)
    _write_json(os.path.join(outdir, "pde_diagnostics.json"), {
        "identity_residual": surface.identity_residual,
        "system_residual_gamma": res_gamma,
        "system_residual_chi": res_chi,
        "pricing_residual": martingale_generator_residual(surface),
        "anchor_gap_A": surface.anchor_gap[0],
        "anchor_gap_Atilde": surface.anchor_gap[1],
        "floor_activated": rsol.floor_activated,
        "step_halvings": rsol.halvings})
    return EXIT_OK


def run_report(cfg: dict) -> int:
    outdir = _prepare_outdir(cfg)
    pot, rep, info, params = _load_artifacts(cfg, outdir)
    _, surface = _build_surface(cfg, pot, rep, info, params)
    st = cfg["outputs"]["surface_stride_t"]
    sx = cfg["outputs"]["surface_stride_xi"]

    report = impact_and_depth(surface)
    t_idx = np.r_[np.arange(0, len(report.t_grid) - 1, st),
                  len(report.t_grid) - 1]
    x_idx = np.r_[np.arange(0, len(report.xi_grid) - 1, sx),
                  len(report.xi_grid) - 1]
    sel = np.ix_(t_idx, x_idx)
    rows = np.column_stack([
        np.repeat(report.t_grid[t_idx], len(x_idx)),
        np.tile(report.xi_grid[x_idx], len(t_idx)),
        report.price_impact[sel].ravel(), report.depth[sel].ravel(),
        report.impact_drift[sel].ravel(), report.depth_drift[sel].ravel()])
    np.savetxt(os.path.join(outdir, "impact_depth.csv"), rows, delimiter=",",
               header="t,xi,impact,depth,impact_drift,depth_drift",
               comments="", fmt="%.12e")

    cond_rows = []
    refused = []
    for t_probe, xi_probe in cfg["outputs"]["probes"]:
        try:
            dist = conditional_value_cdf(surface, pot, float(t_probe),
                                         float(xi_probe))
        except DegenerateDistributionError as exc:
            msg = f"probe (t={t_probe}, xi={xi_probe}) refused: {exc}"
            click.echo(msg, err=True)
            refused.append(msg)
            continue
        for v, c in zip(dist.v_nodes, dist.cdf_nodes):
            cond_rows.append((t_probe, xi_probe, v, c))
    np.savetxt(os.path.join(outdir, "conditional_cdf.csv"),
               np.asarray(cond_rows, dtype=float), delimiter=",",
               header="t,xi,v,cdf", comments="", fmt="%.12e")

    g_lo, g_hi = pot.range_of_g()
    span = g_hi - g_lo
    v_grid = np.linspace(g_lo + 1e-6 * span, g_hi - 1e-6 * span, 41)
    util = [expected_utility(pot, rep, params, float(v)) for v in v_grid]
    np.savetxt(os.path.join(outdir, "utility.csv"),
               np.column_stack([v_grid, util]), delimiter=",",
               header="v,expected_utility", comments="", fmt="%.12e")

    summary = {"probes": cfg["outputs"]["probes"], "refused": refused,
               "value_range": [g_lo, g_hi]}
    if cfg["belief"].get("kind", "gaussian") == "gaussian":
        lam, intercept = gaussian_benchmark(
            params, cfg["belief"].get("mean", 1.0),
            cfg["belief"].get("stdev", 1.0))
        window = np.abs(pot.grid) <= 2.0
        fit = np.polyfit(pot.grid[window], pot.g[window], 1)
        summary["gaussian_closed_form"] = {"slope": lam, "intercept": intercept}
        summary["gaussian_fit"] = {"slope": float(fit[0]),
                                   "intercept": float(fit[1])}
    _write_json(os.path.join(outdir, "report_summary.json"), summary)
    return EXIT_OK


def _dump_paths(batch, path: str) -> None:
    n, m1 = batch.xi.shape
    rows = np.column_stack([
        np.repeat(np.arange(n), m1), np.tile(batch.t_grid, n),
        batch.B.ravel(), batch.Y.ravel(), batch.xi.ravel(), batch.P.ravel()])
    np.savetxt(path, rows, delimiter=",", header="path,t,B,Y,xi,P",
               comments="", fmt="%.12e")


def run_simulate(cfg: dict) -> int:
    outdir = _prepare_outdir(cfg)
    pot, rep, info, params = _load_artifacts(cfg, outdir)
    _, surface = _build_surface(cfg, pot, rep, info, params)
    nu, _ = _model_pieces(cfg)
    dens = terminal_density(pot, rep, params)
    sim = cfg["simulate"]
    batch_cfg = BatchConfig(n_paths=sim["n_paths"], n_steps=sim["n_steps"],
                            seed=sim["seed"], fixed_v=sim["fixed_v"])
    xi0 = simulate_xi0(surface, batch_cfg)
    bridge = simulate_bridge(surface, pot, nu, batch_cfg)
    summary = evaluate_gates(xi0, bridge, surface, pot, dens, params,
                             min_sample=sim["min_sample"])
    wd = wealth_decomposition(bridge, surface, pot, rep, params)
    summary["wealth_identity_gap"] = {
        "mean": float(wd.gaps.mean()), "max": float(wd.gaps.max()),
        "p99": float(np.quantile(wd.gaps, 0.99))}
    _write_json(os.path.join(outdir, "batch_summary.json"), summary)
    if sim["full_paths"]:
        _dump_paths(xi0, os.path.join(outdir, "paths_xi0.csv"))
        _dump_paths(bridge, os.path.join(outdir, "paths_bridge.csv"))
    if summary["all_passed"] is None:
        click.echo(summary["note"])
        return EXIT_OK
    if not summary["all_passed"]:
        failed = [name for name, g in summary["gates"].items()
                  if not g["passed"]]
        click.echo("statistical gates failed: " + ", ".join(failed), err=True)
        return EXIT_GATE_FAILURE
    return EXIT_OK


def run_all(cfg: dict) -> int:
    for step in (run_fixed_point, run_pde, run_report, run_simulate):
        code = step(cfg)
        if code != EXIT_OK:
            return code
    return EXIT_OK


# ---------------------------------------------------------------------------
# click wiring

def _common_options(fn):
    fn = click.option("--config", "config_path", type=click.Path(exists=True),
                      default=None, help="JSON run configuration.")(fn)
    fn = click.option("--out", type=click.Path(), default=None,
                      help="Output directory (overrides config).")(fn)
    fn = click.option("--seed", type=int, default=None,
                      help="Simulation seed (overrides config).")(fn)
    fn = click.option("--paths", type=int, default=None,
                      help="Simulation path count (overrides config).")(fn)
    fn = click.option("--quiet", is_flag=True, default=False,
                      help="Only warnings and errors on stderr.")(fn)
    return fn


def _dispatch(ctx, body, config_path, out, seed, paths, quiet):
    logging.basicConfig(level=logging.WARNING if quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(config_path, out=out, seed=seed, paths=paths)
        code = body(cfg)
    except BudgetError as exc:
        click.echo(f"slope budget violation: {exc}", err=True)
        code = EXIT_BUDGET
    except MissingArtifactError as exc:
        click.echo(str(exc), err=True)
        code = EXIT_MISSING_ARTIFACT
    except ConvergenceError as exc:
        click.echo(f"fixed point diverged: {exc}", err=True)
        code = EXIT_NO_CONVERGENCE
    except (GridExitError, KyleBackError) as exc:
        click.echo(str(exc), err=True)
        code = 1
    ctx.exit(code)


@click.group()
def main() -> None:
    """Equilibrium solver for an insider-trading market model."""


@main.command("fixed-point")
@_common_options
@click.pass_context
def cli_fixed_point(ctx, config_path, out, seed, paths, quiet):
    """Solve the transport fixed point; write g_star, residuals, density."""
    _dispatch(ctx, run_fixed_point, config_path, out, seed, paths, quiet)


@main.command("pde")
@_common_options
@click.pass_context
def cli_pde(ctx, config_path, out, seed, paths, quiet):
    """Solve the pricing PDE system and write the surface grids."""
    _dispatch(ctx, run_pde, config_path, out, seed, paths, quiet)


@main.command("report")
@_common_options
@click.pass_context
def cli_report(ctx, config_path, out, seed, paths, quiet):
    """Emit impact/depth, conditional-CDF probes and utility curves."""
    _dispatch(ctx, run_report, config_path, out, seed, paths, quiet)


@main.command("simulate")
@_common_options
@click.pass_context
def cli_simulate(ctx, config_path, out, seed, paths, quiet):
    """Run Monte-Carlo batches and the statistical gate battery."""
    _dispatch(ctx, run_simulate, config_path, out, seed, paths, quiet)


@main.command("all")
@_common_options
@click.pass_context
def cli_all(ctx, config_path, out, seed, paths, quiet):
    """Full pipeline: fixed-point, pde, report, simulate."""
    _dispatch(ctx, run_all, config_path, out, seed, paths, quiet)


if __name__ == "__main__":
    main()
