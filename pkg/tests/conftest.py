"""Shared builds for the test suite.

The three expensive objects (the solved uniform-belief equilibrium, a solved
Gaussian-belief fixed point and the closed-form linear-map surface) are
session-scoped so unit tests and the acceptance battery reuse one build each.
"""

import math
from types import SimpleNamespace

import numpy as np
import pytest

import kyleback as kb


@pytest.fixture(scope="session")
def uniform_build():
    """Converged uniform(10,20) equilibrium with its assembled surface."""
    nu = kb.uniform_belief(10.0, 20.0)
    params = kb.params_for_belief(nu)
    result = kb.picard_solve(nu, params)
    assert result.converged
    rep = result.representation
    dens = result.mu_density
    gamma00_eff = rep.gamma00 + math.log(dens.renorm) / params.gamma
    rsol = kb.solve_R(result.potential, params)
    surface = kb.assemble_surfaces(rsol, result.potential, params,
                                   anchor=(rep.chi00, gamma00_eff))
    return SimpleNamespace(nu=nu, params=params, result=result,
                           pot=result.potential, rep=rep, dens=dens,
                           gamma00_eff=gamma00_eff, rsol=rsol, surface=surface)


@pytest.fixture(scope="session")
def gaussian_solve():
    """Converged fixed point for the standard Gaussian belief around 1."""
    nu = kb.gaussian_belief(1.0, 1.0)
    params = kb.params_for_belief(nu)
    result = kb.picard_solve(nu, params)
    assert result.converged
    return SimpleNamespace(nu=nu, params=params, result=result)


@pytest.fixture(scope="session")
def linear_build():
    """Closed-form linear price map g = lam*xi + m and its exact surface.

    lam solves lam^2 + gamma*var*lam - var/(sigma^2 T) = 0 for the Gaussian
    belief N(m, var); with these coefficients the slope field is constant and
    every surface has a closed form the tests compare against.
    """
    nu = kb.gaussian_belief(1.0, 1.0)
    params = kb.params_for_belief(nu)
    lam, m = kb.gaussian_benchmark(params, 1.0, 1.0)
    grid = kb.uniform_grid(4.0, 2049)
    pot = kb.linear_potential(grid, lam, m)
    rep = kb.solve_representation(pot, params)
    rsol = kb.solve_R(pot, params)
    surface = kb.assemble_surfaces(rsol, pot, params,
                                   anchor=(rep.chi00, rep.gamma00))
    return SimpleNamespace(nu=nu, params=params, lam=lam, m=m, pot=pot,
                           rep=rep, rsol=rsol, surface=surface)


@pytest.fixture(scope="session")
def risk_neutral_build():
    """gamma = 0 surface over the zero price map: pure scaled Brownian state."""
    params = kb.ModelParams(T=1.0, sigma=0.5, gamma=0.0, l_cap=1.0)
    pot = kb.zero_potential(kb.uniform_grid(4.0, 1025), l_cap=1.0)
    rep = kb.solve_representation(pot, params)
    surface = kb.assemble_surfaces(kb.solve_R(pot, params), pot, params)
    return SimpleNamespace(params=params, pot=pot, rep=rep, surface=surface)
