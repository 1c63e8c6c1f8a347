"""Shared fixtures: the canonical instances and their solved bundles."""

import numpy as np
import pytest

from frontsteer.grid import DensityField, ScalarField, TorusGrid, VecField
from frontsteer.model import CostModel, IsotropicSpeed
from frontsteer.pdopt import OptimalBundle, ProblemInstance, SolverConfig, optimize


def make_uniform_problem(nx=64, nt=65, dim=1, p=3.0, m0_scale=1.0):
    """Unit-speed, power-cost instance with flat data; closed-form optimum
    m = m0_scale, f = k(m0_scale), u = (T - t) * f."""
    shape = (nx,) * dim
    grid = TorusGrid(dim, shape, nt, 1.0)
    return ProblemInstance(grid=grid, speed=IsotropicSpeed(dim, 1.0),
                           cost=CostModel(p), u_T=np.zeros(shape),
                           m0=np.full(shape, m0_scale))


def closed_form_uniform_bundle(problem):
    """The analytic optimum of the uniform instance as discrete fields."""
    grid = problem.grid
    level = float(problem.m0.flat[0])
    q = problem.cost.q
    f_star = problem.cost.kappa ** (1.0 - q) * level ** (q - 1.0)
    tt = grid.times().reshape(-1, *([1] * grid.dim))
    u = ScalarField(grid, np.broadcast_to((1.0 - tt) * f_star, (grid.nt, *grid.nx)).copy())
    f = ScalarField(grid, np.full((grid.nt, *grid.nx), f_star))
    m = DensityField(grid, np.full((grid.nt, *grid.nx), level))
    w = VecField(grid, np.zeros((grid.nt, *grid.nx, grid.dim)))
    return u, f, m, w


@pytest.fixture(scope="session")
def uniform_problem():
    return make_uniform_problem()


@pytest.fixture(scope="session")
def uniform_bundle(uniform_problem) -> OptimalBundle:
    return optimize(uniform_problem,
                    SolverConfig(max_iters=5000, tol_gap=1e-3, tol_cont=1e-4))
