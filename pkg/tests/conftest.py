"""Shared fixtures.

The workhorse is pure diffusion (f=0, beta=1) on the unit interval: the
sampled sine is an exact eigenvector of the discrete operator with
eigenvalue -(2/h^2)(1 - cos(pi h)) ~ -pi^2/2, so analytic decay formulas
hold to discretization accuracy and make cheap oracles.
"""

import numpy as np
import pytest

from decrem import DensityField, SolverConfig, assemble_Q, constant_model, make_grid


def sampled_sine(grid):
    x = grid.axis_centers(0)
    return DensityField(grid, np.sin(np.pi * x))


@pytest.fixture
def heat():
    return constant_model([0.0], [[1.0]])


@pytest.fixture
def grid64():
    return make_grid(1, [0.0], [1.0], [64])


@pytest.fixture
def grid128():
    return make_grid(1, [0.0], [1.0], [128])


@pytest.fixture
def grid256():
    return make_grid(1, [0.0], [1.0], [256])


@pytest.fixture(scope="session")
def qhat128():
    """Assembled heat propagator, N=128, T=0.5, implicit-euler, 128 steps."""
    grid = make_grid(1, [0.0], [1.0], [128])
    model = constant_model([0.0], [[1.0]])
    return assemble_Q(model, grid, SolverConfig(n_steps=128), 0.5)
