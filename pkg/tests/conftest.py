"""Shared fixtures: canonical region sets and small problem builders."""

from __future__ import annotations

import os

import numpy as np
import pytest

from hiercontrol.grids import Field, SpaceTimeField, build_cutoff, build_grid, build_time_grid
from hiercontrol.nash import HierarchicProblem
from hiercontrol.solvers import nonlinearity_preset

SCENARIO_DIR = os.path.join(os.path.dirname(__file__), "..", "scenarios")

REGIONS_1D = {
    "leader": ((0.4, 0.6), (0.3, 0.7)),
    "follower1": ((0.15, 0.3), (0.1, 0.35)),
    "follower2": ((0.7, 0.85), (0.65, 0.9)),
    "tracking": ((0.5, 0.8), (0.45, 0.85)),
}

REGIONS_2D = {
    "leader": ([[0.35, 0.65]] * 2, [[0.25, 0.75]] * 2),
    "follower1": ([[0.15, 0.35]] * 2, [[0.05, 0.45]] * 2),
    "follower2": ([[0.65, 0.85]] * 2, [[0.55, 0.95]] * 2),
    "tracking": ([[0.4, 0.8]] * 2, [[0.3, 0.9]] * 2),
}


def scenario_path(name: str) -> str:
    return os.path.join(SCENARIO_DIR, f"{name}.cfg")


def standard_cutoffs(grid):
    table = REGIONS_1D if grid.dim == 1 else REGIONS_2D
    return {k: build_cutoff(grid, inner, outer) for k, (inner, outer) in table.items()}


def make_problem(
    cells: int = 16,
    steps: int = 32,
    dim: int = 1,
    preset: str = "heat",
    params: dict | None = None,
    mu: tuple = (20.0, 20.0),
    nu: tuple = (1.0, 1.0),
    y0_amp: float = 0.3,
    target_amp: float = 0.1,
    T: float = 1.0,
) -> HierarchicProblem:
    """Problem on the standard region set with sine data and bump targets."""
    grid = build_grid(dim, cells)
    tgrid = build_time_grid(T, steps)
    cutoffs = standard_cutoffs(grid)
    y0 = np.full(grid.n_nodes, y0_amp)
    for ax in range(dim):
        y0 *= np.sin(np.pi * grid.nodes[:, ax])
    y0[grid.boundary] = 0.0  # sin(pi) leaves 1e-16 dust; Dirichlet wants exact zeros
    tvals = []
    for center, sgn in ((0.6, 1.0), (0.7, -1.0)):
        prof = np.full(grid.n_nodes, sgn * target_amp)
        for ax in range(dim):
            r = (grid.nodes[:, ax] - center) / 0.125
            bump = np.zeros(grid.n_nodes)
            inside = np.abs(r) < 1.0
            bump[inside] = np.exp(1.0 - 1.0 / (1.0 - r[inside] ** 2))
            prof *= bump
        tvals.append(SpaceTimeField(grid, tgrid, np.tile(prof, (tgrid.n_slices, 1))))
    return HierarchicProblem(
        grid=grid,
        tgrid=tgrid,
        nl=nonlinearity_preset(preset, **(params or {})),
        cutoffs=cutoffs,
        mu=mu,
        nu=nu,
        y0=Field(grid, y0),
        targets=(tvals[0], tvals[1]),
        name=f"test-{preset}-{cells}x{steps}",
    )


@pytest.fixture
def lq_small():
    return make_problem(cells=16, steps=32)


@pytest.fixture
def grid16():
    return build_grid(1, 16)


@pytest.fixture
def tgrid32():
    return build_time_grid(1.0, 32)
