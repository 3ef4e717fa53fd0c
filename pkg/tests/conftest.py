"""Shared fixtures. The default second-best solve is expensive enough to
cache for the whole session; everything downstream treats it as read-only."""

from __future__ import annotations

import dataclasses

import pytest

from contract_solve import Grid, default_params, howard_solve


@pytest.fixture(scope="session")
def params():
    return default_params()


@pytest.fixture(scope="session")
def grid():
    return Grid.make()


@pytest.fixture(scope="session")
def sb(params, grid):
    return howard_solve(params, grid)


@pytest.fixture(scope="session")
def sb_for_sigma(params, grid, sb):
    """Solve-per-sigma factory with a session cache (default sigma reuses sb)."""
    cache = {params.sigma: sb}

    def solve(sigma: float):
        if sigma not in cache:
            cache[sigma] = howard_solve(
                dataclasses.replace(params, sigma=sigma), grid)
        return cache[sigma]

    return solve
