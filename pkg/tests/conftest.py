"""Shared fixtures: small synthetic panels."""

import numpy as np
import pytest

from effdid import PanelDataset, PanelSchema, SimConfig, generate_dgp, write_panel_csv
from effdid.rng import simulation_stream


def random_panel(rng: np.random.Generator, n_units: int = 40, n_periods: int = 4, n_covariates: int = 1,
                 continuous: bool = False, staggered: bool = True) -> PanelDataset:
    """
    Panel with nobody treated in period 1 and treatment that never switches off.

    With `continuous` the treated periods carry a positive dose instead of 1.
    """
    adoption = rng.integers(2, n_periods + 2, size=n_units)  # n_periods + 1 = never treated
    if not staggered:
        adoption = np.where(rng.random(n_units) < 0.5, 2, n_periods + 1)
    periods = np.arange(1, n_periods + 1)
    treated = periods[None, :] >= adoption[:, None]
    doses = rng.uniform(0.5, 2.0, size=(n_units, n_periods)) if continuous else np.ones((n_units, n_periods))
    D = np.where(treated, doses, 0.0)
    X = rng.standard_normal((n_units, n_covariates)) if n_covariates else None
    Y = rng.standard_normal((n_units, n_periods)) + 0.5 * treated + periods[None, :] * 0.3
    return PanelDataset.from_arrays(outcomes=Y, treatments=D, covariates=X)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def small_panel(rng):
    return random_panel(rng, n_units=60, n_periods=4)


@pytest.fixture
def sim_panel():
    """One draw of the built-in design, N=500, T=4."""
    return generate_dgp(SimConfig(n_units=500, n_periods=4), simulation_stream(11, 0))


@pytest.fixture
def panel_csv(tmp_path, sim_panel):
    """The simulated panel written to CSV; returns (path, schema)."""
    path = tmp_path / "panel.csv"
    schema = write_panel_csv(sim_panel.panel, path,
                             PanelSchema("unit", "period", "y", ("d",), ("x",)))
    return path, schema
