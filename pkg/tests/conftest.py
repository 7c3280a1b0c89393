####
#
# shared fixtures: small simulated populations, hand made contexts and a grid search oracle
#

import numpy as np
import pandas as pd
import pytest

from jaipw_modules.data_model import CombinedSample, ExternalSample, DiseaseModelSpec, VariableRoles, validate_roles
from jaipw_modules.sim_harness import (
    SimScenario,
    build_reference_tables,
    covariate_names,
    generate_population,
    scenario_roles
)


def simulated_context(scenario, replicate_index=0, main_effects_only=False, require_auxiliary=True):
    """validated context of one simulated population"""

    internal, external = generate_population(scenario, replicate_index)
    return validate_roles(internal, external, scenario_roles(scenario, main_effects_only),
                          DiseaseModelSpec(covariate_names), require_auxiliary=require_auxiliary,
                          population_size=scenario.population_size)


@pytest.fixture(scope="session")
def setup_1_scenario():
    return SimScenario(setup=1, population_size=4000, seed=2024, replications=2)


@pytest.fixture(scope="session")
def setup_1_population(setup_1_scenario):
    return generate_population(setup_1_scenario, 0)


@pytest.fixture(scope="session")
def setup_1_reference(setup_1_scenario):
    return build_reference_tables(setup_1_scenario)


@pytest.fixture(scope="session")
def setup_1_context(setup_1_scenario):
    return simulated_context(setup_1_scenario)


@pytest.fixture(scope="session")
def context_factory():
    """seed -> validated setup 1 context of a small population"""

    def factory(seed, population_size=2000):
        scenario = SimScenario(setup=1, population_size=population_size, seed=seed, replications=2)
        return simulated_context(scenario)

    return factory


@pytest.fixture
def strata_context():
    """
    Ten selected rows of a single cohort in a population of 100, six of them in stratum G = 1
    """

    frame = pd.DataFrame({
        "id": np.arange(10),
        "D": [0, 1] * 5,
        "Z1": np.linspace(-1, 1, 10),
        "G": [1] * 6 + [0] * 4,
        "S1": [1] * 10
    })
    external = pd.DataFrame({
        "id": np.arange(100, 120),
        "D": [0, 1] * 10,
        "Z1": np.linspace(-2, 2, 20),
        "G": [0, 1] * 10,
        "pi_ext": [0.2] * 20
    })
    roles = VariableRoles({"S1": ["G"]}, ["Z1"], list(), "D")

    return validate_roles(CombinedSample(frame, ["S1"]), ExternalSample(external), roles, population_size=100)


@pytest.fixture(scope="session")
def grid_oracle():
    """
    Maximize a concave function by refining a grid around its best point

    The objective gets a candidate matrix (one row per point) and returns
    one value per row.
    """

    def maximize(objective, center, half_width=3.0, points=61, rounds=6):
        center = np.asarray(center, dtype=float)
        width = half_width
        for _ in range(rounds):
            axes = [np.linspace(c - width, c + width, points) for c in center]
            mesh = np.meshgrid(*axes, indexing="ij")
            candidates = np.column_stack([m.ravel() for m in mesh])
            center = candidates[int(np.argmax(objective(candidates)))]
            width = 3 * (2 * width / (points - 1))
        return center

    return maximize

# EOF
