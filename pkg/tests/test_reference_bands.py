
import numpy as np
import pandas as pd

from jaipw_modules.reference_bands import band_applies, check_reference_bands, reference_band_types, slopes
from jaipw_modules.sim_harness import SimScenario, SimStudyResult


def study_result(scenario, values):
    """result holding only the given (method, term, metric) -> value entries"""

    rows = dict()
    for (method, term, metric), value in values.items():
        rows.setdefault((method, term), {"method": method, "term": term})[metric] = value

    return SimStudyResult(scenario, pd.DataFrame(list(rows.values())), pd.DataFrame(), dict())


def band(name):
    return next(b for b in reference_band_types if b["name"] == name)


class TestBandApplies:

    def test_scenario_keys_must_match(self):
        correct = SimScenario(setup=1, population_size=1000)
        misspecified = SimScenario(setup=1, misspec_selection="all", population_size=1000)

        assert band_applies(band("JPL bias, correct selection"), correct)
        assert not band_applies(band("JPL bias, correct selection"), misspecified)
        assert band_applies(band("naive bias"), misspecified)
        assert not band_applies(band("naive bias"), SimScenario(setup=2, population_size=1000))


class TestCheckReferenceBands:

    def test_bands_met(self):
        values = dict()
        for index, term in enumerate(slopes):
            values[("naive", term, "relative_bias_pct")] = [24.0, 41.0, 54.0][index]
        result = study_result(SimScenario(setup=1, misspec_selection="all", population_size=1000), values)

        rows = check_reference_bands(result)

        assert [row["term"] for row in rows] == slopes
        assert all(row["met"] for row in rows)

    def test_band_missed(self):
        values = {("JPL", "Z2", "relative_bias_pct"): 12.0}
        result = study_result(SimScenario(setup=1, misspec_selection="all", population_size=1000), values)

        rows = check_reference_bands(result)

        assert len(rows) == 1
        assert rows[0]["band"] == "JPL bias, all selection misspecified"
        assert rows[0]["lower"] == 25.0
        assert rows[0]["met"] is False

    def test_missing_value_is_not_met(self):
        values = {("JPL", "Z1", "coverage"): 0.95, ("JPL", "Z2", "coverage"): np.nan,
                  ("JPL", "Z3", "coverage"): 0.99}
        result = study_result(SimScenario(setup=1, population_size=1000), values)

        coverage = [row for row in check_reference_bands(result) if row["metric"] == "coverage"]

        assert [row["met"] for row in coverage] == [True, False, False]

    def test_methods_not_in_the_study_are_skipped(self):
        result = study_result(SimScenario(setup=2, misspec_selection="all", population_size=1000),
                              {("naive", "Z1", "relative_bias_pct"): 20.0})

        assert check_reference_bands(result) == list()

# EOF
