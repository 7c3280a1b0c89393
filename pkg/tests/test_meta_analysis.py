
import numpy as np
import pandas as pd
import pytest

from jaipw_modules.classes import EstimateReport
from jaipw_modules.data_model import CombinedSample, ExternalSample, VariableRoles, validate_roles
from jaipw_modules.errors import InvalidArgument, NoOuterConvergence, ZeroVariance
from jaipw_modules.estimation_methods import EstimationOptions
from jaipw_modules.jaipw import JaipwConfig
from jaipw_modules.meta_analysis import MetaInput, combine_fixed_effects, fit_per_cohort
from jaipw_modules.solvers import FlexHyper


def scalar_meta(estimates, variances, overlap=False):
    return MetaInput(["S%d" % (i + 1) for i in range(len(estimates))], ["Z1"],
                     np.reshape(estimates, (-1, 1)), np.reshape(variances, (-1, 1, 1)), overlap=overlap)


class TestCombineFixedEffects:

    def test_equal_variances_average(self):
        combined = combine_fixed_effects(scalar_meta([1.0, 3.0], [1.0, 1.0]))

        assert combined.estimate[0] == pytest.approx(2.0)
        assert combined.se[0] == pytest.approx(1 / np.sqrt(2))
        assert combined.variance_flavor == "fixed_effects"

    def test_precision_weights(self):
        combined = combine_fixed_effects(scalar_meta([0.0, 1.0, 1.0], [1.0, 4.0, 4.0]))

        # weights 1, 1/4, 1/4
        assert combined.estimate[0] == pytest.approx(0.5 / 1.5)
        assert combined.se[0] == pytest.approx(np.sqrt(1 / 1.5))
        np.testing.assert_allclose(combined.diagnostics["cohort_weights"][:, 0], [2 / 3, 1 / 6, 1 / 6])

    def test_single_cohort_passes_through(self):
        combined = combine_fixed_effects(scalar_meta([0.7], [0.09]))

        assert combined.estimate[0] == pytest.approx(0.7)
        assert combined.se[0] == pytest.approx(0.3)

    def test_convex_combination_with_smaller_standard_error(self):
        rng = np.random.default_rng(4)
        estimates = rng.normal(0, 1, (4, 3))
        variances = np.array([np.diag(rng.uniform(0.1, 2.0, 3)) for _ in range(4)])
        meta = MetaInput(["a", "b", "c", "d"], ["x", "y", "z"], estimates, variances)

        combined = combine_fixed_effects(meta)

        assert np.all(combined.estimate >= estimates.min(axis=0) - 1e-12)
        assert np.all(combined.estimate <= estimates.max(axis=0) + 1e-12)
        smallest_se = np.sqrt(np.array([np.diag(v) for v in variances]).min(axis=0))
        assert np.all(combined.se <= smallest_se)

    def test_zero_variance(self):
        with pytest.raises(ZeroVariance):
            combine_fixed_effects(scalar_meta([1.0, 2.0], [1.0, 0.0]))

    def test_overlap_is_flagged(self):
        combined = combine_fixed_effects(scalar_meta([1.0, 2.0], [1.0, 1.0], overlap=True))

        assert combined.diagnostics["overlap_warning"] is True


class TestMetaInput:

    def test_from_reports(self):
        reports = [EstimateReport(["Z1"], [1.0], "naive", variance=[[0.5]]),
                   EstimateReport(["Z1"], [2.0], "naive", variance=[[0.25]])]
        meta = MetaInput.from_reports(reports)

        assert meta.cohorts == ["1", "2"]
        assert meta.variances.shape == (2, 1, 1)

    def test_no_reports(self):
        with pytest.raises(InvalidArgument):
            MetaInput.from_reports(list())

    def test_shape_mismatch(self):
        with pytest.raises(InvalidArgument):
            MetaInput(["S1", "S2"], ["Z1"], [[1.0, 2.0, 3.0]], np.ones((2, 1, 1)))


class TestFitPerCohort:

    def test_every_cohort_is_estimated(self, setup_1_context):
        meta = fit_per_cohort(setup_1_context, "naive")

        assert meta.cohorts == ["S1", "S2", "S3"]
        assert meta.estimates.shape == (3, 4)
        assert meta.failures == dict()
        assert meta.overlap is True
        for cohort, report in zip(meta.cohorts, meta.reports):
            assert report.diagnostics["cohort"] == cohort
            assert report.effective_sample_size == int(np.sum(setup_1_context.cohort_indicator(cohort)))

    def test_failing_cohort_is_skipped(self):
        frame = pd.DataFrame({
            "D": [0, 1] * 10,
            "Z1": np.linspace(-1, 1, 20),
            "S1": [1] * 20,
            "S2": [0] * 20
        })
        external = ExternalSample(pd.DataFrame({"Z1": [0.0, 0.5], "pi_ext": [0.5, 0.5]}))
        roles = VariableRoles({"S1": list(), "S2": list()}, ["Z1"])
        ctx = validate_roles(CombinedSample(frame, ["S1", "S2"]), external, roles, population_size=100)

        meta = fit_per_cohort(ctx, "naive")

        assert meta.cohorts == ["S1"]
        assert meta.failures["S2"].startswith("EmptyCohort")
        assert meta.overlap is False

    def test_cohorts_without_variance_are_skipped(self, setup_1_context):
        options = EstimationOptions(jaipw=JaipwConfig(max_outer=1, hyper=FlexHyper(kind="linear")))

        with pytest.raises(NoOuterConvergence):
            fit_per_cohort(setup_1_context, "JAIPW", options=options)

# EOF
