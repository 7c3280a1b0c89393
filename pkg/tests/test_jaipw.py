
import numpy as np
import pytest
from scipy.special import expit

from jaipw_modules.errors import (
    DataError,
    EmptyAuxiliary,
    InvalidArgument,
    NoOuterConvergence,
    OverlapPresent,
    TooManyFailedReplicates
)
from jaipw_modules.estimation_methods import EstimationOptions, jaipw_point_estimate
from jaipw_modules.ipw_estimator import fit_ipw, fit_naive, variance_known
from jaipw_modules.jaipw import (
    JaipwConfig,
    aux_targets_for,
    build_aux_flexible,
    build_aux_parametric,
    make_aux_builder,
    parametric_model,
    solve_dr,
    solve_dr_no_overlap,
    variance_bootstrap,
    variance_jaipw_approx,
    zero_aux_model
)
from jaipw_modules.selection_models import fit_jpl
from jaipw_modules.sim_harness import SimScenario, run_study
from jaipw_modules.solvers import FlexHyper

linear_aux = JaipwConfig(hyper=FlexHyper(kind="linear"))


def zero_builder(ctx):
    return lambda theta: zero_aux_model(ctx)


class TestAuxiliaryTargets:

    def test_targets_at_zero(self, setup_1_context):
        theta = np.zeros(4)
        outcome = setup_1_context.outcome
        z1 = setup_1_context.sample.frame["Z1"].to_numpy()

        r2, r1 = aux_targets_for(setup_1_context, theta, "cases")
        np.testing.assert_allclose(r2, outcome / 2)
        np.testing.assert_allclose(r1["Z1"], z1 * outcome / 2)

        r2, r1 = aux_targets_for(setup_1_context, theta, "score")
        np.testing.assert_allclose(r2, outcome - 0.5)
        assert list(r1.keys()) == ["Z1"]


class TestAuxiliaryScoreModel:

    def test_columns_follow_disease_model_terms(self, setup_1_context):
        theta = np.array([-2.0, 0.35, 0.45, 0.25])
        aux = build_aux_flexible(setup_1_context, theta, FlexHyper(kind="linear"))
        frame = setup_1_context.sample.frame
        values = aux.evaluate(frame, theta)

        assert values.shape == (setup_1_context.n_selected, 4)
        assert set(aux.regressors.keys()) == {"f2", "Z1"}
        # complement columns are f2 times the covariate
        np.testing.assert_allclose(values[:, 2], values[:, 0] * frame["Z2"].to_numpy())
        np.testing.assert_allclose(values[:, 3], values[:, 0] * frame["Z3"].to_numpy())

    def test_zero_model(self, setup_1_context):
        values = zero_aux_model(setup_1_context).evaluate(setup_1_context.external.frame)

        assert values.shape == (setup_1_context.external.n_rows, 4)
        assert not np.any(values)

    def test_point_mass_integration_is_exact(self, setup_1_context):
        feature_names = setup_1_context.roles.feature_names()
        gamma = np.zeros((len(feature_names) + 1, 1))
        gamma[0, 0], gamma[1, 0] = 0.1, 0.2
        theta = np.array([-2.0, 0.35, 0.45, 0.25])

        aux = parametric_model(setup_1_context, gamma, np.zeros((1, 1)), JaipwConfig(), feature_names, theta)
        frame = setup_1_context.sample.frame.iloc[:20]
        values = aux.evaluate(frame, theta)

        outcome = frame["D"].to_numpy(dtype=float)
        mean = 0.1 + 0.2 * outcome
        f2 = outcome - expit(theta[0] + theta[1] * mean + theta[2] * frame["Z2"].to_numpy() +
                             theta[3] * frame["Z3"].to_numpy())

        np.testing.assert_allclose(values[:, 0], f2, atol=1e-12)
        np.testing.assert_allclose(values[:, 1], f2 * mean, atol=1e-12)

    def test_normal_integration_matches_quadrature(self, setup_1_context):
        feature_names = setup_1_context.roles.feature_names()
        gamma = np.zeros((len(feature_names) + 1, 1))
        gamma[0, 0], gamma[1, 0] = 0.1, 0.2
        sigma = 0.8
        theta = np.array([-1.0, 0.9, 0.45, 0.25])
        draws = 20000

        aux = parametric_model(setup_1_context, gamma, np.array([[sigma ** 2]]), JaipwConfig(mc_draws=draws),
                               feature_names, theta)
        frame = setup_1_context.sample.frame.iloc[:20]
        values = aux.evaluate(frame, theta)

        nodes, node_weights = np.polynomial.hermite_e.hermegauss(64)
        node_weights = node_weights / np.sqrt(2 * np.pi)

        outcome = frame["D"].to_numpy(dtype=float)
        mean = 0.1 + 0.2 * outcome
        fixed = theta[0] + theta[2] * frame["Z2"].to_numpy() + theta[3] * frame["Z3"].to_numpy()
        z1 = mean[:, None] + sigma * nodes[None, :]
        residual = outcome[:, None] - expit(fixed[:, None] + theta[1] * z1)

        f2 = residual @ node_weights
        f1 = (residual * z1) @ node_weights
        f2_sd = np.sqrt((residual ** 2) @ node_weights - f2 ** 2)
        f1_sd = np.sqrt(((residual * z1) ** 2) @ node_weights - f1 ** 2)

        assert np.all(np.abs(values[:, 0] - f2) <= 4 * f2_sd / np.sqrt(draws))
        assert np.all(np.abs(values[:, 1] - f1) <= 4 * f1_sd / np.sqrt(draws))

    def test_fitted_parametric_model(self, setup_1_context):
        aux = build_aux_parametric(setup_1_context, np.zeros(4), JaipwConfig(mc_draws=200))

        assert aux.gamma.shape == (len(setup_1_context.roles.feature_names()) + 1, 1)
        assert aux.draws.shape == (200, 1)
        assert abs(aux.scale[0, 0]) > 0

    def test_empty_auxiliary_set(self, strata_context):
        with pytest.raises(EmptyAuxiliary):
            build_aux_flexible(strata_context, np.zeros(2))
        with pytest.raises(EmptyAuxiliary):
            build_aux_parametric(strata_context, np.zeros(2))

    def test_inconsistent_regressor_output(self, setup_1_context):
        class WideRegressor:
            def refit_predict(self, features, response):
                return np.zeros((len(features), 2))

        theta = np.array([-2.0, 0.35, 0.45, 0.25])
        aux = build_aux_flexible(setup_1_context, theta, FlexHyper(kind="linear"))
        aux.regressors["Z1"] = WideRegressor()

        with pytest.raises(InvalidArgument):
            aux.evaluate(setup_1_context.sample.frame, theta)

    def test_flexible_model_is_continuous_in_theta(self, setup_1_context):
        builder = make_aux_builder(setup_1_context, JaipwConfig(seed=1, hyper=FlexHyper(n_estimators=50, seed=1)))
        theta = np.array([-2.0, 0.35, 0.45, 0.25])
        frame = setup_1_context.sample.frame

        anchor = builder(theta)
        nearby = builder(theta + 1e-6)

        assert nearby.regressors["f2"] is anchor.regressors["f2"]
        np.testing.assert_allclose(nearby.theta, theta + 1e-6)
        assert np.max(np.abs(nearby.evaluate(frame) - anchor.evaluate(frame))) <= 1e-3
        assert np.any(nearby.evaluate(frame) != anchor.evaluate(frame))


class TestSolveDr:

    @pytest.mark.parametrize("seed", range(11, 31))
    def test_zero_auxiliary_model_reduces_to_ipw(self, seed, context_factory):
        ctx = context_factory(seed)
        fit = fit_jpl(ctx)

        report = solve_dr(ctx, fit, zero_builder(ctx))

        np.testing.assert_allclose(report.estimate, fit_ipw(ctx, fit).estimate, atol=1e-8)
        assert report.diagnostics["converged"] is True
        assert report.method == "JAIPW-JPL"

    def test_linear_auxiliary_model(self, setup_1_context):
        fit = fit_jpl(setup_1_context)
        report = solve_dr(setup_1_context, fit, make_aux_builder(setup_1_context, linear_aux), cfg=linear_aux)

        assert np.all(np.isfinite(report.estimate))
        assert report.diagnostics["outer_iterations"] >= 2

    def test_default_flexible_model_converges(self, context_factory):
        ctx = context_factory(41)
        cfg = JaipwConfig(seed=1)

        report = solve_dr(ctx, fit_jpl(ctx), make_aux_builder(ctx, cfg), cfg=cfg)

        assert report.diagnostics["converged"] is True
        assert report.diagnostics["outer_iterations"] < cfg.max_outer
        assert np.all(np.isfinite(report.estimate))

    def test_strict_mode_raises_without_convergence(self, setup_1_context):
        fit = fit_jpl(setup_1_context)

        with pytest.raises(NoOuterConvergence) as error:
            solve_dr(setup_1_context, fit, zero_builder(setup_1_context), cfg=JaipwConfig(max_outer=1, strict=True))
        assert len(error.value.best) == 4

    def test_best_iterate_without_convergence(self, setup_1_context):
        fit = fit_jpl(setup_1_context)
        report = solve_dr(setup_1_context, fit, zero_builder(setup_1_context), cfg=JaipwConfig(max_outer=1))

        assert report.diagnostics["converged"] is False
        assert report.diagnostics["outer_iterations"] == 1


class TestSolveDrNoOverlap:

    def test_single_cohort_matches_joint_solver(self, setup_1_context):
        ctx = setup_1_context.for_cohort("S2")
        fit = fit_jpl(ctx)
        builder = make_aux_builder(ctx, linear_aux)

        joint = solve_dr(ctx, fit, builder, cfg=linear_aux)
        separate = solve_dr_no_overlap(ctx, fit, {"S2": builder}, cfg=linear_aux)

        np.testing.assert_allclose(separate.estimate, joint.estimate, atol=1e-7)

    def test_overlapping_cohorts(self, setup_1_context):
        assert np.any(setup_1_context.indicators.sum(axis=1) > 1)

        with pytest.raises(OverlapPresent):
            solve_dr_no_overlap(setup_1_context, fit_jpl(setup_1_context),
                                {c: zero_builder(setup_1_context) for c in setup_1_context.cohorts})


class TestVariances:

    def test_zero_auxiliary_variance_is_the_known_weight_variance(self, setup_1_context):
        fit = fit_jpl(setup_1_context)
        theta = fit_ipw(setup_1_context, fit).estimate

        np.testing.assert_allclose(variance_jaipw_approx(setup_1_context, fit, zero_builder(setup_1_context), theta),
                                   variance_known(setup_1_context, fit, theta), rtol=1e-10, atol=0)

    def test_linear_auxiliary_variance(self, setup_1_context):
        fit = fit_jpl(setup_1_context)
        theta = fit_ipw(setup_1_context, fit).estimate
        variance = variance_jaipw_approx(setup_1_context, fit, make_aux_builder(setup_1_context, linear_aux), theta)

        np.testing.assert_allclose(variance, variance.T, atol=1e-15)
        assert np.all(np.diag(variance) > 0)


class TestBootstrap:

    @staticmethod
    def pipeline(ctx):
        return fit_naive(ctx)

    def test_seeded_replicates_are_reproducible(self, setup_1_context):
        first = variance_bootstrap(setup_1_context, self.pipeline, n_boot=50, seed=3)
        second = variance_bootstrap(setup_1_context, self.pipeline, n_boot=50, seed=3, threads=2)

        np.testing.assert_array_equal(first.replicates, second.replicates)
        assert first.variance.shape == (4, 4)
        assert first.failures == 0

    def test_too_few_replicates(self, setup_1_context):
        with pytest.raises(InvalidArgument):
            variance_bootstrap(setup_1_context, self.pipeline, n_boot=49)

    def test_too_many_failed_replicates(self, setup_1_context):
        def failing(ctx):
            raise DataError("no estimate")

        with pytest.raises(TooManyFailedReplicates):
            variance_bootstrap(setup_1_context, failing, n_boot=50)

    def test_doubly_robust_replicates(self, setup_1_context):
        options = EstimationOptions(jaipw=JaipwConfig(hyper=FlexHyper(kind="linear")))

        result = variance_bootstrap(setup_1_context, lambda c: jaipw_point_estimate(c, options), n_boot=50, seed=5)

        assert result.failures <= 5
        assert np.all(np.diag(result.variance) > 0)

    def test_unconverged_replicates_count_as_failures(self, setup_1_context):
        options = EstimationOptions(jaipw=JaipwConfig(max_outer=1, hyper=FlexHyper(kind="linear")))

        with pytest.raises(TooManyFailedReplicates):
            variance_bootstrap(setup_1_context, lambda c: jaipw_point_estimate(c, options), n_boot=50)
        assert options.jaipw.strict is False


class TestJaipwConfig:

    @pytest.mark.parametrize("settings", [
        {"eps_params": 0},
        {"mc_draws": 99},
        {"bootstrap": 49},
        {"max_outer": 0},
        {"aux_mode": "kernel"},
        {"aux_target": "controls"}
    ])
    def test_invalid_settings(self, settings):
        with pytest.raises(InvalidArgument):
            JaipwConfig(**settings)

    def test_regressor_seed_follows_config_seed(self):
        assert JaipwConfig(seed=17).hyper.seed == 17


@pytest.mark.monte_carlo
class TestDoubleRobustness:

    def test_correct_selection_with_misspecified_auxiliary_model(self):
        scenario = SimScenario(setup=1, population_size=20000, seed=77, replications=20, aux="incorrect",
                               jaipw=JaipwConfig(hyper=FlexHyper(kind="linear")))

        replicates = run_study(scenario, ["naive", "JAIPW"]).replicates
        replicates = replicates.loc[replicates["method"] == "JAIPW"]

        assert np.all(replicates["error"] == "")
        for term, truth in zip(["Z1", "Z2", "Z3"], scenario.theta[1:]):
            estimates = replicates.loc[replicates["term"] == term, "estimate"].to_numpy()
            spread = np.std(estimates, ddof=1) / np.sqrt(len(estimates))
            assert abs(np.mean(estimates) - truth) <= 4 * spread + 0.02

# EOF
