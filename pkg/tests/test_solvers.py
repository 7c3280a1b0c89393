
import numpy as np
import pytest
from scipy.special import expit, logsumexp

from jaipw_modules.errors import (
    InvalidArgument,
    MissingCategory,
    RankDeficient,
    ResponseOutOfRange,
    SingularJacobian,
    TooFewRows
)
from jaipw_modules.solvers import (
    FlexHyper,
    NewtonConfig,
    fit_flex_regressor,
    fit_multinomial_logistic,
    fit_simplex_mean_regression,
    fit_weighted_logistic,
    newton_solve,
    numerical_jacobian,
    predict_flex
)


def logistic_fixture(seed, n_rows=50, weights_from=None):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n_rows)
    design = np.column_stack([np.ones(n_rows), x])
    y = (rng.random(n_rows) < expit(-0.3 + 0.8 * x)).astype(float)
    weights = np.ones(n_rows) if weights_from is None else rng.choice(weights_from, n_rows).astype(float)
    return design, y, weights


def weighted_log_likelihood(design, y, weights):
    def objective(candidates):
        linear = design @ candidates.T
        return weights @ (y[:, None] * linear - np.logaddexp(0, linear))
    return objective


def r_squared(truth, prediction):
    return 1 - np.sum((truth - prediction) ** 2) / np.sum((truth - truth.mean()) ** 2)


class TestNewtonSolve:

    def test_scalar_root(self):
        result = newton_solve(lambda x: x ** 2 - 4, lambda x: np.array([[2 * x[0]]]), [3.0])

        assert result.converged is True
        np.testing.assert_allclose(result.params, [2.0], atol=1e-8)
        assert result.residual <= 1e-8

    def test_zero_jacobian_is_singular(self):
        with pytest.raises(SingularJacobian) as error:
            newton_solve(lambda x: x - 1, lambda x: np.zeros((1, 1)), [0.5])

        np.testing.assert_array_equal(error.value.best, [0.5])

    def test_non_finite_start(self):
        with pytest.raises(InvalidArgument):
            newton_solve(lambda x: x, lambda x: np.eye(1), [np.nan])

    def test_config_validation(self):
        with pytest.raises(InvalidArgument):
            NewtonConfig(tol_params=0)
        with pytest.raises(InvalidArgument):
            NewtonConfig(max_iter=0)

    def test_numerical_jacobian(self):
        derivative = numerical_jacobian(lambda t: np.array([t[0] ** 2, t[0] * t[1]]), np.array([1.5, -2.0]))

        np.testing.assert_allclose(derivative, [[3.0, 0.0], [-2.0, 1.5]], atol=1e-8)


class TestFitWeightedLogistic:

    @pytest.mark.parametrize("seed", [1, 2, 3, 4, 5])
    def test_matches_grid_search_maximizer(self, seed, grid_oracle):
        design, y, weights = logistic_fixture(seed, weights_from=[1, 2, 3])

        fit = fit_weighted_logistic(design, y, weights)
        oracle = grid_oracle(weighted_log_likelihood(design, y, weights), [0.0, 0.0])

        np.testing.assert_allclose(fit.coefficients, oracle, atol=1e-4)

    def test_unit_weights_equal_unweighted_fit(self):
        design, y, weights = logistic_fixture(7, n_rows=200)

        np.testing.assert_allclose(fit_weighted_logistic(design, y, weights).coefficients,
                                   fit_weighted_logistic(design, y).coefficients, atol=1e-8)

    def test_weight_rescaling_invariance(self):
        design, y, weights = logistic_fixture(8, n_rows=200, weights_from=[1, 4])

        np.testing.assert_allclose(fit_weighted_logistic(design, y, weights).coefficients,
                                   fit_weighted_logistic(design, y, 37.5 * weights).coefficients, atol=1e-10)

    def test_duplicated_rows_with_halved_weights(self):
        design, y, weights = logistic_fixture(9, n_rows=100, weights_from=[1, 2])

        doubled = fit_weighted_logistic(np.vstack([design, design]), np.concatenate([y, y]),
                                        np.concatenate([weights, weights]) / 2)

        np.testing.assert_allclose(doubled.coefficients, fit_weighted_logistic(design, y, weights).coefficients,
                                   atol=1e-10)

    def test_outcome_independent_of_covariate(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal(2000)
        design = np.column_stack([np.ones(2000), x])
        y = (rng.random(2000) < 0.3).astype(float)

        fit = fit_weighted_logistic(design, y)
        p = fit.fitted
        information = (design * (p * (1 - p))[:, None]).T @ design
        se = np.sqrt(np.diag(np.linalg.inv(information)))

        assert abs(fit.coefficients[1]) <= 3 * se[1]

    def test_rank_deficient_design(self):
        design, y, _ = logistic_fixture(3)
        with pytest.raises(RankDeficient):
            fit_weighted_logistic(np.column_stack([design, design[:, 1]]), y)

    def test_invalid_weights(self):
        design, y, _ = logistic_fixture(3)
        with pytest.raises(InvalidArgument):
            fit_weighted_logistic(design, y, -np.ones(len(y)))

    def test_separated_data_returns_best_iterate(self):
        x = np.linspace(-1, 1, 40)
        design = np.column_stack([np.ones(40), x])
        y = (x > 0).astype(float)

        fit = fit_weighted_logistic(design, y, cfg=NewtonConfig(max_iter=60))

        assert fit.separation is True
        assert fit.converged is False

    def test_scale_leaves_solution_unchanged(self):
        design, y, weights = logistic_fixture(12, n_rows=300, weights_from=[2, 5])

        np.testing.assert_allclose(fit_weighted_logistic(design, y, weights).coefficients,
                                   fit_weighted_logistic(design, y, weights, scale=5000.0).coefficients, atol=1e-6)

    def test_residual_refers_to_the_scaled_score(self):
        design, y, weights = logistic_fixture(13, n_rows=300, weights_from=[2, 5])
        population_size = 1500.0

        fit = fit_weighted_logistic(design, y, weights, scale=population_size)
        score = design.T @ (weights * (y - fit.fitted)) / population_size

        assert fit.residual <= NewtonConfig().tol_residual
        assert np.max(np.abs(score)) <= NewtonConfig().tol_residual

    def test_invalid_scale(self):
        design, y, weights = logistic_fixture(3)
        with pytest.raises(InvalidArgument):
            fit_weighted_logistic(design, y, weights, scale=0.0)


class TestFitMultinomialLogistic:

    def test_intercept_only_recovers_frequencies(self):
        labels = np.array([0] * 50 + [1] * 30 + [2] * 20)
        fit = fit_multinomial_logistic(np.ones((100, 1)), labels)

        np.testing.assert_allclose(fit.fitted[0], [0.5, 0.3, 0.2], atol=1e-8)
        np.testing.assert_allclose(fit.fitted.sum(axis=1), 1.0, atol=1e-12)

    def test_matches_grid_search_maximizer(self, grid_oracle):
        rng = np.random.default_rng(5)
        x = rng.standard_normal(300)
        design = np.column_stack([np.ones(300), x])
        linear = np.column_stack([np.zeros(300), 0.2 + 0.7 * x, -0.1 - 0.5 * x])
        probabilities = np.exp(linear - logsumexp(linear, axis=1, keepdims=True))
        labels = np.array([rng.choice(3, p=p) for p in probabilities])

        def objective(candidates):
            first = design @ candidates[:, :2].T
            second = design @ candidates[:, 2:].T
            stacked = np.stack([np.zeros_like(first), first, second])
            chosen = np.take_along_axis(stacked, labels[None, :, None].repeat(first.shape[1], axis=2), 0)[0]
            return (chosen - logsumexp(stacked, axis=0)).sum(axis=0)

        fit = fit_multinomial_logistic(design, labels)
        oracle = grid_oracle(objective, [0.0] * 4, half_width=2.0, points=9, rounds=35)

        np.testing.assert_allclose(fit.coefficients.T.ravel(), oracle, atol=1e-3)
        assert np.all((fit.fitted > 0) & (fit.fitted < 1))

    def test_absent_category(self):
        with pytest.raises(MissingCategory):
            fit_multinomial_logistic(np.ones((4, 1)), [0, 1, 1, 0])


class TestFitSimplexMeanRegression:

    def test_constant_response(self):
        fit = fit_simplex_mean_regression(np.ones((50, 1)), np.full(50, 0.4))

        np.testing.assert_allclose(fit.fitted, 0.4, atol=1e-6)

    def test_noise_free_logit_linear_mean(self):
        x = np.linspace(-2, 2, 200)
        design = np.column_stack([np.ones(200), x])

        fit = fit_simplex_mean_regression(design, expit(0.5 - 1.2 * x))

        np.testing.assert_allclose(fit.coefficients, [0.5, -1.2], atol=1e-6)
        assert np.all((fit.predict(design) > 0) & (fit.predict(design) < 1))

    def test_response_on_the_boundary(self):
        with pytest.raises(ResponseOutOfRange):
            fit_simplex_mean_regression(np.ones((3, 1)), [0.2, 0.5, 1.0])


class TestFlexRegressor:

    def test_zero_response_predicts_zero(self):
        features = np.random.default_rng(1).standard_normal((100, 2))
        model = fit_flex_regressor(features, np.zeros(100))

        np.testing.assert_allclose(predict_flex(model, features), 0.0, atol=1e-12)

    def test_linear_signal(self):
        rng = np.random.default_rng(2)
        features = rng.uniform(-1, 1, (2000, 2))
        response = 2 * features[:, 0] + rng.normal(0, 0.01, 2000)

        model = fit_flex_regressor(features[:1500], response[:1500])

        assert r_squared(response[1500:], predict_flex(model, features[1500:])) >= 0.95
        assert model.training_mse <= model.baseline_mse

    def test_interaction_surface(self):
        rng = np.random.default_rng(3)
        features = rng.uniform(-1, 1, (5000, 2))
        response = features[:, 0] * features[:, 1]

        flexible = fit_flex_regressor(features[:4000], response[:4000])
        linear = fit_flex_regressor(features[:4000], response[:4000], FlexHyper(kind="linear"))

        assert r_squared(response[4000:], predict_flex(flexible, features[4000:])) >= 0.8
        assert r_squared(response[4000:], predict_flex(linear, features[4000:])) < 0.1

    def test_seeded_fits_are_reproducible(self):
        rng = np.random.default_rng(4)
        features = rng.standard_normal((300, 3))
        response = np.sin(features[:, 0]) + rng.normal(0, 0.1, 300)

        first = fit_flex_regressor(features, response, FlexHyper(seed=9))
        second = fit_flex_regressor(features, response, FlexHyper(seed=9))

        np.testing.assert_array_equal(predict_flex(first, features), predict_flex(second, features))

    def test_too_few_rows(self):
        with pytest.raises(TooFewRows):
            fit_flex_regressor(np.ones((10, 1)), np.zeros(10))

    def test_refit_on_training_response_matches_boosting(self):
        rng = np.random.default_rng(5)
        features = rng.uniform(-1, 1, (400, 2))
        response = features[:, 0] * features[:, 1] + rng.normal(0, 0.05, 400)

        model = fit_flex_regressor(features, response, FlexHyper(n_estimators=50, subsample=1.0, seed=3))

        np.testing.assert_allclose(model.refit_predict(features, response), predict_flex(model, features),
                                   atol=1e-8)

    @pytest.mark.parametrize("kind", ["boosting", "linear"])
    def test_refit_is_linear_in_the_response(self, kind):
        rng = np.random.default_rng(6)
        features = rng.uniform(-1, 1, (300, 2))
        first = np.sin(3 * features[:, 0])
        second = features[:, 1] ** 2

        model = fit_flex_regressor(features, first, FlexHyper(kind=kind, n_estimators=40))
        combined = model.refit_predict(features, 2 * first - 0.5 * second)

        np.testing.assert_allclose(combined, 2 * model.refit_predict(features, first) -
                                   0.5 * model.refit_predict(features, second), atol=1e-8)

    def test_linear_refit_equals_fresh_fit(self):
        rng = np.random.default_rng(7)
        features = rng.standard_normal((200, 2))

        model = fit_flex_regressor(features, features[:, 0], FlexHyper(kind="linear"))
        fresh = fit_flex_regressor(features, 3 * features[:, 1] - 1, FlexHyper(kind="linear"))

        np.testing.assert_allclose(model.refit_predict(features, 3 * features[:, 1] - 1),
                                   predict_flex(fresh, features), atol=1e-8)

    def test_refit_response_length_mismatch(self):
        features = np.random.default_rng(8).standard_normal((100, 2))
        model = fit_flex_regressor(features, features[:, 0])

        with pytest.raises(InvalidArgument):
            model.refit_predict(features, np.zeros(99))

    def test_unknown_regressor_kind(self):
        with pytest.raises(InvalidArgument):
            FlexHyper(kind="forest")

# EOF
