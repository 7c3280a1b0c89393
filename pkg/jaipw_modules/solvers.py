####
#
# numerical machinery: damped Newton-Raphson and the regressions built on it
#

import logging

import numpy as np
from scipy.special import expit, logit, softmax
from sklearn.ensemble import GradientBoostingRegressor
from sklearn.linear_model import LinearRegression

from jaipw_modules import plural
from jaipw_modules.errors import (
    InvalidArgument,
    SingularJacobian,
    NoConvergence,
    RankDeficient,
    ResponseOutOfRange,
    MissingCategory,
    TooFewRows
)

# condition number above which a jacobian counts as singular
max_condition_number = 1e12

# coefficient norm which marks a (quasi) separated logistic fit
separation_norm = 1e4

# minimum number of rows to train a flexible regressor on
min_regressor_rows = 20


class NewtonConfig:
    """
    Settings of the damped Newton-Raphson solver

    Attributes
    ----------
    tol_params : float
        largest max-norm of the last step at convergence
    tol_residual : float
        largest max-norm of the score at convergence
    max_iter : int
        iteration budget
    step_halving_max : int
        number of times a step may be halved within one iteration
    """

    def __init__(self, tol_params=1e-8, tol_residual=1e-8, max_iter=100, step_halving_max=20):

        if tol_params <= 0 or tol_residual <= 0:
            raise InvalidArgument("solver tolerances must be strictly positive")
        if int(max_iter) < 1:
            raise InvalidArgument("solver needs at least one iteration")
        if int(step_halving_max) < 0:
            raise InvalidArgument("step halving budget must not be negative")

        self.tol_params = float(tol_params)
        self.tol_residual = float(tol_residual)
        self.max_iter = int(max_iter)
        self.step_halving_max = int(step_halving_max)

    def __repr__(self):
        return str(self.__dict__)


class NewtonResult:
    """
    Outcome of a newton_solve run
    """

    def __init__(self, params, iterations, residual, step, converged=True):
        self.params = params
        self.iterations = iterations
        self.residual = residual
        self.step = step
        self.converged = converged

    def __repr__(self):
        return str(self.__dict__)


def _max_norm(vector):
    if vector.size == 0:
        return 0.0
    return float(np.max(np.abs(vector)))


def newton_solve(score, jacobian, init, cfg=None):
    """
    Find a root of an estimating function with a damped Newton-Raphson iteration.

    A full step is halved for as long as it increases the euclidean norm of
    the score, unless the score is already below the residual tolerance.

    Parameters
    ----------
    score : Callable
        params -> score vector
    jacobian : Callable
        params -> matrix of partial derivatives of the score
    init : array like
        starting values
    cfg : NewtonConfig
        solver settings

    Returns
    -------
    NewtonResult: root with diagnostics
    """

    if cfg is None:
        cfg = NewtonConfig()

    params = np.atleast_1d(np.asarray(init, dtype=float)).copy()
    if not np.all(np.isfinite(params)):
        raise InvalidArgument("initial values must be finite")

    current_score = np.atleast_1d(np.asarray(score(params), dtype=float))
    residual = _max_norm(current_score)

    best_params, best_residual = params.copy(), residual
    last_step = np.inf

    for iteration in range(0, cfg.max_iter + 1):

        if residual <= cfg.tol_residual and last_step <= cfg.tol_params:
            logging.debug("Newton solver converged after %d iteration%s, residual %.3e" %
                          (iteration, plural(iteration), residual))
            return NewtonResult(params, iteration, residual, last_step)

        if iteration == cfg.max_iter:
            break

        current_jacobian = np.atleast_2d(np.asarray(jacobian(params), dtype=float))

        with np.errstate(all="ignore"):
            condition = np.linalg.cond(current_jacobian)
        if not np.isfinite(condition) or condition > max_condition_number:
            raise SingularJacobian("jacobian is singular (condition estimate %.3e)" % condition,
                                   best=best_params, residual=best_residual)

        step = np.linalg.solve(current_jacobian, -current_score)

        score_norm = np.linalg.norm(current_score)
        step_length = 1.0
        for _ in range(0, cfg.step_halving_max + 1):
            candidate = params + step_length * step
            candidate_score = np.atleast_1d(np.asarray(score(candidate), dtype=float))
            if np.all(np.isfinite(candidate_score)) and \
                    (np.linalg.norm(candidate_score) <= score_norm or residual <= cfg.tol_residual):
                break
            step_length /= 2
        else:
            raise NoConvergence("step halving budget exhausted in iteration %d" % (iteration + 1),
                                best=best_params, residual=best_residual)

        last_step = _max_norm(step_length * step)
        params, current_score = candidate, candidate_score
        residual = _max_norm(current_score)

        if residual < best_residual:
            best_params, best_residual = params.copy(), residual

    raise NoConvergence("no convergence within %d iterations (residual %.3e)" % (cfg.max_iter, residual),
                        best=best_params, residual=best_residual)


def numerical_jacobian(func, params, relative_step=1e-5):
    """
    Central finite difference derivative of an array valued function

    The step for parameter j is relative_step * (1 + |params_j|).

    Returns
    -------
    numpy.ndarray: shape func(params).shape + (len(params),)
    """

    params = np.asarray(params, dtype=float)
    columns = list()
    for j in range(len(params)):
        step = relative_step * (1.0 + abs(params[j]))
        upper, lower = params.copy(), params.copy()
        upper[j] += step
        lower[j] -= step
        columns.append((np.asarray(func(upper)) - np.asarray(func(lower))) / (2.0 * step))

    return np.stack(columns, axis=-1)


class LogisticFit:
    """
    Result of a (weighted) binary or multinomial logistic regression
    """

    def __init__(self, coefficients, fitted, converged=True, separation=False, iterations=0, residual=None):
        self.coefficients = coefficients
        self.fitted = fitted
        self.converged = converged
        self.separation = separation
        self.iterations = iterations
        self.residual = residual

    def __repr__(self):
        return str(self.__dict__)


def _looks_separated(coefficients, probabilities):
    if np.linalg.norm(coefficients) > separation_norm:
        return True
    return bool(np.any(np.minimum(probabilities, 1 - probabilities) < 1e-8))


def fit_weighted_logistic(design, y, weights=None, cfg=None, init=None, scale=None):
    """
    Solve the weighted logistic score equation sum w_i (y_i - expit(theta'x_i)) x_i = 0

    The solver works on the score divided by 'scale', so cfg.tol_residual
    and the reported residual refer to that normalised score. Without a
    scale the weight sum is used and rescaling all weights leaves every
    iterate unchanged. Inverse probability fits pass the population size N
    to get the (1/N) score.

    Parameters
    ----------
    design : numpy.ndarray
        design matrix (n x p)
    y : numpy.ndarray
        binary response
    weights : numpy.ndarray
        nonnegative weights, all ones if None
    cfg : NewtonConfig
        solver settings
    init : numpy.ndarray
        starting values, zeros if None
    scale : float
        divisor of score and Jacobian, the weight sum if None

    Returns
    -------
    LogisticFit: coefficients and fitted probabilities of all rows
    """

    design = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    weights = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=float)

    if np.any(weights < 0) or not np.any(weights > 0):
        raise InvalidArgument("weights must be nonnegative and not all zero")

    if np.linalg.matrix_rank(design[weights > 0]) < design.shape[1]:
        raise RankDeficient("logistic design is not of full column rank on rows with positive weight")

    if scale is None:
        scale = np.sum(weights)
    elif not scale > 0:
        raise InvalidArgument("score scale must be positive, got %s" % scale)

    def score(theta):
        return design.T @ (weights * (y - expit(design @ theta))) / scale

    def jacobian(theta):
        p = expit(design @ theta)
        return -(design * (weights * p * (1 - p))[:, None]).T @ design / scale

    start = np.zeros(design.shape[1]) if init is None else np.asarray(init, dtype=float)

    try:
        result = newton_solve(score, jacobian, start, cfg)
    except (NoConvergence, SingularJacobian) as e:
        fitted = expit(design @ e.best)
        if not _looks_separated(e.best, fitted[weights > 0]):
            raise
        logging.warning("Logistic fit looks (quasi) separated, returning best iterate: %s" % e.message)
        return LogisticFit(e.best, fitted, converged=False, separation=True, residual=e.residual)

    return LogisticFit(result.params, expit(design @ result.params), iterations=result.iterations,
                       residual=result.residual)


def multinomial_probabilities(design, coefficients):
    """category probabilities with category 0 as reference, coefficients shape (p, 2)"""
    linear = np.column_stack([np.zeros(design.shape[0]), design @ coefficients])
    return softmax(linear, axis=1)


def fit_multinomial_logistic(design, labels, cfg=None):
    """
    Three category logistic regression, category 0 is the reference

    Parameters
    ----------
    design : numpy.ndarray
        design matrix (n x p)
    labels : numpy.ndarray
        category per row, coded 0, 1, 2
    cfg : NewtonConfig
        solver settings

    Returns
    -------
    LogisticFit: coefficients (p x 2) and per row probabilities (n x 3)
    """

    design = np.asarray(design, dtype=float)
    labels = np.asarray(labels).astype(int)
    n_rows, n_params = design.shape

    missing = [str(c) for c in range(3) if not np.any(labels == c)]
    if len(missing) > 0:
        raise MissingCategory("multinomial response: category %s absent" % ", ".join(missing))

    if np.linalg.matrix_rank(design) < n_params:
        raise RankDeficient("multinomial design is not of full column rank")

    response = np.column_stack([(labels == c).astype(float) for c in (1, 2)])

    def unpack(theta):
        return theta.reshape(2, n_params).T

    def score(theta):
        probabilities = multinomial_probabilities(design, unpack(theta))[:, 1:]
        return (design.T @ (response - probabilities)).T.ravel() / n_rows

    def jacobian(theta):
        probabilities = multinomial_probabilities(design, unpack(theta))[:, 1:]
        blocks = [[None, None], [None, None]]
        for c in range(2):
            for d in range(2):
                weight = probabilities[:, c] * ((c == d) - probabilities[:, d])
                blocks[c][d] = -(design * weight[:, None]).T @ design / n_rows
        return np.block(blocks)

    try:
        result = newton_solve(score, jacobian, np.zeros(2 * n_params), cfg)
    except (NoConvergence, SingularJacobian) as e:
        probabilities = multinomial_probabilities(design, unpack(e.best))
        if not _looks_separated(e.best, probabilities):
            raise
        logging.warning("Multinomial fit looks (quasi) separated, returning best iterate: %s" % e.message)
        return LogisticFit(unpack(e.best), probabilities, converged=False, separation=True,
                           residual=e.residual)

    coefficients = unpack(result.params)
    return LogisticFit(coefficients, multinomial_probabilities(design, coefficients),
                       iterations=result.iterations, residual=result.residual)


class SimplexFit:
    """
    Result of a simplex mean regression
    """

    def __init__(self, coefficients, fitted, dispersion, iterations=0, residual=None):
        self.coefficients = coefficients
        self.fitted = fitted
        self.dispersion = dispersion
        self.iterations = iterations
        self.residual = residual

    def predict(self, design):
        return expit(np.asarray(design, dtype=float) @ self.coefficients)

    def __repr__(self):
        return str(self.__dict__)


def simplex_unit_deviance(response, mean):
    """unit deviance (y - mu)^2 / (y (1 - y) mu^2 (1 - mu)^2) of the simplex distribution"""
    return (response - mean) ** 2 / (response * (1 - response) * mean ** 2 * (1 - mean) ** 2)


def fit_simplex_mean_regression(design, response, cfg=None):
    """
    Maximum likelihood simplex regression with logit mean link and constant dispersion

    With constant dispersion the mean coefficients minimize the summed unit
    deviance; the dispersion is the deviance mean.

    Parameters
    ----------
    design : numpy.ndarray
        design matrix (n x p)
    response : numpy.ndarray
        responses strictly inside (0, 1)
    cfg : NewtonConfig
        solver settings

    Returns
    -------
    SimplexFit: coefficients, fitted means and dispersion
    """

    design = np.asarray(design, dtype=float)
    response = np.asarray(response, dtype=float)

    if np.any(~np.isfinite(response)) or np.any(response <= 0) or np.any(response >= 1):
        raise ResponseOutOfRange("simplex regression responses must be strictly inside (0, 1)")

    n_rows, n_params = design.shape
    response_scale = response * (1 - response)

    def gradient(beta):
        mean = expit(design @ beta)
        mean_scale = mean * (1 - mean)
        residual = response - mean
        derivative = -2 * residual / (response_scale * mean_scale) * \
            (1 + residual * (1 - 2 * mean) / mean_scale)
        return design.T @ derivative / n_rows

    def hessian(beta):
        return numerical_jacobian(gradient, beta)

    start = np.linalg.lstsq(design, logit(response), rcond=None)[0]
    result = newton_solve(gradient, hessian, start, cfg)

    fitted = expit(design @ result.params)
    dispersion = float(np.sum(simplex_unit_deviance(response, fitted)) / max(n_rows - n_params, 1))

    return SimplexFit(result.params, fitted, dispersion, result.iterations, result.residual)


class FlexHyper:
    """
    Settings of the flexible conditional mean regressor

    kind "boosting" uses gradient boosted regression trees, "linear"
    ordinary least squares on the raw features.
    """

    def __init__(self, kind="boosting", n_estimators=200, max_depth=3, learning_rate=0.1, subsample=0.8, seed=0):

        if kind not in ["boosting", "linear"]:
            raise InvalidArgument("unknown regressor kind '%s'" % kind)

        self.kind = kind
        self.n_estimators = int(n_estimators)
        self.max_depth = int(max_depth)
        self.learning_rate = float(learning_rate)
        self.subsample = float(subsample)
        self.seed = int(seed)

    def __repr__(self):
        return str(self.__dict__)


class RegressorModel:
    """
    A fitted conditional mean regressor with its training diagnostics

    Besides plain predictions the model can be refitted to a new response
    on its training rows while keeping its structure: boosted trees keep
    their partitions and only the leaf values are recomputed, the linear
    model is solved again on the same design. Refitted predictions are
    linear in the new response, so they change smoothly with it.
    """

    def __init__(self, estimator, feature_names, training_mse, baseline_mse, training_features=None):
        self.estimator = estimator
        self.feature_names = feature_names
        self.training_mse = training_mse
        self.baseline_mse = baseline_mse
        self.training_features = training_features
        self.training_leaves = None
        self.leaf_slots = 0

        if isinstance(estimator, GradientBoostingRegressor) and training_features is not None:
            self.training_leaves = estimator.apply(training_features).astype(int)
            self.leaf_slots = max(tree.tree_.node_count for tree in estimator.estimators_[:, 0])

    @property
    def feature_importances(self):
        importances = getattr(self.estimator, "feature_importances_", None)
        if importances is None:
            return None
        return dict(zip(self.feature_names, [float(x) for x in importances]))

    def _replay_boosting(self, leaves, response):
        """squared loss boosting on frozen partitions, initialised at the response mean"""

        train = self.training_leaves
        rate = self.estimator.learning_rate

        fitted = np.full(train.shape[0], np.mean(response))
        predicted = np.full(leaves.shape[0], np.mean(response))

        for t in range(train.shape[1]):
            residual = response - fitted
            sums = np.bincount(train[:, t], weights=residual, minlength=self.leaf_slots)
            counts = np.bincount(train[:, t], minlength=self.leaf_slots)
            values = np.divide(sums, counts, out=np.zeros(self.leaf_slots), where=counts > 0)
            fitted = fitted + rate * values[train[:, t]]
            predicted = predicted + rate * values[leaves[:, t]]

        return predicted

    def refit_predict(self, features, response):
        """
        Predictions on 'features' after refitting to a new training response

        Parameters
        ----------
        features : pandas.DataFrame, numpy.ndarray
            rows to predict
        response : numpy.ndarray
            new response of the training rows

        Returns
        -------
        numpy.ndarray: predictions
        """

        if self.training_features is None:
            raise InvalidArgument("regressor was fitted without keeping its training rows")

        array, _ = _feature_array(features)
        response = np.asarray(response, dtype=float)
        if len(response) != self.training_features.shape[0]:
            raise InvalidArgument("refit response has %d rows, the regressor was trained on %d" %
                                  (len(response), self.training_features.shape[0]))

        if self.training_leaves is not None:
            return self._replay_boosting(self.estimator.apply(array).astype(int), response)

        return LinearRegression().fit(self.training_features, response).predict(array)

    def __repr__(self):
        return "RegressorModel(%s, features=%s, training_mse=%.4g)" % \
               (type(self.estimator).__name__, self.feature_names, self.training_mse)


def _feature_array(features):
    names = list(getattr(features, "columns", []))
    array = np.asarray(features, dtype=float)
    if array.ndim == 1:
        array = array.reshape(-1, 1)
    if len(names) == 0:
        names = ["x%d" % (i + 1) for i in range(array.shape[1])]
    return array, names


def fit_flex_regressor(features, response, hyper=None):
    """
    Fit a flexible conditional mean regressor

    Parameters
    ----------
    features : pandas.DataFrame, numpy.ndarray
        training features
    response : numpy.ndarray
        real valued response
    hyper : FlexHyper
        regressor settings

    Returns
    -------
    RegressorModel: fitted model
    """

    if hyper is None:
        hyper = FlexHyper()

    array, names = _feature_array(features)
    response = np.asarray(response, dtype=float)

    if array.shape[0] < min_regressor_rows:
        raise TooFewRows("flexible regressor needs at least %d rows, got %d" % (min_regressor_rows, array.shape[0]))

    if not np.all(np.isfinite(array)):
        raise InvalidArgument("regressor features must be finite")

    if hyper.kind == "linear":
        estimator = LinearRegression()
    else:
        estimator = GradientBoostingRegressor(n_estimators=hyper.n_estimators, max_depth=hyper.max_depth,
                                              learning_rate=hyper.learning_rate, subsample=hyper.subsample,
                                              random_state=hyper.seed)

    estimator.fit(array, response)

    training_mse = float(np.mean((estimator.predict(array) - response) ** 2))
    baseline_mse = float(np.var(response))

    logging.debug("Trained %s on %d rows, training MSE %.4g (constant predictor %.4g)" %
                  (type(estimator).__name__, array.shape[0], training_mse, baseline_mse))

    return RegressorModel(estimator, names, training_mse, baseline_mse, training_features=array)


def predict_flex(model, features):
    """predictions of a fitted RegressorModel"""
    array, _ = _feature_array(features)
    return model.estimator.predict(array)

# EOF
