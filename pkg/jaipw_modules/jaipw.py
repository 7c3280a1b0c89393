####
#
# doubly robust estimation: auxiliary score models, fixed point solver and variances
#

import copy
import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy.special import expit

from jaipw_modules.classes import EstimateReport
from jaipw_modules.data_model import intercept_name
from jaipw_modules.errors import (
    JaipwError,
    InvalidArgument,
    EmptyAuxiliary,
    NoOuterConvergence,
    OverlapPresent,
    TooFewRows,
    TooManyFailedReplicates
)
from jaipw_modules.ipw_estimator import bread_weighted, sandwich, disease_terms
from jaipw_modules.solvers import (
    NewtonConfig,
    FlexHyper,
    newton_solve,
    fit_weighted_logistic,
    fit_flex_regressor,
    numerical_jacobian,
    min_regressor_rows
)

aux_modes = ["flexible", "parametric"]
aux_targets = ["score", "cases"]

# rows per block in the Monte Carlo integration
integration_chunk_rows = 2000


class JaipwConfig:
    """
    Settings of the doubly robust estimator

    Attributes
    ----------
    eps_params : float
        outer loop tolerance on the parameter change
    eps_residual : float
        outer loop tolerance on the change of the estimating function
    max_outer : int
        outer iteration budget, the best iterate is returned when exhausted
    aux_mode : str
        "flexible" or "parametric"
    aux_target : str
        "score" regresses D - expit(theta'Z), "cases" regresses D (1 - expit(theta'Z))
    include_outcome : bool
        the auxiliary features contain the outcome
    mc_draws : int
        Monte Carlo draws per row in parametric mode
    bootstrap : int
        bootstrap replicates
    seed : int
        seed of all stochastic components
    strict : bool
        raise NoOuterConvergence instead of returning the best iterate
    hyper : FlexHyper
        flexible regressor settings
    newton : NewtonConfig
        inner solver settings
    """

    def __init__(self, eps_params=1e-8, eps_residual=1e-8, max_outer=50, aux_mode="flexible", aux_target="score",
                 include_outcome=True, mc_draws=1000, bootstrap=200, seed=0, strict=False, hyper=None, newton=None):

        if eps_params <= 0 or eps_residual <= 0:
            raise InvalidArgument("outer loop tolerances must be strictly positive")
        if int(mc_draws) < 100:
            raise InvalidArgument("at least 100 Monte Carlo draws are needed")
        if int(bootstrap) < 50:
            raise InvalidArgument("at least 50 bootstrap replicates are needed")
        if int(max_outer) < 1:
            raise InvalidArgument("at least one outer iteration is needed")
        if aux_mode not in aux_modes:
            raise InvalidArgument("unknown auxiliary mode '%s'" % aux_mode)
        if aux_target not in aux_targets:
            raise InvalidArgument("unknown auxiliary target '%s'" % aux_target)

        self.eps_params = float(eps_params)
        self.eps_residual = float(eps_residual)
        self.max_outer = int(max_outer)
        self.aux_mode = aux_mode
        self.aux_target = aux_target
        self.include_outcome = bool(include_outcome)
        self.mc_draws = int(mc_draws)
        self.bootstrap = int(bootstrap)
        self.seed = int(seed)
        self.strict = bool(strict)
        self.hyper = FlexHyper(seed=self.seed) if hyper is None else hyper
        self.newton = NewtonConfig() if newton is None else newton

    def __repr__(self):
        return str(self.__dict__)


class AuxiliaryScoreModel:
    """
    The auxiliary score f(X, theta) = E[U(theta) | X]

    Evaluation always returns one column per disease model term: the
    intercept column is f2, an auxiliary covariate a gets f1[a] and a
    complement covariate c gets f2 * Z_c.

    Attributes
    ----------
    mode : str
        "flexible", "parametric" or "zero"
    terms : list
        disease model terms, intercept first
    auxiliary : list
        auxiliary covariates Z_1 cap
    feature_names : list
        conditioning variables X
    regressors : dict
        "f2" and one entry per auxiliary covariate (flexible mode)
    gamma : numpy.ndarray
        coefficients of the linear mean of Z_1 cap given X (parametric mode)
    scale : numpy.ndarray
        square root factor of the residual covariance (parametric mode)
    draws : numpy.ndarray
        common standard normal draws, M x |Z_1 cap| (parametric mode)
    theta : numpy.ndarray
        parameter the flexible regressors were trained at
    targets : Callable
        theta -> (r2, dict of r1) on the training rows (flexible mode); the
        regressors keep the structure learnt at 'theta' and are refitted to
        the targets of the parameter they are evaluated at
    """

    def __init__(self, mode, terms, auxiliary, feature_names, outcome="D", regressors=None, gamma=None,
                 scale=None, draws=None, theta=None, targets=None):

        self.mode = mode
        self.terms = list(terms)
        self.auxiliary = list(auxiliary)
        self.feature_names = list(feature_names)
        self.outcome = outcome
        self.regressors = regressors or dict()
        self.gamma = gamma
        self.scale = scale
        self.draws = draws
        self.theta = theta
        self.targets = targets

    @property
    def dimension(self):
        return len(self.terms)

    @property
    def diagnostics(self):
        return {name: {"training_mse": model.training_mse,
                       "baseline_mse": model.baseline_mse,
                       "feature_importances": model.feature_importances}
                for name, model in self.regressors.items()}

    def _assemble(self, frame, f2, f1):
        """columns in disease model term order"""

        columns = list()
        for term in self.terms:
            if term == intercept_name:
                columns.append(f2)
            elif term in self.auxiliary:
                columns.append(f1[term])
            else:
                columns.append(f2 * frame[term].to_numpy(dtype=float))

        return np.column_stack(columns)

    def _parametric_components(self, frame, theta):

        condition = np.column_stack([np.ones(len(frame)), frame[self.feature_names].to_numpy(dtype=float)])
        mean = condition @ self.gamma
        outcome = frame[self.outcome].to_numpy(dtype=float)

        # point mass conditional law, a single draw at the mean is exact
        draws = self.draws
        if not np.any(self.scale):
            draws = np.zeros((1, len(self.auxiliary)))
        shifts = draws @ self.scale.T

        coefficient = dict(zip(self.terms, theta))
        fixed = np.full(len(frame), coefficient.get(intercept_name, 0.0))
        for term in self.terms:
            if term != intercept_name and term not in self.auxiliary:
                fixed = fixed + coefficient[term] * frame[term].to_numpy(dtype=float)
        auxiliary_theta = np.array([coefficient[a] for a in self.auxiliary])

        f2 = np.zeros(len(frame))
        f1 = {a: np.zeros(len(frame)) for a in self.auxiliary}

        for start in range(0, len(frame), integration_chunk_rows):
            block = slice(start, start + integration_chunk_rows)
            # rows x draws x auxiliary
            values = mean[block][:, None, :] + shifts[None, :, :]
            residual = outcome[block][:, None] - expit(fixed[block][:, None] + values @ auxiliary_theta)
            f2[block] = residual.mean(axis=1)
            for index, name in enumerate(self.auxiliary):
                f1[name][block] = (residual * values[:, :, index]).mean(axis=1)

        return f2, f1

    def evaluate(self, frame, theta=None):
        """
        Evaluate f(X, theta) on the rows of 'frame'

        Parameters
        ----------
        frame : pandas.DataFrame
            rows holding the features and the complement covariates
        theta : numpy.ndarray
            disease model parameter, the one the model was built at if None

        Returns
        -------
        numpy.ndarray: n x len(terms)
        """

        if self.mode == "zero":
            return np.zeros((len(frame), self.dimension))

        if self.mode == "parametric":
            f2, f1 = self._parametric_components(frame, self.theta if theta is None else theta)
        else:
            features = frame[self.feature_names]
            r2, r1 = self.targets(self.theta if theta is None else theta)
            f2 = self.regressors["f2"].refit_predict(features, r2)
            f1 = {a: self.regressors[a].refit_predict(features, r1[a]) for a in self.auxiliary}

        values = self._assemble(frame, f2, f1)
        if values.shape[1] != self.dimension:
            raise InvalidArgument("auxiliary score has %d columns, disease model has %d terms" %
                                  (values.shape[1], self.dimension))

        return values

    def __repr__(self):
        return "AuxiliaryScoreModel(mode=%s, features=%s)" % (self.mode, self.feature_names)


def aux_targets_for(ctx, theta, target="score"):
    """
    Regression targets r2 and r1 = r2 * Z_1 cap of all selected rows

    Returns
    -------
    tuple: (r2 vector, dict auxiliary covariate -> r1 vector)
    """

    design, fitted, _ = disease_terms(ctx, theta)
    outcome = ctx.outcome

    if target == "cases":
        r2 = outcome * (1 - fitted)
    else:
        r2 = outcome - fitted

    r1 = {a: r2 * ctx.sample.frame[a].to_numpy(dtype=float) for a in ctx.roles.auxiliary}

    return r2, r1


def build_aux_flexible(ctx, theta, hyper=None, include_outcome=True, target="score", cohort=None):
    """
    Train the flexible auxiliary score model at theta

    Parameters
    ----------
    ctx : ValidatedContext
        validated data, regressors are trained on its selected rows
    theta : numpy.ndarray
        current disease model parameter
    hyper : FlexHyper
        regressor settings
    include_outcome : bool
        use the outcome as a feature
    target : str
        "score" or "cases"
    cohort : str
        train on the members of this cohort only, with its own selection features

    Returns
    -------
    AuxiliaryScoreModel: flexible model
    """

    if len(ctx.roles.auxiliary) == 0:
        raise EmptyAuxiliary("the flexible auxiliary score model needs at least one auxiliary variable")

    rows = np.ones(ctx.n_selected, dtype=bool) if cohort is None else ctx.cohort_indicator(cohort) == 1
    if np.sum(rows) < min_regressor_rows:
        raise TooFewRows("auxiliary score model needs at least %d selected rows" % min_regressor_rows)

    feature_names = ctx.roles.feature_names(include_outcome, cohort)
    features = ctx.sample.frame.loc[rows, feature_names]

    def targets(t):
        r2, r1 = aux_targets_for(ctx, t, target)
        return r2[rows], {name: response[rows] for name, response in r1.items()}

    r2, r1 = targets(theta)

    regressors = {"f2": fit_flex_regressor(features, r2, hyper)}
    for name, response in r1.items():
        regressors[name] = fit_flex_regressor(features, response, hyper)

    return AuxiliaryScoreModel("flexible", ctx.spec.terms, ctx.roles.auxiliary, feature_names,
                               ctx.roles.outcome, regressors=regressors, theta=np.array(theta, dtype=float),
                               targets=targets)


def build_aux_parametric(ctx, theta, cfg=None, include_outcome=True):
    """
    Fit the normal linear model of Z_1 cap given X and return the integrating auxiliary model

    Least squares solves the normal score for the mean coefficients; the
    residual covariance is estimated with n - q degrees of freedom. The
    common random draws are fixed by cfg.seed.

    Returns
    -------
    AuxiliaryScoreModel: parametric model
    """

    if cfg is None:
        cfg = JaipwConfig()

    if len(ctx.roles.auxiliary) == 0:
        raise EmptyAuxiliary("the parametric auxiliary score model needs at least one auxiliary variable")

    feature_names = ctx.roles.feature_names(include_outcome)
    frame = ctx.sample.frame
    condition = np.column_stack([np.ones(len(frame)), frame[feature_names].to_numpy(dtype=float)])
    response = frame[ctx.roles.auxiliary].to_numpy(dtype=float)

    gamma = np.linalg.lstsq(condition, response, rcond=None)[0]
    residual = response - condition @ gamma
    covariance = residual.T @ residual / max(len(frame) - condition.shape[1], 1)

    return parametric_model(ctx, gamma, covariance, cfg, feature_names, theta)


def parametric_model(ctx, gamma, covariance, cfg, feature_names, theta=None):
    """parametric auxiliary model for a given conditional law"""

    covariance = np.atleast_2d(covariance)
    eigenvalues, eigenvectors = np.linalg.eigh(covariance)
    scale = eigenvectors @ np.diag(np.sqrt(np.clip(eigenvalues, 0, None)))

    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, len(ctx.roles.auxiliary)]))
    draws = rng.standard_normal((cfg.mc_draws, len(ctx.roles.auxiliary)))

    return AuxiliaryScoreModel("parametric", ctx.spec.terms, ctx.roles.auxiliary, feature_names,
                               ctx.roles.outcome, gamma=np.atleast_2d(gamma), scale=scale, draws=draws,
                               theta=None if theta is None else np.array(theta, dtype=float))


def zero_aux_model(ctx):
    """auxiliary model which is identically zero"""
    return AuxiliaryScoreModel("zero", ctx.spec.terms, ctx.roles.auxiliary, list(), ctx.roles.outcome)


def make_aux_builder(ctx, cfg=None, cohort=None):
    """
    Return a callable theta -> AuxiliaryScoreModel for the configured auxiliary mode

    In parametric mode the conditional law is fitted once, only theta changes.
    In flexible mode the regressors are trained at the first theta asked
    for, later parameters refit them on their frozen structure, which
    keeps f(X, theta) continuous in theta.
    """

    if cfg is None:
        cfg = JaipwConfig()

    if cfg.aux_mode == "parametric":
        fitted = build_aux_parametric(ctx, None, cfg, cfg.include_outcome)

        def parametric_builder(theta):
            return AuxiliaryScoreModel("parametric", fitted.terms, fitted.auxiliary, fitted.feature_names,
                                       fitted.outcome, gamma=fitted.gamma, scale=fitted.scale,
                                       draws=fitted.draws, theta=np.array(theta, dtype=float))

        return parametric_builder

    trained = dict()

    def flexible_builder(theta):
        if "model" not in trained:
            trained["model"] = build_aux_flexible(ctx, theta, cfg.hyper, cfg.include_outcome, cfg.aux_target,
                                                  cohort)
        model = copy.copy(trained["model"])
        model.theta = np.array(theta, dtype=float)
        return model

    return flexible_builder


def _fixed_point(ctx, weights, offset, cfg, method, start=None):
    """
    Algorithm loop shared by the doubly robust solvers

    Parameters
    ----------
    weights : numpy.ndarray
        inverse selection probability of every selected row
    offset : Callable
        theta -> (constant part of the estimating function, diagnostics)
    """

    design = ctx.disease_design()
    outcome = ctx.outcome
    population_size = ctx.population_size

    if start is None:
        theta = fit_weighted_logistic(design, outcome, None, cfg.newton).coefficients
    else:
        theta = np.array(start, dtype=float)

    def jacobian(t):
        return bread_weighted(design, expit(design @ t), weights, population_size)

    previous_value = None
    best_theta, best_step, best_value = theta, np.inf, None
    aux_diagnostics = dict()

    for outer in range(1, cfg.max_outer + 1):

        constant, aux_diagnostics = offset(theta)

        def score(t):
            return design.T @ (weights * (outcome - expit(design @ t))) / population_size + constant

        value = score(theta)
        result = newton_solve(score, jacobian, theta, cfg.newton)

        step = float(np.linalg.norm(result.params - theta))
        change = np.inf if previous_value is None else float(np.linalg.norm(value - previous_value))

        logging.debug("%s outer iteration %d: parameter change %.3e, estimating function change %.3e" %
                      (method, outer, step, change))

        if step < best_step:
            best_theta, best_step, best_value = result.params, step, value

        theta, previous_value = result.params, value

        if step < cfg.eps_params and change < cfg.eps_residual:
            return theta, {"converged": True, "outer_iterations": outer, "residual": result.residual,
                           "aux": aux_diagnostics}

    message = "no convergence within %d outer iterations (smallest parameter change %.3e)" % \
              (cfg.max_outer, best_step)
    residual = None if best_value is None else float(np.max(np.abs(best_value)))
    if cfg.strict is True:
        raise NoOuterConvergence(message, best=best_theta, residual=residual)

    logging.warning("%s: %s, returning best iterate" % (method, message))

    return best_theta, {"converged": False, "outer_iterations": cfg.max_outer, "residual": residual,
                        "aux": aux_diagnostics}


def solve_dr(ctx, fit, aux_builder, spec=None, cfg=None):
    """
    Solve the doubly robust estimating equation

    (1/N) sum S/pi (U(theta) - f(X, theta)) + (1/N) sum S_ext/pi_ext f(X, theta) = 0

    by alternating between rebuilding the auxiliary model at the current
    theta and solving for theta with the auxiliary model held fixed. The
    start is the unweighted logistic fit.

    Parameters
    ----------
    ctx : ValidatedContext
        validated data
    fit : SelectionModelFit
        joint selection probabilities
    aux_builder : Callable
        theta -> AuxiliaryScoreModel
    spec : DiseaseModelSpec
        disease model
    cfg : JaipwConfig
        settings

    Returns
    -------
    EstimateReport: point estimate
    """

    spec = ctx.spec if spec is None else spec
    cfg = JaipwConfig() if cfg is None else cfg

    weights = fit.weights
    external_weights = ctx.external.weights

    def offset(theta):
        aux = aux_builder(theta)
        internal = aux.evaluate(ctx.sample.frame, theta)
        external = aux.evaluate(ctx.external.frame, theta)
        constant = (external_weights @ external - weights @ internal) / ctx.population_size
        return constant, aux.diagnostics

    theta, diagnostics = _fixed_point(ctx, weights, offset, cfg, "JAIPW")
    diagnostics["selection"] = fit.diagnostics

    return EstimateReport(spec.terms, theta, "JAIPW-%s" % fit.method, diagnostics=diagnostics,
                          effective_sample_size=ctx.n_selected)


def solve_dr_no_overlap(ctx, fit, aux_builders, spec=None, cfg=None):
    """
    Solve the sum of cohort specific doubly robust estimating equations

    Parameters
    ----------
    fit : SelectionModelFit
        per cohort selection probabilities
    aux_builders : dict
        cohort -> (theta -> AuxiliaryScoreModel)

    Returns
    -------
    EstimateReport: point estimate
    """

    spec = ctx.spec if spec is None else spec
    cfg = JaipwConfig() if cfg is None else cfg

    if np.any(np.sum(ctx.indicators, axis=1) > 1):
        raise OverlapPresent("%d selected row(s) belong to more than one cohort" %
                             int(np.sum(np.sum(ctx.indicators, axis=1) > 1)))

    external_weights = ctx.external.weights

    weights = np.zeros(ctx.n_selected)
    members = dict()
    for cohort in ctx.cohorts:
        members[cohort] = ctx.cohort_indicator(cohort) == 1
        weights[members[cohort]] = 1 / fit.cohort_probability(cohort)[members[cohort]]

    def offset(theta):
        constant = np.zeros(len(theta))
        diagnostics = dict()
        for cohort in ctx.cohorts:
            aux = aux_builders[cohort](theta)
            internal = aux.evaluate(ctx.sample.frame.loc[members[cohort]], theta)
            external = aux.evaluate(ctx.external.frame, theta)
            constant = constant + (external_weights @ external - weights[members[cohort]] @ internal) / \
                ctx.population_size
            diagnostics[cohort] = aux.diagnostics
        return constant, diagnostics

    theta, diagnostics = _fixed_point(ctx, weights, offset, cfg, "JAIPW (no overlap)")

    return EstimateReport(spec.terms, theta, "JAIPW-%s-no-overlap" % fit.method, diagnostics=diagnostics,
                          effective_sample_size=ctx.n_selected)


def variance_jaipw_approx(ctx, fit, aux_builder, theta, relative_step=1e-5):
    """
    Approximate sandwich variance of the doubly robust estimate

    The variability of the selection and auxiliary model fits is ignored.
    Derivatives of f are central finite differences with step
    relative_step * (1 + |theta_j|).

    Returns
    -------
    numpy.ndarray: variance matrix
    """

    design, fitted, score = disease_terms(ctx, theta)
    weights = fit.weights
    external_weights = ctx.external.weights
    population_size = ctx.population_size

    def auxiliary(t):
        aux = aux_builder(t)
        return aux.evaluate(ctx.sample.frame, t), aux.evaluate(ctx.external.frame, t)

    internal, external = auxiliary(theta)
    n_internal = len(internal)

    derivative = numerical_jacobian(lambda t: np.vstack(auxiliary(t)), theta, relative_step)
    internal_derivative, external_derivative = derivative[:n_internal], derivative[n_internal:]

    bread = bread_weighted(design, fitted, weights, population_size) + \
        (np.tensordot(external_weights, external_derivative, axes=1) -
         np.tensordot(weights, internal_derivative, axes=1)) / population_size

    augmented = weights[:, None] * (score - internal)
    projected = external_weights[:, None] * external
    meat = augmented.T @ augmented / population_size

    internal_rows, external_rows = ctx.linked_rows()
    cross = augmented[internal_rows].T @ projected[external_rows]
    meat = meat + (projected.T @ projected + cross + cross.T) / population_size

    return sandwich(bread, meat, population_size)


class BootstrapResult:
    """
    Bootstrap variance with the replicate estimates it is based on
    """

    def __init__(self, variance, replicates, failures):
        self.variance = variance
        self.replicates = replicates
        self.failures = failures

    def __repr__(self):
        return "BootstrapResult(replicates=%d, failures=%d)" % (len(self.replicates), self.failures)


def variance_bootstrap(ctx, pipeline, n_boot=200, seed=0, threads=1):
    """
    Bootstrap variance of a complete estimation pipeline

    Internal and external rows are resampled independently with
    replacement. Replicate b draws from its own stream (seed, b).

    Parameters
    ----------
    ctx : ValidatedContext
        validated data
    pipeline : Callable
        ValidatedContext -> parameter vector (or EstimateReport)
    n_boot : int
        number of replicates, at least 50
    seed : int
        seed of the resampling streams
    threads : int
        number of worker threads

    Returns
    -------
    BootstrapResult: covariance of the replicate estimates
    """

    if int(n_boot) < 50:
        raise InvalidArgument("at least 50 bootstrap replicates are needed")

    def replicate(index):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), index]))
        try:
            estimate = pipeline(ctx.resample(rng))
        except JaipwError as e:
            logging.debug("Bootstrap replicate %d failed: %s" % (index, e.message))
            return None
        if isinstance(estimate, EstimateReport):
            estimate = estimate.estimate
        return np.asarray(estimate, dtype=float)

    if threads is not None and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            results = list(executor.map(replicate, range(int(n_boot))))
    else:
        results = [replicate(index) for index in range(int(n_boot))]

    replicates = [x for x in results if x is not None]
    failures = len(results) - len(replicates)

    if failures > 0.1 * n_boot:
        raise TooManyFailedReplicates("%d of %d bootstrap replicates failed" % (failures, n_boot))

    if failures > 0:
        logging.warning("%d of %d bootstrap replicates failed and were dropped" % (failures, n_boot))

    replicates = np.vstack(replicates)
    variance = np.atleast_2d(np.cov(replicates, rowvar=False, ddof=1))

    return BootstrapResult(variance, replicates, failures)

# EOF
