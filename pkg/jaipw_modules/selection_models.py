####
#
# per cohort selection probabilities and their joint composition
#

import logging

import numpy as np
import pandas as pd
from scipy.special import expit

from jaipw_modules import default_probability_floor, plural
from jaipw_modules.classes import SelectionModelFit
from jaipw_modules.common import my_own_function_name
from jaipw_modules.errors import (
    InvalidArgument,
    InvalidConfig,
    NoConvergence,
    SingularJacobian,
    InfeasibleCalibration,
    OverlapCategoryEmpty,
    EmptyCellError,
    EmptyCohort,
    DataError
)
from jaipw_modules.solvers import (
    NewtonConfig,
    newton_solve,
    fit_simplex_mean_regression,
    fit_multinomial_logistic,
    multinomial_probabilities,
    separation_norm
)

selection_methods = ["JPL", "JSR", "JPS", "JCL", "Known"]

# JSR membership categories, external only is the reference
category_external_only = 0
category_internal_only = 1
category_both = 2


class SelectionConfig:
    """
    Settings shared by all selection model fits

    Attributes
    ----------
    newton : NewtonConfig
        solver settings
    probability_floor : float
        fitted probabilities are kept inside [floor, 1 - floor]
    weight_sum_tolerance : float
        relative deviation of the design weight sum from N that triggers a warning
    """

    def __init__(self, newton=None, probability_floor=default_probability_floor, weight_sum_tolerance=0.1):
        self.newton = NewtonConfig() if newton is None else newton
        self.probability_floor = float(probability_floor)
        self.weight_sum_tolerance = float(weight_sum_tolerance)

    def __repr__(self):
        return str(self.__dict__)


class StrataSpec:
    """
    Discretization and reference cell probabilities for post-stratification

    Parameters
    ----------
    cutpoints : dict
        variable -> ascending cutpoints, a value equal to a cutpoint falls
        into the lower bin; variables without cutpoints are used as coded
    cohort_variables : dict
        cohort -> variables spanning its strata
    mode : str
        "exact" (joint cell probabilities) or "marginal" (root marginal
        times conditionals of every other variable given the root)
    joint : dict
        cohort -> {cell tuple: probability}, exact mode
    root : str
        conditioning variable, marginal mode
    root_marginal : dict
        root level -> probability, marginal mode
    conditionals : dict
        variable -> {root level: {level: probability}}, marginal mode
    smoothing : bool
        add one to every cohort cell count
    """

    def __init__(self, cutpoints, cohort_variables, mode="exact", joint=None, root=None, root_marginal=None,
                 conditionals=None, smoothing=False):

        if mode not in ["exact", "marginal"]:
            raise InvalidConfig("unknown post-stratification mode '%s'" % mode)

        self.cutpoints = {k: sorted(float(x) for x in v) for k, v in (cutpoints or dict()).items()}
        self.cohort_variables = {k: list(v) for k, v in cohort_variables.items()}
        self.mode = mode
        self.joint = joint or dict()
        self.root = root
        self.root_marginal = root_marginal or dict()
        self.conditionals = conditionals or dict()
        self.smoothing = bool(smoothing)

        if mode == "exact":
            for cohort in self.cohort_variables:
                table = self.joint.get(cohort)
                if table is None:
                    raise InvalidConfig("no joint cell probabilities for cohort '%s'" % cohort)
                values = np.array(list(table.values()), dtype=float)
                if np.any(values < 0):
                    raise InvalidConfig("negative cell probability for cohort '%s'" % cohort)
                if abs(np.sum(values) - 1) > 1e-9:
                    raise InvalidConfig("cell probabilities of cohort '%s' sum to %.12f" % (cohort, np.sum(values)))
        else:
            if root is None:
                raise InvalidConfig("marginal post-stratification needs a root variable")
            tables = [self.root_marginal] + [t for c in self.conditionals.values() for t in c.values()]
            for table in tables:
                if any(float(x) < 0 for x in table.values()):
                    raise InvalidConfig("negative conditional cell probability")

    def discretize(self, frame, variable):
        values = frame[variable].to_numpy(dtype=float)
        if variable in self.cutpoints:
            return np.searchsorted(np.asarray(self.cutpoints[variable]), values, side="left")
        return values.astype(int)

    def cells(self, frame, cohort):
        """cell tuple of every row of 'frame' for the strata of 'cohort'"""
        levels = [self.discretize(frame, v) for v in self.cohort_variables[cohort]]
        return [tuple(int(x) for x in row) for row in zip(*levels)]

    def cell_probability(self, cohort, cell):
        """population probability of a cell"""

        if self.mode == "exact":
            return float(self.joint[cohort].get(tuple(cell), 0.0))

        variables = self.cohort_variables[cohort]
        probability = 0.0
        for root_level, root_probability in self.root_marginal.items():
            if self.root in variables and cell[variables.index(self.root)] != root_level:
                continue
            term = float(root_probability)
            for variable, level in zip(variables, cell):
                if variable == self.root:
                    continue
                term *= float(self.conditionals.get(variable, dict()).get(root_level, dict()).get(level, 0.0))
            probability += term

        return probability

    def __repr__(self):
        return "StrataSpec(mode=%s, cohorts=%s)" % (self.mode, list(self.cohort_variables.keys()))


class PopulationTotals:
    """
    Known population totals of every selection design term

    Parameters
    ----------
    totals : dict
        cohort -> {term: population total}
    population_size : float
        target population size N, the total of the intercept column
    """

    def __init__(self, totals, population_size):

        if population_size is None or not population_size > 0:
            raise InvalidConfig("population totals need a positive population size")

        self.totals = {k: {t: float(x) for t, x in v.items()} for k, v in totals.items()}
        self.population_size = float(population_size)

        for cohort, values in self.totals.items():
            if not all(np.isfinite(list(values.values()))):
                raise InvalidConfig("population totals of cohort '%s' are not finite" % cohort)

    def vector(self, cohort, terms):
        """totals in the order of the selection design (intercept first)"""

        cohort_totals = self.totals.get(cohort, dict())
        vector = [self.population_size]
        for term in terms:
            if term not in cohort_totals:
                raise InvalidConfig("no population total for term '%s' of cohort '%s'" % (term, cohort))
            vector.append(cohort_totals[term])

        return np.array(vector)

    def __repr__(self):
        return str(self.__dict__)


def compose_joint(pi_rows):
    """
    Joint selection probability 1 - prod_k (1 - pi_k)

    Parameters
    ----------
    pi_rows : array like
        per cohort probabilities, one row per individual (a single row may
        be passed as a vector)

    Returns
    -------
    numpy.ndarray, float: joint probability per row
    """

    pi_rows = np.asarray(pi_rows, dtype=float)
    if pi_rows.ndim == 1:
        return float(1 - np.prod(1 - pi_rows))

    return 1 - np.prod(1 - pi_rows, axis=1)


def clamp_probabilities(pi, floor=default_probability_floor):
    """
    Clip probabilities to [floor, 1 - floor]

    Returns
    -------
    tuple: (clipped probabilities, number of clipped entries)
    """

    if not 0 < floor < 0.5:
        raise InvalidArgument("probability floor must be inside (0, 0.5), got %s" % floor)

    pi = np.asarray(pi, dtype=float)
    clipped = np.clip(pi, floor, 1 - floor)

    return clipped, int(np.sum(clipped != pi))


def _finish_fit(method, ctx, pi_internal, pi_external, alphas, diagnostics, cfg):
    """clamp per cohort probabilities, compose the joint one and build the fit"""

    pi_internal, clipped_internal = clamp_probabilities(pi_internal, cfg.probability_floor)
    clipped_external = 0
    if pi_external is not None:
        pi_external, clipped_external = clamp_probabilities(pi_external, cfg.probability_floor)

    diagnostics["clipped"] = clipped_internal + clipped_external
    if diagnostics["clipped"] > 0:
        logging.info("%s: %d fitted probabilit%s clipped to the floor %g" %
                     (method, diagnostics["clipped"], "ies" if diagnostics["clipped"] != 1 else "y",
                      cfg.probability_floor))

    return SelectionModelFit(method, ctx.cohorts, pi_internal, compose_joint(pi_internal), alphas=alphas,
                             pi_external=pi_external, diagnostics=diagnostics)


def _start_values(n_params, n_members, population_size):
    start = np.zeros(n_params)
    share = min(max(n_members / population_size, 1e-6), 1 - 1e-6)
    start[0] = np.log(share / (1 - share))
    return start


def check_weight_sum(ctx, cfg):
    """warn when the design weights do not add up to the configured population size"""

    weight_sum = float(np.sum(ctx.external.weights))
    deviation = abs(weight_sum - ctx.population_size) / ctx.population_size

    if ctx.estimated_population_size is False and deviation > cfg.weight_sum_tolerance:
        logging.warning("WeightSumMismatch: external design weights sum to %.1f, population size is %.1f" %
                        (weight_sum, ctx.population_size))
        return True

    return False


def pseudolikelihood_score(ctx, cohort, alpha):
    """
    Pseudolikelihood estimating function of one cohort

    (1/N) sum S_k X_k - (1/N) sum S_ext / pi_ext pi_k(X_k) X_k
    """

    members = ctx.cohort_indicator(cohort) == 1
    internal = ctx.selection_design(cohort)[members]
    external = ctx.selection_design(cohort, external=True)
    fitted = expit(external @ alpha)

    return (internal.sum(axis=0) - external.T @ (ctx.external.weights * fitted)) / ctx.population_size


def fit_jpl(ctx, cfg=None):
    """
    Fit all cohort selection models by the pseudolikelihood approach

    Parameters
    ----------
    ctx : ValidatedContext
        validated data
    cfg : SelectionConfig
        settings

    Returns
    -------
    SelectionModelFit: JPL fit
    """

    if cfg is None:
        cfg = SelectionConfig()

    diagnostics = {"weight_sum_mismatch": check_weight_sum(ctx, cfg), "residual": dict(), "iterations": dict()}
    external_weights = ctx.external.weights

    alphas = dict()
    pi_internal = list()
    pi_external = list()

    for cohort in ctx.cohorts:

        external = ctx.selection_design(cohort, external=True)

        def jacobian(alpha):
            fitted = expit(external @ alpha)
            return -(external * (external_weights * fitted * (1 - fitted))[:, None]).T @ external / \
                ctx.population_size

        start = _start_values(external.shape[1], np.sum(ctx.cohort_indicator(cohort)), ctx.population_size)

        try:
            result = newton_solve(lambda a: pseudolikelihood_score(ctx, cohort, a), jacobian, start, cfg.newton)
        except (NoConvergence, SingularJacobian) as e:
            raise type(e)("JPL selection model of cohort '%s': %s" % (cohort, e.message),
                          best=e.best, residual=e.residual) from e

        alphas[cohort] = result.params
        diagnostics["residual"][cohort] = result.residual
        diagnostics["iterations"][cohort] = result.iterations

        pi_internal.append(expit(ctx.selection_design(cohort) @ result.params))
        pi_external.append(expit(external @ result.params))

        logging.debug("JPL cohort %s: alpha = %s" % (cohort, np.round(result.params, 4)))

    return _finish_fit("JPL", ctx, np.column_stack(pi_internal), np.column_stack(pi_external), alphas,
                       diagnostics, cfg)


def jsr_categories(ctx, cohort):
    """
    Membership categories of the union of cohort 'cohort' and the external sample

    Returns
    -------
    tuple: (design rows, category labels)
    """

    internal_ids = ctx.sample.ids
    external_ids = ctx.external.ids
    if internal_ids is None or external_ids is None:
        raise OverlapCategoryEmpty("JSR needs a shared id column to identify individuals in both samples")

    members = ctx.cohort_indicator(cohort) == 1
    member_ids = internal_ids[members]

    in_external = np.isin(member_ids, external_ids)
    external_only = ~np.isin(external_ids, member_ids)

    if not np.any(in_external):
        raise OverlapCategoryEmpty("no member of cohort '%s' is part of the external sample" % cohort)

    design = np.vstack([ctx.selection_design(cohort)[members],
                        ctx.selection_design(cohort, external=True)[external_only]])
    labels = np.concatenate([np.where(in_external, category_both, category_internal_only),
                             np.full(int(np.sum(external_only)), category_external_only)])

    return design, labels


def fit_jsr(ctx, cfg=None):
    """
    Fit all cohort selection models by the simplex regression approach

    pi_k(X_k) = P(S_ext=1|X_k) (p11 + p10) / (p11 + p01), the first factor
    from a simplex regression of the design probabilities, the ratio from a
    multinomial model of the sample membership categories.

    Returns
    -------
    SelectionModelFit: JSR fit
    """

    if cfg is None:
        cfg = SelectionConfig()

    diagnostics = {"categories": dict(), "dispersion": dict()}
    alphas = dict()
    pi_internal = list()
    pi_external = list()

    for cohort in ctx.cohorts:

        internal = ctx.selection_design(cohort)
        external = ctx.selection_design(cohort, external=True)

        simplex = fit_simplex_mean_regression(external, ctx.external.probability, cfg.newton)

        design, labels = jsr_categories(ctx, cohort)
        multinomial = fit_multinomial_logistic(design, labels, cfg.newton)

        diagnostics["categories"][cohort] = {c: int(np.sum(labels == c)) for c in range(3)}
        diagnostics["dispersion"][cohort] = simplex.dispersion
        alphas[cohort] = {"simplex": simplex.coefficients, "multinomial": multinomial.coefficients}

        for rows, target in [(internal, pi_internal), (external, pi_external)]:
            categories = multinomial_probabilities(rows, multinomial.coefficients)
            ratio = (categories[:, category_both] + categories[:, category_internal_only]) / \
                    (categories[:, category_both] + categories[:, category_external_only])
            target.append(simplex.predict(rows) * ratio)

    return _finish_fit("JSR", ctx, np.column_stack(pi_internal), np.column_stack(pi_external), alphas,
                       diagnostics, cfg)


def fit_jps(ctx, strata, cfg=None):
    """
    Post-stratification selection probabilities

    pi_k(cell) = share of cohort members in the cell * (n_k / N) / P(cell)

    Parameters
    ----------
    ctx : ValidatedContext
        validated data
    strata : StrataSpec
        discretization and population cell probabilities
    cfg : SelectionConfig
        settings

    Returns
    -------
    SelectionModelFit: JPS fit, without parameters
    """

    if cfg is None:
        cfg = SelectionConfig()

    population_size = ctx.population_size
    diagnostics = {"mode": strata.mode, "smoothed": dict(), "empty_cells": dict()}
    pi_internal = list()

    for cohort in ctx.cohorts:

        if cohort not in strata.cohort_variables:
            raise InvalidConfig("no strata defined for cohort '%s'" % cohort)

        members = ctx.cohort_indicator(cohort) == 1
        cells = strata.cells(ctx.sample.frame, cohort)
        counts = pd.Series([c for c, m in zip(cells, members) if m], dtype=object).value_counts().to_dict()
        n_members = float(np.sum(members))
        if n_members == 0:
            raise EmptyCohort("cohort '%s' has no selected rows" % cohort)

        cell_probability = dict()
        for cell in set(cells):
            cell_probability[cell] = strata.cell_probability(cohort, cell)

        bad_cells = [c for c, m in zip(cells, members) if m and cell_probability[c] <= 0]
        if len(bad_cells) > 0:
            raise EmptyCellError("cohort '%s': selected rows fall into population cell %s of probability 0" %
                                 (cohort, bad_cells[0]))

        empty = [c for c in set(cells) if counts.get(c, 0) == 0]
        diagnostics["empty_cells"][cohort] = len(empty)

        smoothed = strata.smoothing is True and len(empty) > 0
        diagnostics["smoothed"][cohort] = smoothed
        if smoothed is True:
            logging.warning("ZeroCellSmoothed: cohort '%s' has %d empty cell%s, add one smoothing applied" %
                            (cohort, len(empty), plural(len(empty))))
            n_cells = len(strata.joint.get(cohort, dict())) or len(set(cells))
            shares = {c: (counts.get(c, 0) + 1) / (n_members + n_cells) for c in set(cells)}
        else:
            shares = {c: counts.get(c, 0) / n_members for c in set(cells)}

        probability = np.zeros(len(cells))
        for row, cell in enumerate(cells):
            if cell_probability[cell] > 0:
                probability[row] = shares[cell] * (n_members / population_size) / cell_probability[cell]

        pi_internal.append(probability)

    return _finish_fit("JPS", ctx, np.column_stack(pi_internal), None, None, diagnostics, cfg)


def calibration_score(ctx, cohort, alpha, totals):
    """(1/N) (sum S_k X_k / pi_k(X_k) - population totals)"""

    members = ctx.cohort_indicator(cohort) == 1
    design = ctx.selection_design(cohort)[members]
    with np.errstate(over="ignore"):
        inverse = 1 + np.exp(-(design @ alpha))

    return (design.T @ inverse - totals) / ctx.population_size


def fit_jcl(ctx, totals, cfg=None):
    """
    Fit all cohort selection models by calibration to population totals

    Parameters
    ----------
    ctx : ValidatedContext
        validated data
    totals : PopulationTotals
        known totals of all selection design terms
    cfg : SelectionConfig
        settings

    Returns
    -------
    SelectionModelFit: JCL fit
    """

    if cfg is None:
        cfg = SelectionConfig()

    diagnostics = {"constraint_residual": dict(), "relative_constraint_residual": dict(), "iterations": dict()}
    alphas = dict()
    pi_internal = list()

    for cohort in ctx.cohorts:

        target = totals.vector(cohort, ctx.roles.selection_variables[cohort])
        members = ctx.cohort_indicator(cohort) == 1
        design = ctx.selection_design(cohort)[members]

        def jacobian(alpha):
            with np.errstate(over="ignore"):
                odds_inverse = np.exp(-(design @ alpha))
            return -(design * odds_inverse[:, None]).T @ design / ctx.population_size

        start = _start_values(design.shape[1], np.sum(members), ctx.population_size)

        try:
            result = newton_solve(lambda a: calibration_score(ctx, cohort, a, target), jacobian, start, cfg.newton)
        except (NoConvergence, SingularJacobian) as e:
            if e.best is not None and np.linalg.norm(e.best) > separation_norm:
                raise InfeasibleCalibration("cohort '%s': totals cannot be met by a logistic selection model" %
                                            cohort, best=e.best, residual=e.residual) from e
            raise type(e)("JCL selection model of cohort '%s': %s" % (cohort, e.message),
                          best=e.best, residual=e.residual) from e

        constraint = calibration_score(ctx, cohort, result.params, target) * ctx.population_size
        diagnostics["constraint_residual"][cohort] = float(np.max(np.abs(constraint)))
        diagnostics["relative_constraint_residual"][cohort] = \
            float(np.max(np.abs(constraint)) / np.linalg.norm(target))
        diagnostics["iterations"][cohort] = result.iterations

        alphas[cohort] = result.params
        pi_internal.append(expit(ctx.selection_design(cohort) @ result.params))

    return _finish_fit("JCL", ctx, np.column_stack(pi_internal), None, alphas, diagnostics, cfg)


def fit_known(ctx, pi_internal, pi_external=None, cfg=None):
    """
    Wrap user supplied per cohort selection probabilities

    Parameters
    ----------
    pi_internal : array like
        probabilities of all selected rows, one column per cohort
    pi_external : array like
        probabilities of all external rows (optional)
    """

    if cfg is None:
        cfg = SelectionConfig()

    pi_internal = np.asarray(pi_internal, dtype=float)
    if pi_internal.ndim == 1:
        pi_internal = pi_internal.reshape(-1, 1)

    if pi_internal.shape != (ctx.n_selected, ctx.n_cohorts):
        raise DataError("known selection probabilities have shape %s, expected %s" %
                        (pi_internal.shape, (ctx.n_selected, ctx.n_cohorts)))

    if np.any(~np.isfinite(pi_internal)) or np.any(pi_internal < 0) or np.any(pi_internal > 1):
        raise DataError("known selection probabilities must be inside [0, 1]")

    return _finish_fit("Known", ctx, pi_internal, pi_external, None, dict(), cfg)


def fit_selection_model(ctx, method, cfg=None, strata=None, totals=None, known=None):
    """
    Fit the selection model of the requested method

    Parameters
    ----------
    method : str
        one of JPL, JSR, JPS, JCL, Known
    strata : StrataSpec
        needed by JPS
    totals : PopulationTotals
        needed by JCL
    known : numpy.ndarray
        needed by Known

    Returns
    -------
    SelectionModelFit: the fit
    """

    logging.debug("%s: fitting %s selection models for %d cohort%s" %
                  (my_own_function_name(), method, ctx.n_cohorts, plural(ctx.n_cohorts)))

    if method == "JPL":
        return fit_jpl(ctx, cfg)
    if method == "JSR":
        return fit_jsr(ctx, cfg)
    if method == "JPS":
        if strata is None:
            raise InvalidConfig("post-stratification needs strata definitions")
        return fit_jps(ctx, strata, cfg)
    if method == "JCL":
        if totals is None:
            raise InvalidConfig("calibration needs population totals")
        return fit_jcl(ctx, totals, cfg)
    if method == "Known":
        if known is None:
            raise InvalidConfig("known selection probabilities not supplied")
        return fit_known(ctx, known, cfg=cfg)

    raise InvalidConfig("unknown selection method '%s'" % method)

# EOF
