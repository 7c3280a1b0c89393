####
#
# weighted disease model score equation and its sandwich variances
#

import logging

import numpy as np
from scipy.linalg import block_diag
from scipy.special import expit

from jaipw_modules.classes import EstimateReport
from jaipw_modules.errors import SingularBread, SingularH
from jaipw_modules.solvers import fit_weighted_logistic, max_condition_number


def _invert(matrix, error, what):
    with np.errstate(all="ignore"):
        condition = np.linalg.cond(matrix)
    if not np.isfinite(condition) or condition > max_condition_number:
        raise error("%s is singular (condition estimate %.3e)" % (what, condition))
    return np.linalg.inv(matrix)


def sandwich(bread, meat, population_size):
    """(1/N) G^-1 E (G^-1)'"""
    inverse = _invert(bread, SingularBread, "bread matrix")
    variance = inverse @ meat @ inverse.T / population_size
    return (variance + variance.T) / 2


def disease_terms(ctx, theta):
    """
    Return design, fitted probabilities and weighted score contributions

    Returns
    -------
    tuple: (Z, expit(theta'Z), S/pi (D - expit(theta'Z)) Z) for all selected rows
    """
    design = ctx.disease_design()
    fitted = expit(design @ theta)
    return design, fitted, (ctx.outcome - fitted)[:, None] * design


def bread_weighted(design, fitted, weights, population_size):
    """G = -(1/N) sum w expit'(theta'Z) Z Z'"""
    return -(design * (weights * fitted * (1 - fitted))[:, None]).T @ design / population_size


def fit_ipw(ctx, fit, spec=None, cfg=None):
    """
    Solve (1/N) sum S/pi (D - expit(theta'Z)) Z = 0

    Parameters
    ----------
    ctx : ValidatedContext
        validated data
    fit : SelectionModelFit
        joint selection probabilities of all selected rows
    spec : DiseaseModelSpec
        disease model, the one of the context if None
    cfg : NewtonConfig
        solver settings

    Returns
    -------
    EstimateReport: point estimate
    """

    spec = ctx.spec if spec is None else spec

    logistic = fit_weighted_logistic(ctx.disease_design(), ctx.outcome, fit.weights, cfg,
                                     scale=ctx.population_size)

    diagnostics = {
        "converged": logistic.converged,
        "separation": logistic.separation,
        "iterations": logistic.iterations,
        "residual": logistic.residual,
        "selection": fit.diagnostics
    }

    logging.debug("IPW (%s) estimate: %s" % (fit.method, np.round(logistic.coefficients, 4)))

    return EstimateReport(spec.terms, logistic.coefficients, "IPW-%s" % fit.method, diagnostics=diagnostics,
                          effective_sample_size=ctx.n_selected)


def fit_naive(ctx, spec=None, cfg=None, cohort_intercepts=False):
    """
    Unweighted logistic regression on the selected rows with the classical sandwich variance

    Parameters
    ----------
    cohort_intercepts : bool
        add indicators of cohorts 2..K to the design, only the disease
        model terms are reported
    """

    spec = ctx.spec if spec is None else spec
    design = ctx.disease_design()
    n_terms = design.shape[1]

    if cohort_intercepts is True and ctx.n_cohorts > 1:
        design = np.column_stack([design] + [ctx.cohort_indicator(c) for c in ctx.cohorts[1:]])

    weights = np.ones(ctx.n_selected)
    logistic = fit_weighted_logistic(design, ctx.outcome, weights, cfg)

    fitted = logistic.fitted
    score = (ctx.outcome - fitted)[:, None] * design
    variance = sandwich(bread_weighted(design, fitted, weights, ctx.n_selected), score.T @ score / ctx.n_selected,
                        ctx.n_selected)

    method = "naive_intercepts" if cohort_intercepts is True else "naive"
    return EstimateReport(spec.terms, logistic.coefficients[:n_terms], method,
                          variance=variance[:n_terms, :n_terms], variance_flavor="classical",
                          diagnostics={"converged": logistic.converged, "separation": logistic.separation},
                          effective_sample_size=ctx.n_selected)


def _known_parts(ctx, fit, theta):
    design, fitted, score = disease_terms(ctx, theta)
    weights = fit.weights
    weighted_score = weights[:, None] * score
    bread = bread_weighted(design, fitted, weights, ctx.population_size)
    meat = weighted_score.T @ weighted_score / ctx.population_size
    return design, fitted, weighted_score, bread, meat


def variance_known(ctx, fit, theta):
    """
    Sandwich variance treating the selection probabilities as known

    Returns
    -------
    numpy.ndarray: (1/N) G^-1 E (G^-1)'
    """
    _, _, _, bread, meat = _known_parts(ctx, fit, theta)
    return sandwich(bread, meat, ctx.population_size)


def selection_parameter_gradient(ctx, fit, design, fitted, theta):
    """
    Derivative of the weighted score with respect to all selection parameters

    G_alpha = -(1/N) sum S/pi^2 prod_j (1 - pi_j) Z [pi_1 X_1', ..., pi_K X_K'] (D - expit)
    """

    weights = fit.weights
    not_selected = np.prod(1 - fit.pi_internal, axis=1)
    common = weights ** 2 * not_selected * (ctx.outcome - fitted)

    blocks = list()
    for index, cohort in enumerate(fit.cohorts):
        selection = ctx.selection_design(cohort)
        blocks.append(-(design * (common * fit.pi_internal[:, index])[:, None]).T @ selection /
                      ctx.population_size)

    return np.hstack(blocks)


def _corrected_meat(meat, correction, unit_terms, unit_square):
    """E1 - E2 - E2' + E4 with E2 = C (1/N) sum h g' and E4 = C M C'"""
    cross = correction @ unit_terms
    return meat - cross - cross.T + correction @ unit_square @ correction.T


def variance_jpl(ctx, fit, theta, include_nuisance=True):
    """
    Sandwich variance of the IPW estimate with JPL selection models

    The meat is E1 - E2 - E3 + E4, the nuisance blocks propagate the
    estimation of the pseudolikelihood parameters through G_alpha H^-1.
    Internal and external rows of the same individual (shared id) are
    one unit of the cross sums.

    Parameters
    ----------
    include_nuisance : bool
        with False only E1 is used, which is the known weight variance

    Returns
    -------
    numpy.ndarray: variance matrix
    """

    design, fitted, weighted_score, bread, meat = _known_parts(ctx, fit, theta)
    population_size = ctx.population_size

    if include_nuisance is False:
        return sandwich(bread, meat, population_size)

    external_weights = ctx.external.weights

    h_blocks = list()
    internal_terms = list()
    external_terms = list()
    for index, cohort in enumerate(fit.cohorts):
        internal = ctx.selection_design(cohort)
        external = ctx.selection_design(cohort, external=True)
        pi_external = fit.pi_external[:, index]

        h_blocks.append(-(external * (external_weights * pi_external * (1 - pi_external))[:, None]).T @ external /
                        population_size)
        internal_terms.append(ctx.cohort_indicator(cohort)[:, None] * internal)
        external_terms.append((external_weights * pi_external)[:, None] * external)

    internal_terms = np.hstack(internal_terms)
    external_terms = np.hstack(external_terms)

    # linked individuals carry both contributions in one unit
    internal_rows, external_rows = ctx.linked_rows()
    unit_terms = internal_terms.copy()
    unit_terms[internal_rows] -= external_terms[external_rows]
    unlinked = np.ones(ctx.external.n_rows, dtype=bool)
    unlinked[external_rows] = False

    h_inverse = _invert(block_diag(*h_blocks), SingularH, "selection parameter jacobian H")
    correction = selection_parameter_gradient(ctx, fit, design, fitted, theta) @ h_inverse

    unit_square = (unit_terms.T @ unit_terms + external_terms[unlinked].T @ external_terms[unlinked]) / \
        population_size
    corrected = _corrected_meat(meat, correction,
                                unit_terms.T @ weighted_score / population_size, unit_square)

    return sandwich(bread, corrected, population_size)


def variance_jcl(ctx, fit, theta, include_nuisance=True):
    """
    Sandwich variance of the IPW estimate with calibrated selection models

    The calibration estimating function of a unit is S_k X_k / pi_k - X_k;
    the population sum of X X' in E4 is replaced by its weighted estimate
    from the selected rows.

    Parameters
    ----------
    include_nuisance : bool
        with False only E1 is used, which is the known weight variance

    Returns
    -------
    numpy.ndarray: variance matrix
    """

    design, fitted, weighted_score, bread, meat = _known_parts(ctx, fit, theta)
    population_size = ctx.population_size

    if include_nuisance is False:
        return sandwich(bread, meat, population_size)

    h_blocks = list()
    calibrated = list()
    raw = list()
    for index, cohort in enumerate(fit.cohorts):
        selection = ctx.selection_design(cohort)
        members = ctx.cohort_indicator(cohort)
        pi_cohort = fit.pi_internal[:, index]

        h_blocks.append(-(selection * (members * (1 - pi_cohort) / pi_cohort)[:, None]).T @ selection /
                        population_size)
        calibrated.append((members / pi_cohort)[:, None] * selection)
        raw.append(selection)

    calibrated = np.hstack(calibrated)
    raw = np.hstack(raw)

    h_inverse = _invert(block_diag(*h_blocks), SingularH, "calibration jacobian H")
    correction = selection_parameter_gradient(ctx, fit, design, fitted, theta) @ h_inverse

    unit_terms = (calibrated - raw).T @ weighted_score / population_size
    unit_square = (calibrated.T @ calibrated - calibrated.T @ raw - raw.T @ calibrated +
                   (raw * fit.weights[:, None]).T @ raw) / population_size

    corrected = _corrected_meat(meat, correction, unit_terms, unit_square)

    return sandwich(bread, corrected, population_size)


def variance_for_fit(ctx, fit, theta):
    """
    Pick the variance estimator matching the selection method

    Returns
    -------
    tuple: (variance matrix, flavor)
    """

    if fit.method == "JPL":
        return variance_jpl(ctx, fit, theta), "jpl"
    if fit.method == "JCL":
        return variance_jcl(ctx, fit, theta), "jcl"

    return variance_known(ctx, fit, theta), "known"

# EOF
