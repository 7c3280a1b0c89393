####
#
# per cohort estimation and fixed effects inverse variance combination
#

import logging

import numpy as np

from jaipw_modules.classes import EstimateReport
from jaipw_modules.errors import JaipwError, InvalidArgument, NoOuterConvergence, ZeroVariance


class MetaInput:
    """
    Per cohort estimates entering the combination

    Attributes
    ----------
    cohorts : list
        labels of the cohorts which were estimated successfully
    terms : list
        disease model terms
    estimates : numpy.ndarray
        one row per cohort
    variances : numpy.ndarray
        cohorts x p x p
    reports : list
        per cohort EstimateReports
    failures : dict
        cohort -> error text of cohorts which could not be estimated
    overlap : bool
        some individuals belong to more than one cohort
    """

    def __init__(self, cohorts, terms, estimates, variances, reports=None, failures=None, overlap=False):

        self.cohorts = list(cohorts)
        self.terms = list(terms)
        self.estimates = np.atleast_2d(np.asarray(estimates, dtype=float))
        self.variances = np.asarray(variances, dtype=float).reshape(len(self.cohorts), len(self.terms),
                                                                    len(self.terms))
        self.reports = list() if reports is None else list(reports)
        self.failures = dict() if failures is None else dict(failures)
        self.overlap = bool(overlap)

        if self.estimates.shape != (len(self.cohorts), len(self.terms)):
            raise InvalidArgument("per cohort estimates have shape %s, expected %s" %
                                  (self.estimates.shape, (len(self.cohorts), len(self.terms))))

    @classmethod
    def from_reports(cls, reports, cohorts=None, failures=None, overlap=False):
        if cohorts is None:
            cohorts = [str(i + 1) for i in range(len(reports))]
        if len(reports) == 0:
            raise InvalidArgument("no per cohort estimates to combine")
        return cls(cohorts, reports[0].terms, [r.estimate for r in reports], [r.variance for r in reports],
                   reports, failures, overlap)

    def __repr__(self):
        return "MetaInput(cohorts=%s, failures=%s)" % (self.cohorts, list(self.failures.keys()))


def fit_per_cohort(ctx, method, spec=None, options=None):
    """
    Estimate the disease model in every cohort on its own

    Each cohort is analysed with its members only and single cohort
    selection models. A failing cohort is reported and skipped.

    Parameters
    ----------
    ctx : ValidatedContext
        validated multi cohort data
    method : str
        joint estimation method applied to every cohort
    spec : DiseaseModelSpec
        disease model
    options : EstimationOptions
        method settings

    Returns
    -------
    MetaInput: estimates of all successful cohorts
    """

    from jaipw_modules.estimation_methods import run_method

    spec = ctx.spec if spec is None else spec

    reports = list()
    cohorts = list()
    failures = dict()
    last_error = None

    for cohort in ctx.cohorts:
        try:
            cohort_ctx = ctx.for_cohort(cohort)
            cohort_ctx.spec = spec
            report = run_method(cohort_ctx, method, options)
        except JaipwError as e:
            logging.warning("Meta analysis: cohort '%s' failed with %s: %s" % (cohort, e.name, e.message))
            failures[cohort] = "%s: %s" % (e.name, e.message)
            last_error = e
            continue

        if report.variance is None:
            logging.warning("Meta analysis: cohort '%s' has no variance, skipped" % cohort)
            failures[cohort] = "no variance: outer loop did not converge"
            last_error = NoOuterConvergence("cohort '%s' has no variance" % cohort)
            continue

        report.diagnostics["cohort"] = cohort
        reports.append(report)
        cohorts.append(cohort)

    if len(reports) == 0:
        raise last_error

    overlap = bool(np.any(np.sum(ctx.indicators, axis=1) > 1))

    return MetaInput.from_reports(reports, cohorts, failures, overlap)


def combine_fixed_effects(meta):
    """
    Coordinate wise inverse variance weighted mean

    w_ij = 1 / var_ij, theta_j = sum w_ij theta_ij / sum w_ij, se_j = (sum w_ij)^-1/2

    Parameters
    ----------
    meta : MetaInput
        per cohort estimates

    Returns
    -------
    EstimateReport: combined estimate with a diagonal variance
    """

    diagonal = np.array([np.diag(v) for v in meta.variances])
    if np.any(~(diagonal > 0)):
        raise ZeroVariance("per cohort variances must be positive, found %s" %
                           np.round(diagonal[~(diagonal > 0)], 6))

    weights = 1 / diagonal
    weight_sum = weights.sum(axis=0)
    estimate = (weights * meta.estimates).sum(axis=0) / weight_sum

    diagnostics = {
        "cohorts": meta.cohorts,
        "failures": meta.failures,
        "cohort_weights": weights / weight_sum,
        "overlap_warning": meta.overlap
    }

    if meta.overlap is True:
        logging.warning("Meta analysis: cohorts overlap, the per cohort estimates are not independent")

    return EstimateReport(meta.terms, estimate, "meta", variance=np.diag(1 / weight_sum),
                          variance_flavor="fixed_effects", diagnostics=diagnostics,
                          effective_sample_size=sum(r.effective_sample_size or 0 for r in meta.reports) or None)

# EOF
