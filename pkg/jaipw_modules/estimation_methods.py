####
#
# define and describe estimation methods and run them on a validated context
#

import copy
import logging

import numpy as np

from jaipw_modules import plural
from jaipw_modules.errors import InvalidArgument, InvalidConfig
from jaipw_modules.ipw_estimator import fit_ipw, fit_naive, variance_for_fit
from jaipw_modules.jaipw import (
    JaipwConfig,
    make_aux_builder,
    solve_dr,
    variance_jaipw_approx,
    variance_bootstrap
)
from jaipw_modules.selection_models import SelectionConfig, fit_selection_model

estimation_method_types = [
    {
        "name": "naive",
        "estimator": "naive",
        "selection": None,
        "description": "unweighted logistic regression on the selected rows"
    },
    {
        "name": "naive_intercepts",
        "estimator": "naive",
        "selection": None,
        "description": "unweighted logistic regression with cohort intercepts"
    },
    {
        "name": "known",
        "estimator": "IPW",
        "selection": "Known",
        "description": "inverse probability weighting with known selection probabilities"
    },
    {
        "name": "JPL",
        "estimator": "IPW",
        "selection": "JPL",
        "description": "inverse probability weighting, pseudolikelihood selection models"
    },
    {
        "name": "JSR",
        "estimator": "IPW",
        "selection": "JSR",
        "description": "inverse probability weighting, simplex regression selection models"
    },
    {
        "name": "JPS",
        "estimator": "IPW",
        "selection": "JPS",
        "strata": "default",
        "description": "inverse probability weighting, post-stratified selection probabilities"
    },
    {
        "name": "JPS_exact",
        "estimator": "IPW",
        "selection": "JPS",
        "strata": "exact",
        "description": "post-stratification with the exact joint cell probabilities"
    },
    {
        "name": "JPS_marginal",
        "estimator": "IPW",
        "selection": "JPS",
        "strata": "marginal",
        "description": "post-stratification with root conditional cell probabilities"
    },
    {
        "name": "JCL",
        "estimator": "IPW",
        "selection": "JCL",
        "description": "inverse probability weighting, calibrated selection models"
    },
    {
        "name": "JAIPW",
        "estimator": "JAIPW",
        "selection": "configured",
        "description": "doubly robust estimator with flexible or parametric auxiliary score"
    }
]

# every joint method except the oracle has a per cohort meta counterpart
meta_method_types = [
    {"name": "meta_naive", "base": "naive"},
    {"name": "meta_pl", "base": "JPL"},
    {"name": "meta_sr", "base": "JSR"},
    {"name": "meta_ps", "base": "JPS"},
    {"name": "meta_cl", "base": "JCL"},
    {"name": "meta_aipw", "base": "JAIPW"}
]


class EstimationMethods:
    """
    A class used to represent all estimation methods.

    This will represent the lists 'estimation_method_types' and
    'meta_method_types' as a class and each method as an attribute.
    """

    class _SingleMethod:
        """
        Holds a single estimation method, dict keys become attributes
        """
        def __init__(self, dictionary: dict) -> None:
            self.meta = False
            self.base = None
            self.strata = None
            for key in dictionary:
                setattr(self, key, dictionary[key])

        def __repr__(self) -> str:
            return str(self.__dict__)

    def __init__(self) -> None:
        for method in estimation_method_types:
            setattr(self, method.get("name"), self._SingleMethod(method))
        for method in meta_method_types:
            base = getattr(self, method.get("base"))
            setattr(self, method.get("name"), self._SingleMethod({
                "name": method.get("name"),
                "estimator": "meta",
                "selection": base.selection,
                "strata": base.strata,
                "meta": True,
                "base": base.name,
                "description": "fixed effects combination of per cohort %s estimates" % base.name
            }))

    def name(self, name: str) -> _SingleMethod:
        """
        Return a _SingleMethod based on the given 'name'

        Parameters
        ----------
        name: str
            name of the method (i.e.: JPL)

        Returns
        -------
        _SingleMethod: the method, None if unknown
        """
        return getattr(self, name, None)

    def __repr__(self) -> str:
        return str(self.__dict__)

    def __iter__(self) -> _SingleMethod:
        for method in self.__dict__:
            yield getattr(self, method)


estimation_methods = EstimationMethods()


class EstimationOptions:
    """
    Everything a method needs beyond the validated data

    Attributes
    ----------
    selection : SelectionConfig
        selection model settings
    jaipw : JaipwConfig
        doubly robust estimator settings
    jaipw_selection : str
        selection method the doubly robust estimator is weighted with
    jaipw_variance : str
        "approx" or "bootstrap"
    strata : StrataSpec
        post-stratification cells used by JPS and JPS_exact
    marginal_strata : StrataSpec
        post-stratification cells used by JPS_marginal
    totals : PopulationTotals
        calibration totals
    known_columns : dict
        cohort -> column holding the known selection probability, internal
        and external rows alike
    threads : int
        worker threads of the bootstrap
    """

    def __init__(self, selection=None, jaipw=None, jaipw_selection="JPL", jaipw_variance="approx", strata=None,
                 marginal_strata=None, totals=None, known_columns=None, threads=1):

        if jaipw_variance not in ["approx", "bootstrap"]:
            raise InvalidArgument("unknown doubly robust variance '%s'" % jaipw_variance)

        self.selection = SelectionConfig() if selection is None else selection
        self.jaipw = JaipwConfig() if jaipw is None else jaipw
        self.jaipw_selection = jaipw_selection
        self.jaipw_variance = jaipw_variance
        self.strata = strata
        self.marginal_strata = marginal_strata
        self.totals = totals
        self.known_columns = dict() if known_columns is None else dict(known_columns)
        self.threads = threads

    def __repr__(self):
        return str(self.__dict__)


def _known_probabilities(ctx, options):

    missing = [cohort for cohort in ctx.cohorts if cohort not in options.known_columns]
    if len(missing) > 0:
        raise InvalidConfig("no known selection probability column for cohort%s %s" %
                            (plural(len(missing)), ", ".join(missing)))

    columns = [options.known_columns[cohort] for cohort in ctx.cohorts]
    for column in columns:
        if column not in ctx.sample.frame.columns:
            raise InvalidConfig("known selection probability column '%s' not found" % column)

    return ctx.sample.frame[columns].to_numpy(dtype=float)


def _strata_for(method, options):
    if method.strata == "marginal" and options.marginal_strata is not None:
        return options.marginal_strata
    return options.strata


def fit_selection(ctx, method, options):
    """
    Fit the selection models a method is weighted with

    Parameters
    ----------
    ctx : ValidatedContext
        validated data
    method : str or _SingleMethod
        method name or table entry
    options : EstimationOptions
        method settings

    Returns
    -------
    SelectionModelFit: the fit
    """

    if isinstance(method, str):
        method = resolve_method(method)

    selection = options.jaipw_selection if method.selection == "configured" else method.selection
    known = _known_probabilities(ctx, options) if selection == "Known" else None

    return fit_selection_model(ctx, selection, options.selection, strata=_strata_for(method, options),
                               totals=options.totals, known=known)


def resolve_method(name):
    method = estimation_methods.name(name)
    if method is None:
        raise InvalidArgument("unknown estimation method '%s'" % name)
    return method


def jaipw_point_estimate(ctx, options, method="JAIPW"):
    """
    selection fit, auxiliary model and doubly robust solve in one call

    The outer loop runs strict: a replicate whose fixed point does not
    converge raises NoOuterConvergence and is counted as a failure.
    """

    cfg = copy.copy(options.jaipw)
    cfg.strict = True

    fit = fit_selection(ctx, method, options)
    return solve_dr(ctx, fit, make_aux_builder(ctx, cfg), cfg=cfg).estimate


def run_method(ctx, name, options=None):
    """
    Run an estimation method end to end

    Parameters
    ----------
    ctx : ValidatedContext
        validated data
    name : str
        method name of the table above
    options : EstimationOptions
        method settings

    Returns
    -------
    EstimateReport: estimate with variance attached
    """

    options = EstimationOptions() if options is None else options
    method = resolve_method(name)

    logging.debug("Running estimation method %s" % method.name)

    if method.meta is True:
        from jaipw_modules.meta_analysis import fit_per_cohort, combine_fixed_effects
        report = combine_fixed_effects(fit_per_cohort(ctx, method.base, ctx.spec, options))
        report.method = method.name
        return report

    if method.estimator == "naive":
        return fit_naive(ctx, cfg=options.selection.newton,
                         cohort_intercepts=method.name == "naive_intercepts")

    fit = fit_selection(ctx, method, options)

    if method.estimator == "IPW":
        report = fit_ipw(ctx, fit, cfg=options.selection.newton)
        variance, flavor = variance_for_fit(ctx, fit, report.estimate)
        report = report.with_variance(variance, flavor)
    else:
        builder = make_aux_builder(ctx, options.jaipw)
        report = solve_dr(ctx, fit, builder, cfg=options.jaipw)

        if options.jaipw_variance == "bootstrap":
            result = variance_bootstrap(ctx, lambda c: jaipw_point_estimate(c, options, method),
                                        options.jaipw.bootstrap, options.jaipw.seed, options.threads)
            report = report.with_variance(result.variance, "bootstrap")
            report.diagnostics["bootstrap_failures"] = result.failures
        elif report.diagnostics.get("converged") is False:
            logging.warning("%s outer loop did not converge, no approximate variance attached" % method.name)
            report.diagnostics["variance_skipped"] = True
        else:
            report = report.with_variance(variance_jaipw_approx(ctx, fit, builder, report.estimate), "approx")

    report.method = method.name
    report.diagnostics["selection_method"] = fit.method
    report.diagnostics["weights"] = {"min": float(np.min(fit.weights)), "max": float(np.max(fit.weights))}

    return report

# EOF
