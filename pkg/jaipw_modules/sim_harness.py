####
#
# Monte Carlo studies: simulated populations, replicate runs and performance metrics
#

import copy
import logging
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import pandas as pd
from scipy.special import expit

from jaipw_modules import normal_quantile_95, plural
from jaipw_modules.data_model import (
    CombinedSample,
    ExternalSample,
    DiseaseModelSpec,
    VariableRoles,
    build_design,
    validate_roles
)
from jaipw_modules.errors import JaipwError, InvalidArgument, StudyAborted
from jaipw_modules.estimation_methods import EstimationOptions, resolve_method, run_method
from jaipw_modules.jaipw import JaipwConfig
from jaipw_modules.selection_models import StrataSpec, PopulationTotals

cohort_names = ["S1", "S2", "S3"]
covariate_names = ["Z1", "Z2", "Z3"]
weight_names = ["W1", "W2", "W3"]

misspecification_levels = {
    "none": list(),
    "one": ["S3"],
    "two": ["S2", "S3"],
    "all": ["S1", "S2", "S3"]
}

default_methods = ["naive", "naive_intercepts", "known", "JPL", "JSR", "JPS_exact", "JPS_marginal", "JCL",
                   "JAIPW", "meta_naive", "meta_pl", "meta_sr", "meta_ps", "meta_cl"]

# main effect selection models of all setups
main_effects = {
    "S1": {"(Intercept)": -1.0, "Z2": 1.5, "Z3": 0.2, "W1": 0.8, "D": -0.3},
    "S2": {"(Intercept)": -1.0, "Z3": 1.25, "W2": 0.4, "D": 0.6},
    "S3": {"(Intercept)": -3.0, "Z2": 0.8, "W3": 0.5}
}

# interaction terms added in setup 2
interaction_terms = {
    "S1": ["D:Z2", "D:Z3", "D:W1"],
    "S2": ["D:Z3", "D:W2"],
    "S3": ["Z2:W3"]
}

# main effects dropped by a misspecified setup 1 model
setup_1_dropped = {"S1": ["D"], "S2": ["D"], "S3": ["Z2"]}

# strata variables of the post-stratified selection models
strata_variables = {
    "S1": ["D", "Z2", "Z3", "W1"],
    "S2": ["D", "Z3", "W2"],
    "S3": ["Z2", "W3"]
}
strata_root = "Z2"
strata_quantiles = [0.15, 0.85]

# seed stream of the reference population, far from any replicate index
reference_stream = 2 ** 31 - 1


class SimScenario:
    """
    A class used to represent one simulation scenario

    Attributes
    ----------
    setup : int
        1 main effect selection models, 2 selection models with interactions
    population_size : int
        size N of every simulated population
    theta : numpy.ndarray
        true disease model coefficients (intercept, Z1, Z2, Z3)
    z_correlation : float
        correlation of every pair of disease covariates
    gamma : dict
        cohort -> coefficients of (D, Z1, Z2, Z3) in the mean of W_k
    interaction : float
        coefficient of every interaction term in setup 2
    nu : numpy.ndarray
        external selection coefficients of (1, D, Z1, Z2, Z3)
    external_scale : float
        multiplier of the external selection probability
    misspec_selection : str
        none, one, two or all misspecified cohort selection models
    aux : str
        "correct" includes the outcome among the auxiliary features, "incorrect" does not
    seed : int
        seed of all random streams
    replications : int
        number of replicates R
    reference_size : int
        size of the reference population giving JPS cutpoints and cell probabilities
    jaipw_selection : str
        selection method the doubly robust estimator is weighted with
    """

    def __init__(self, setup=1, population_size=50000, theta=(-2.0, 0.35, 0.45, 0.25), z_correlation=0.5,
                 gamma=None, interaction=0.3, nu=(-0.6, 1.2, 0.4, -0.2, 0.5), external_scale=0.75,
                 misspec_selection="none", aux="correct", seed=0, replications=200, reference_size=10 ** 6,
                 jaipw_selection="JPL", jaipw=None):

        if int(setup) not in [1, 2]:
            raise InvalidArgument("simulation setup must be 1 or 2, got %s" % setup)
        if misspec_selection not in misspecification_levels:
            raise InvalidArgument("misspecification must be one of %s" % ", ".join(misspecification_levels))
        if aux not in ["correct", "incorrect"]:
            raise InvalidArgument("auxiliary specification must be 'correct' or 'incorrect'")
        if int(population_size) < 100:
            raise InvalidArgument("population size must be at least 100")

        self.setup = int(setup)
        self.population_size = int(population_size)
        self.theta = np.array(theta, dtype=float)
        self.z_correlation = float(z_correlation)
        self.gamma = gamma or {"S1": (1.0, 1.0, 0.8, 0.6), "S2": (1.0, 0.6, 0.8, 1.0), "S3": (1.0, 1.0, 1.0, 1.0)}
        self.interaction = float(interaction)
        self.nu = np.array(nu, dtype=float)
        self.external_scale = float(external_scale)
        self.misspec_selection = misspec_selection
        self.aux = aux
        self.seed = int(seed)
        self.replications = int(replications)
        self.reference_size = int(reference_size)
        self.jaipw_selection = jaipw_selection
        self.jaipw = jaipw

        if len(self.theta) != 4 or len(self.nu) != 5:
            raise InvalidArgument("disease model needs 4 and external selection model 5 coefficients")
        if any(len(self.gamma.get(c, ())) != 4 for c in cohort_names):
            raise InvalidArgument("every cohort needs 4 W model coefficients")

    @property
    def misspecified_cohorts(self):
        return misspecification_levels[self.misspec_selection]

    def selection_coefficients(self, cohort):
        """true selection model of a cohort, term -> coefficient"""
        coefficients = dict(main_effects[cohort])
        if self.setup == 2:
            for term in interaction_terms[cohort]:
                coefficients[term] = self.interaction
        return coefficients

    def __repr__(self):
        return str(self.__dict__)


def build_misspecified_design(cohort, setup, misspecified=False):
    """
    Selection design terms (intercept excluded) fitted for a cohort

    Setup 1 misspecification drops D from cohorts S1 and S2 and Z2 from
    S3, setup 2 misspecification drops every interaction.

    Parameters
    ----------
    cohort : str
        S1, S2 or S3
    setup : int
        1 or 2
    misspecified : bool
        fit the misspecified model

    Returns
    -------
    list: design terms
    """

    terms = [t for t in main_effects[cohort] if t != "(Intercept)"]
    if int(setup) == 2:
        terms = terms + interaction_terms[cohort]

    if misspecified is True:
        if int(setup) == 1:
            terms = [t for t in terms if t not in setup_1_dropped[cohort]]
        else:
            terms = [t for t in terms if ":" not in t]

    return terms


def _population_frame(scenario, rng, size):

    correlation = np.full((3, 3), scenario.z_correlation)
    np.fill_diagonal(correlation, 1.0)
    covariates = rng.standard_normal((size, 3)) @ np.linalg.cholesky(correlation).T

    frame = pd.DataFrame(covariates, columns=covariate_names)
    frame.insert(0, "id", np.arange(size))

    disease = expit(scenario.theta[0] + covariates @ scenario.theta[1:])
    frame["D"] = (rng.random(size) < disease).astype(int)

    # Cor(eps1, Z_j) = 0.5 with unit variance
    loading = 0.5 / (1 + 2 * scenario.z_correlation)
    residual_scale = np.sqrt(1 - loading ** 2 * (3 + 6 * scenario.z_correlation))

    indicators = np.column_stack([frame["D"].to_numpy(dtype=float), covariates])
    for cohort, weight in zip(cohort_names, weight_names):
        correlated = loading * covariates.sum(axis=1) + residual_scale * rng.standard_normal(size)
        frame[weight] = correlated + indicators @ np.asarray(scenario.gamma[cohort]) + \
            rng.standard_normal(size) + rng.standard_normal(size)

    for cohort in cohort_names:
        coefficients = scenario.selection_coefficients(cohort)
        terms = [t for t in coefficients if t != "(Intercept)"]
        design = build_design(frame, terms, intercept=True)
        probability = expit(design @ np.array([coefficients["(Intercept)"]] + [coefficients[t] for t in terms]))
        frame["true_pi_%s" % cohort] = probability
        frame[cohort] = (rng.random(size) < probability).astype(int)

    external_design = np.column_stack([np.ones(size), frame[["D"] + covariate_names].to_numpy(dtype=float)])
    frame["pi_ext"] = scenario.external_scale * expit(external_design @ scenario.nu)
    frame["S_ext"] = (rng.random(size) < frame["pi_ext"].to_numpy()).astype(int)

    return frame


def generate_population(scenario, replicate_index):
    """
    Simulate one population and split it into internal and external samples

    The stream of replicate r is PCG64 seeded with (seed, r), fixed
    arguments give bit identical data.

    Returns
    -------
    tuple: (CombinedSample in full population mode, ExternalSample)
    """

    rng = np.random.default_rng(np.random.SeedSequence([scenario.seed, int(replicate_index)]))
    frame = _population_frame(scenario, rng, scenario.population_size)

    internal = CombinedSample(frame, cohort_names, "D", "id", full_population=True)
    external = ExternalSample(frame.loc[frame["S_ext"] == 1].reset_index(drop=True), "pi_ext", "id")

    return internal, external


def population_totals(frame, scenario):
    """calibration totals of the main effect selection terms"""

    totals = dict()
    for cohort in cohort_names:
        totals[cohort] = {t: float(frame[t].sum()) for t in build_misspecified_design(cohort, 1)}

    return PopulationTotals(totals, scenario.population_size)


class ReferenceTables:
    """
    JPS cutpoints and population cell probabilities of a scenario

    Attributes
    ----------
    cutpoints : dict
        variable -> 15th and 85th percentile
    exact : StrataSpec
        joint cell probabilities
    marginal : StrataSpec
        root marginal and root conditionals
    """

    def __init__(self, cutpoints, exact, marginal):
        self.cutpoints = cutpoints
        self.exact = exact
        self.marginal = marginal

    def __repr__(self):
        return "ReferenceTables(cutpoints=%s)" % self.cutpoints


def build_reference_tables(scenario):
    """
    Draw the reference population once and derive both JPS cell tables

    Returns
    -------
    ReferenceTables: cutpoints and strata definitions
    """

    logging.info("Drawing reference population of %d rows for post-stratification" % scenario.reference_size)

    rng = np.random.default_rng(np.random.SeedSequence([scenario.seed, reference_stream]))
    frame = _population_frame(scenario, rng, scenario.reference_size)

    continuous = ["Z2", "Z3"] + weight_names
    cutpoints = {v: list(np.quantile(frame[v].to_numpy(), strata_quantiles)) for v in continuous}

    discretizer = StrataSpec(cutpoints, strata_variables, mode="marginal", root=strata_root)
    levels = pd.DataFrame({v: discretizer.discretize(frame, v) for v in ["D"] + continuous})

    joint = dict()
    for cohort, variables in strata_variables.items():
        shares = levels.groupby(variables).size() / len(levels)
        joint[cohort] = {tuple(int(x) for x in np.atleast_1d(cell)): float(p) for cell, p in shares.items()}
        # float sums of many shares are not exactly one
        total = sum(joint[cohort].values())
        joint[cohort] = {cell: p / total for cell, p in joint[cohort].items()}

    root_shares = levels[strata_root].value_counts(normalize=True)
    root_marginal = {int(level): float(p) for level, p in root_shares.items()}

    conditionals = dict()
    for variable in ["D"] + [v for v in continuous if v != strata_root]:
        table = pd.crosstab(levels[strata_root], levels[variable], normalize="index")
        conditionals[variable] = {int(r): {int(c): float(table.loc[r, c]) for c in table.columns}
                                  for r in table.index}

    exact = StrataSpec(cutpoints, strata_variables, mode="exact", joint=joint)
    marginal = StrataSpec(cutpoints, strata_variables, mode="marginal", root=strata_root,
                          root_marginal=root_marginal, conditionals=conditionals)

    return ReferenceTables(cutpoints, exact, marginal)


def scenario_roles(scenario, main_effects_only=False):
    """variable roles with the fitted (possibly misspecified) selection designs"""

    selection = dict()
    for cohort in cohort_names:
        if main_effects_only is True:
            selection[cohort] = build_misspecified_design(cohort, 1)
        else:
            selection[cohort] = build_misspecified_design(cohort, scenario.setup,
                                                          cohort in scenario.misspecified_cohorts)

    return VariableRoles(selection, covariate_names, ["Z1"], "D")


def scenario_options(scenario, reference=None, totals=None, threads=1):
    """estimation options of a simulation replicate, a non converged outer loop fails the replicate"""

    include_outcome = scenario.aux == "correct"
    if scenario.jaipw is None:
        jaipw = JaipwConfig(include_outcome=include_outcome, seed=scenario.seed, strict=True)
    else:
        jaipw = copy.copy(scenario.jaipw)
        jaipw.include_outcome = include_outcome
        jaipw.strict = True

    return EstimationOptions(jaipw=jaipw, jaipw_selection=scenario.jaipw_selection,
                             strata=None if reference is None else reference.exact,
                             marginal_strata=None if reference is None else reference.marginal,
                             totals=totals, known_columns={c: "true_pi_%s" % c for c in cohort_names},
                             threads=threads)


# calibration is always fitted with main effects only
main_effect_methods = ["JCL", "meta_cl"]


def run_replicate(scenario, replicate_index, methods, reference=None):
    """
    Generate one population and run every method on it

    Returns
    -------
    list: one dict per method and term (replicate, method, term, estimate, se, error)
    """

    internal, external = generate_population(scenario, replicate_index)
    totals = population_totals(internal.frame, scenario)
    options = scenario_options(scenario, reference, totals)
    spec = DiseaseModelSpec(covariate_names)
    terms = spec.terms

    contexts = dict()
    rows = list()

    for name in methods:
        key = "main" if name in main_effect_methods else "fitted"
        try:
            if key not in contexts:
                contexts[key] = validate_roles(internal, external, scenario_roles(scenario, key == "main"), spec,
                                               require_auxiliary=True, include_outcome=True,
                                               population_size=scenario.population_size)
            report = run_method(contexts[key], name, options)
            estimate, se, error = report.estimate, report.se, ""
        except JaipwError as e:
            logging.debug("Replicate %d, method %s failed: %s" % (replicate_index, name, e.message))
            estimate, se, error = np.full(len(terms), np.nan), np.full(len(terms), np.nan), e.name

        for index, term in enumerate(terms):
            rows.append({
                "replicate": int(replicate_index),
                "method": name,
                "term": term,
                "estimate": float(estimate[index]),
                "se": float(se[index]),
                "error": error
            })

    return rows


def _run_replicate_job(job):
    return run_replicate(*job)


def compute_metrics(estimates, ses, truth, naive):
    """
    Performance metrics of one method over R replicates

    Parameters
    ----------
    estimates : numpy.ndarray
        R x p estimates of the method
    ses : numpy.ndarray
        R x p estimated standard errors
    truth : numpy.ndarray
        p true coefficients
    naive : numpy.ndarray
        R x p estimates of the unweighted fit, the RMSE ratio denominator

    Returns
    -------
    pandas.DataFrame: one row per coefficient
    """

    estimates = np.atleast_2d(np.asarray(estimates, dtype=float))
    ses = np.atleast_2d(np.asarray(ses, dtype=float))
    naive = np.atleast_2d(np.asarray(naive, dtype=float))
    truth = np.asarray(truth, dtype=float)

    if not (estimates.shape == ses.shape == naive.shape) or estimates.shape[1] != len(truth):
        raise InvalidArgument("metric inputs do not align: estimates %s, se %s, naive %s, truth %d" %
                              (estimates.shape, ses.shape, naive.shape, len(truth)))

    error = estimates - truth
    bias = error.mean(axis=0)

    with np.errstate(divide="ignore", invalid="ignore"):
        relative_bias = np.where(truth != 0, np.abs(bias) / np.abs(truth) * 100, np.nan)
        naive_error = ((naive - truth) ** 2).sum(axis=0)
        rmse_ratio = np.where(naive_error > 0, (error ** 2).sum(axis=0) / naive_error, np.nan)

    mc_sd = estimates.std(axis=0, ddof=1) if len(estimates) > 1 else np.full(len(truth), np.nan)
    mean_se = ses.mean(axis=0)
    # exact equality, the spread of identical floats is zero
    zero_sd = mc_sd == 0

    with np.errstate(divide="ignore", invalid="ignore"):
        se_bias = np.where(zero_sd, np.nan, np.abs(mean_se - mc_sd) / mc_sd * 100)

    covered = np.abs(error) <= normal_quantile_95 * ses
    coverage = np.where(zero_sd, 1.0, covered.mean(axis=0))

    return pd.DataFrame({
        "bias_x100": bias * 100,
        "relative_bias_pct": relative_bias,
        "rmse_ratio": rmse_ratio,
        "mean_se": mean_se,
        "mc_sd": mc_sd,
        "se_bias_pct": se_bias,
        "coverage": coverage,
        "zero_sd": zero_sd
    })


class SimStudyResult:
    """
    A class used to represent the outcome of a simulation study

    Attributes
    ----------
    scenario : SimScenario
        the simulated scenario
    metrics : pandas.DataFrame
        one row per method and term
    replicates : pandas.DataFrame
        every replicate estimate
    failures : dict
        method -> number of failed replicates
    """

    def __init__(self, scenario, metrics, replicates, failures):
        self.scenario = scenario
        self.metrics = metrics
        self.replicates = replicates
        self.failures = failures

    @property
    def methods(self):
        return list(dict.fromkeys(self.metrics["method"]))

    def metric(self, method, term, column):
        row = self.metrics.loc[(self.metrics["method"] == method) & (self.metrics["term"] == term)]
        if len(row) == 0 or column not in row.columns:
            return np.nan
        return float(row[column].iloc[0])

    def __repr__(self):
        return "SimStudyResult(methods=%s, replications=%d)" % (self.methods, self.scenario.replications)


def summarize_replicates(scenario, replicates, methods):
    """aggregate replicate rows into metrics, naive first"""

    terms = DiseaseModelSpec(covariate_names).terms
    failures = dict()
    frames = list()

    def matrix(method, column):
        subset = replicates.loc[replicates["method"] == method]
        return subset.pivot(index="replicate", columns="term", values=column)[terms]

    naive = matrix("naive", "estimate")

    for method in methods:
        estimates = matrix(method, "estimate")
        ses = matrix(method, "se")
        failed = estimates.isna().any(axis=1)
        failures[method] = int(failed.sum())

        usable = ~failed & ~naive.isna().any(axis=1)
        metrics = compute_metrics(estimates.loc[usable].to_numpy(), ses.loc[usable].to_numpy(), scenario.theta,
                                  naive.loc[usable].to_numpy())
        metrics.insert(0, "term", terms)
        metrics.insert(0, "method", method)
        metrics["replications"] = int(usable.sum())
        metrics["failures"] = failures[method]
        frames.append(metrics)

    return pd.concat(frames, ignore_index=True), failures


def run_study(scenario, methods=None, threads=1):
    """
    Run a Monte Carlo study of a scenario

    Replicates run in a process pool, results are ordered by replicate
    index before aggregation so the outcome does not depend on threads.

    Parameters
    ----------
    scenario : SimScenario
        scenario to simulate
    methods : list
        method names, the unweighted fit is always added
    threads : int
        worker processes

    Returns
    -------
    SimStudyResult: metrics of every method
    """

    if scenario.replications < 2:
        raise InvalidArgument("a simulation study needs at least 2 replications")

    methods = list(default_methods if methods is None else methods)
    if "naive" not in methods:
        methods.insert(0, "naive")
    for name in methods:
        resolve_method(name)

    reference = None
    if any(resolve_method(m).selection == "JPS" for m in methods):
        reference = build_reference_tables(scenario)

    logging.info("Running %d replicate%s of setup %d (selection misspecified: %s, aux: %s)" %
                 (scenario.replications, plural(scenario.replications), scenario.setup,
                  scenario.misspec_selection, scenario.aux))

    jobs = [(scenario, index, methods, reference) for index in range(scenario.replications)]
    if threads is not None and threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as executor:
            results = list(executor.map(_run_replicate_job, jobs))
    else:
        results = [_run_replicate_job(job) for job in jobs]

    replicates = pd.DataFrame([row for rows in results for row in rows])
    replicates = replicates.sort_values(["replicate"], kind="stable").reset_index(drop=True)

    metrics, failures = summarize_replicates(scenario, replicates, methods)

    aborted = [m for m, count in failures.items() if count > 0.1 * scenario.replications]
    if len(aborted) > 0:
        raise StudyAborted("method%s %s failed in more than 10%% of the replicates" %
                           (plural(len(aborted)), ", ".join(aborted)))

    for method, count in failures.items():
        if count > 0:
            logging.warning("Method %s failed in %d replicate%s" % (method, count, plural(count)))

    return SimStudyResult(scenario, metrics, replicates, failures)

# EOF
