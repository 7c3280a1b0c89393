####
#
# turn the parsed config and the input CSV files into estimation objects
#

import logging

import pandas as pd

from jaipw_modules.data_model import CombinedSample, ExternalSample, VariableRoles, DiseaseModelSpec, validate_roles
from jaipw_modules.errors import JaipwError, DataError, InvalidConfig
from jaipw_modules.estimation_methods import EstimationOptions
from jaipw_modules.jaipw import JaipwConfig
from jaipw_modules.selection_models import SelectionConfig, StrataSpec, PopulationTotals
from jaipw_modules.sim_harness import SimScenario
from jaipw_modules.solvers import FlexHyper


def read_csv_file(path, dataset):
    """read a CSV file, parser errors keep their line context"""

    logging.debug("Reading %s data from file: %s" % (dataset, path))

    try:
        return pd.read_csv(path)
    except FileNotFoundError:
        raise DataError("%s file '%s' not found" % (dataset, path))
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DataError("%s file '%s': %s" % (dataset, path, e))


def roles_from_config(config):

    selection = {cohort: config.get("roles.selection.%s" % cohort, list()) for cohort in config["roles.cohorts"]}

    return VariableRoles(selection, config["roles.covariates"], config["roles.auxiliary"], config["roles.outcome"])


def seed_from_config(config):
    """the seed all stochastic paths need"""

    if config.get("main.seed") is None:
        raise InvalidConfig("a seed is mandatory for this command, set 'main.seed' or use --seed")
    return int(config["main.seed"])


def _parse_cell(text):
    try:
        return tuple(int(float(x)) for x in str(text).split("|"))
    except ValueError:
        raise InvalidConfig("cell '%s' must be levels separated by '|'" % text)


def strata_from_config(config):
    """
    Build the post-stratification spec from the config and its cells file

    Exact mode cells files have the columns cohort, cell, probability
    with cells written as 'level|level|...' in the order of the cohort
    variables. Marginal mode files have variable, root_level, level,
    probability; the rows of the root variable give its marginal.

    Returns
    -------
    StrataSpec: the strata, None without cells file
    """

    cells_file = config.get("post_stratification.cells_file")
    if cells_file is None or cells_file == "":
        return None

    mode = config["post_stratification.mode"]
    variables = config["post_stratification.variables"]
    cells = read_csv_file(cells_file, "post-stratification cells")

    if mode == "exact":
        for column in ["cohort", "cell", "probability"]:
            if column not in cells.columns:
                raise DataError("cells file '%s': column '%s' not found" % (cells_file, column))
        joint = dict()
        for row in cells.itertuples(index=False):
            joint.setdefault(str(row.cohort), dict())[_parse_cell(row.cell)] = float(row.probability)
        return StrataSpec(config["post_stratification.cutpoints"], variables, "exact", joint=joint,
                          smoothing=config["post_stratification.smoothing"])

    root = config.get("post_stratification.root")
    for column in ["variable", "root_level", "level", "probability"]:
        if column not in cells.columns:
            raise DataError("cells file '%s': column '%s' not found" % (cells_file, column))

    root_marginal = dict()
    conditionals = dict()
    for row in cells.itertuples(index=False):
        if str(row.variable) == root:
            root_marginal[int(row.level)] = float(row.probability)
        else:
            conditionals.setdefault(str(row.variable), dict()).setdefault(int(row.root_level), dict())[
                int(row.level)] = float(row.probability)

    return StrataSpec(config["post_stratification.cutpoints"], variables, "marginal", root=root,
                      root_marginal=root_marginal, conditionals=conditionals,
                      smoothing=config["post_stratification.smoothing"])


def totals_from_config(config):

    if len(config.get("population_totals", dict())) == 0:
        return None

    return PopulationTotals(config["population_totals"], config.get("main.population_size"))


def jaipw_config_from_config(config, seed=0):

    hyper = FlexHyper(kind=config["jaipw.regressor"], n_estimators=config["jaipw.n_estimators"],
                      max_depth=config["jaipw.max_depth"], learning_rate=config["jaipw.learning_rate"],
                      subsample=config["jaipw.subsample"], seed=seed)

    return JaipwConfig(eps_params=config["jaipw.eps_params"], eps_residual=config["jaipw.eps_residual"],
                       max_outer=config["jaipw.max_outer"], aux_mode=config["jaipw.aux_mode"],
                       aux_target=config["jaipw.aux_target"], include_outcome=config["jaipw.include_outcome"],
                       mc_draws=config["jaipw.mc_draws"], bootstrap=config["jaipw.bootstrap"], seed=seed,
                       strict=config["jaipw.strict"], hyper=hyper)


def fit_method_name(config):
    """estimation method selected by 'estimation.estimator' and 'selection.method'"""

    estimator = config["estimation.estimator"]
    if estimator in ["naive", "naive_intercepts", "JAIPW"]:
        return estimator
    if estimator != "IPW":
        raise InvalidConfig("unknown estimator '%s'" % estimator)
    if config["selection.method"] == "Known":
        return "known"
    return config["selection.method"]


def method_is_stochastic(config):
    return fit_method_name(config) == "JAIPW"


def options_from_config(config):
    """
    Estimation options of the fit, meta and weights commands

    Returns
    -------
    EstimationOptions: method settings
    """

    seed = config.get("main.seed")
    seed = 0 if seed is None else int(seed)

    known_columns = dict(zip(config["roles.cohorts"], config["selection.known_columns"]))
    strata = strata_from_config(config) if config["selection.method"] == "JPS" else None

    return EstimationOptions(
        selection=SelectionConfig(probability_floor=config["selection.probability_floor"],
                                  weight_sum_tolerance=config["selection.weight_sum_tolerance"]),
        jaipw=jaipw_config_from_config(config, seed),
        jaipw_selection=config["selection.method"],
        jaipw_variance=config["jaipw.variance"],
        strata=strata,
        marginal_strata=strata,
        totals=totals_from_config(config),
        known_columns=known_columns,
        threads=config["main.threads"]
    )


def load_context(config, require_auxiliary=False):
    """
    Read both samples and validate them against the declared roles

    Returns
    -------
    ValidatedContext: validated data
    """

    roles = roles_from_config(config)
    internal_file = config["data.internal_file"]

    try:
        internal = CombinedSample(read_csv_file(internal_file, "internal"), roles.cohorts, roles.outcome,
                                  config["data.id_column"])
        external = ExternalSample(read_csv_file(config["data.external_file"], "external"),
                                  config["data.probability_column"], config["data.id_column"])
        return validate_roles(internal, external, roles, DiseaseModelSpec(roles.covariates),
                              require_auxiliary=require_auxiliary,
                              include_outcome=config["jaipw.include_outcome"],
                              population_size=config.get("main.population_size"))
    except JaipwError as e:
        if e.message is not None and internal_file not in e.message:
            e.message = "%s (internal file '%s', external file '%s')" % (e.message, internal_file,
                                                                       config["data.external_file"])
            e.args = (e.message,)
        raise


def scenario_from_config(config):
    """
    Simulation scenario of the simulate command

    Returns
    -------
    SimScenario: the scenario
    """

    seed = seed_from_config(config)

    if config["simulation.replications"] < 2:
        raise InvalidConfig("a simulation study needs at least 2 replications, got %d" %
                            config["simulation.replications"])

    jaipw = jaipw_config_from_config(config, seed)

    return SimScenario(setup=config["simulation.setup"], population_size=config["simulation.population_size"],
                       interaction=config["simulation.interaction"],
                       misspec_selection=config["simulation.misspec_selection"], aux=config["simulation.aux"],
                       seed=seed, replications=config["simulation.replications"],
                       reference_size=config["simulation.reference_size"],
                       jaipw_selection=config["simulation.jaipw_selection"], jaipw=jaipw)

# EOF
