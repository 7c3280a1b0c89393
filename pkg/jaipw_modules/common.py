####
#
# Some commonly used functions
#

import configparser
import inspect
import logging
import os
from argparse import ArgumentParser, RawDescriptionHelpFormatter

from jaipw_modules import config_schema_version, exit_config_error


# define valid log levels
valid_log_levels = ["DEBUG", "INFO", "WARNING", "ERROR"]

# define valid sub commands
valid_sub_commands = ["fit", "simulate", "meta", "weights"]


def parse_command_line(version=None,
                       self_description=None,
                       version_date=None,
                       default_config_file_path=None,
                       commands=None,
                       argv=None
                       ):
    """parse command line arguments

    Also add current version and version date to description. One sub
    parser is added per entry of 'commands' (a SubCommands registry).
    """

    if commands is None:
        # imported here, the command handlers depend on this module
        from jaipw_modules.command_definition import SubCommands
        commands = SubCommands()

    # define command line options
    description = "%s\nVersion: %s (%s)" % (self_description, version, version_date)

    # options every sub command understands
    shared = ArgumentParser(add_help=False)
    shared.add_argument("-c", "--config", default=default_config_file_path, dest="config_file",
                        help="points to the config file to read config data from " +
                             "which is not installed under the default path '" +
                             default_config_file_path + "'",
                        metavar="jaipw-estimate.ini")
    shared.add_argument("-l", "--log_level", choices=valid_log_levels, dest="log_level",
                        help="set log level (overrides config)")
    shared.add_argument("-q", "--quiet_timestamps", action='store_true', dest="quiet_timestamps",
                        help="omit time stamps in log output")
    shared.add_argument("--seed", type=int, dest="seed",
                        help="seed of all stochastic components (overrides config)")
    shared.add_argument("--threads", type=int, dest="threads",
                        help="number of parallel workers (overrides config)")
    shared.add_argument("--out", dest="out_dir", metavar="DIR",
                        help="output directory (overrides config)")

    parser = ArgumentParser(
        description=description,
        formatter_class=RawDescriptionHelpFormatter)

    sub_parsers = parser.add_subparsers(dest="command", metavar="command")
    sub_parsers.required = True

    command_parsers = dict()
    for command in commands:
        command_parsers[command.name] = sub_parsers.add_parser(command.name, parents=[shared],
                                                               help=command.short_description,
                                                               description=command.long_description,
                                                               formatter_class=RawDescriptionHelpFormatter)

    simulate = command_parsers["simulate"]
    simulate.add_argument("--setup", type=int, choices=[1, 2], dest="setup",
                          help="simulation setup, 1 = main effects, 2 = interactions")
    simulate.add_argument("--replications", type=int, dest="replications",
                          help="number of replications")
    simulate.add_argument("--misspec-selection", choices=["none", "one", "two", "all"], dest="misspec_selection",
                          help="which cohort selection models are misspecified")
    simulate.add_argument("--aux", choices=["correct", "incorrect"], dest="aux",
                          help="auxiliary score model with (correct) or without (incorrect) the outcome")
    simulate.add_argument("--check-tables", action='store_true', dest="check_tables",
                          help="compare the study against the reference acceptance bands")

    return parser.parse_args(argv)


def _split_list(value):
    if value is None:
        return list()
    return [x.strip() for x in value.split(",") if x.strip() != ""]


def parse_own_config(args, default_log_level):
    """parsing and basic validation of own config file

    Parameters
    ----------
    args : ArgumentParser object

    default_log_level: str
        default log level if log level is not set in config

    Returns
    -------
    dict
        a dictionary with all config options parsed from the config file
        or False if the config is not usable
    """

    config_dict = {}

    config_error = False

    config_file = args.config_file

    logging.debug("Parsing config file: %s" % config_file)

    if default_log_level is None or default_log_level == "":
        do_error_exit("Default log level not set.", exit_config_error)

    # setup config parser and read config
    config_handler = configparser.ConfigParser(strict=True, allow_no_value=True)
    # variable names are case sensitive
    config_handler.optionxform = str

    if config_file is None or config_file == "" or not os.path.exists(config_file):
        if args.command != "simulate":
            logging.error("Config file '%s' not found." % config_file)
            return False
        logging.info("Config file '%s' not found, using simulation defaults" % config_file)
    else:
        # noinspection PyBroadException
        try:
            with open(config_file) as config_fh:
                config_handler.read_file(config_fh)
        except configparser.Error as e:
            logging.error("Error during config file parsing: %s" % e)
            return False
        # noinspection PyBroadException
        except Exception:
            logging.error("Unable to open file '%s'" % config_file)
            return False

    def read(section, key, fallback=None, kind=str):
        """read one option, convert it and log it"""
        nonlocal config_error

        value = fallback
        try:
            if kind is int:
                value = config_handler.getint(section, key, fallback=fallback)
            elif kind is float:
                value = config_handler.getfloat(section, key, fallback=fallback)
            elif kind is bool:
                value = config_handler.getboolean(section, key, fallback=fallback)
            elif kind is list:
                value = _split_list(config_handler.get(section, key, fallback=None)) or (fallback or list())
            else:
                value = config_handler.get(section, key, fallback=fallback)
        except ValueError as e:
            logging.error("Config: option '%s.%s' has an invalid value: %s" % (section, key, e))
            config_error = True

        config_dict["%s.%s" % (section, key)] = value
        logging.debug("Config: %s = %s" % ("%s.%s" % (section, key), value))

        return value

    # read main section
    this_section = "main"
    if this_section not in config_handler.sections():
        logging.debug("Section '%s' not found in '%s'" % (this_section, config_file))

    config_dict["log_level"] = config_handler.get(this_section, "log_level", fallback=default_log_level)

    # overwrite log level with command line argument
    if args.log_level is not None and args.log_level != "":
        config_dict["log_level"] = args.log_level
        logging.info("Config: overwriting log_level with command line arg: %s" % args.log_level)

    # set log level again
    if args.log_level is not config_dict["log_level"]:
        set_log_level(config_dict["log_level"])

    logging.debug("Config: %s = %s" % ("log_level", config_dict["log_level"]))

    read(this_section, "schema_version", config_schema_version, int)
    read(this_section, "seed", None, int)
    read(this_section, "threads", 1, int)
    read(this_section, "out_dir", "./results")
    read(this_section, "population_size", None, float)

    if config_dict["main.schema_version"] != config_schema_version:
        logging.error("Config: schema_version %s is not supported (expected %d)" %
                      (config_dict["main.schema_version"], config_schema_version))
        config_error = True

    # read data section
    this_section = "data"
    read(this_section, "internal_file", "")
    read(this_section, "external_file", "")
    read(this_section, "id_column", "id")
    read(this_section, "probability_column", "pi_ext")

    # read roles section
    this_section = "roles"
    read(this_section, "outcome", "D")
    read(this_section, "covariates", list(), list)
    read(this_section, "auxiliary", list(), list)
    read(this_section, "cohorts", list(), list)
    for cohort in config_dict["roles.cohorts"]:
        read(this_section, "selection.%s" % cohort, list(), list)

    # read selection section
    this_section = "selection"
    read(this_section, "method", "JPL")
    read(this_section, "probability_floor", 1e-6, float)
    read(this_section, "weight_sum_tolerance", 0.1, float)
    read(this_section, "known_columns", list(), list)

    # read estimation section
    this_section = "estimation"
    read(this_section, "estimator", "IPW")

    # read jaipw section
    this_section = "jaipw"
    read(this_section, "aux_mode", "flexible")
    read(this_section, "aux_target", "score")
    read(this_section, "include_outcome", True, bool)
    read(this_section, "regressor", "boosting")
    read(this_section, "n_estimators", 200, int)
    read(this_section, "max_depth", 3, int)
    read(this_section, "learning_rate", 0.1, float)
    read(this_section, "subsample", 0.8, float)
    read(this_section, "eps_params", 1e-8, float)
    read(this_section, "eps_residual", 1e-8, float)
    read(this_section, "max_outer", 50, int)
    read(this_section, "mc_draws", 1000, int)
    read(this_section, "variance", "approx")
    read(this_section, "bootstrap", 200, int)
    read(this_section, "strict", False, bool)

    # read post stratification section
    this_section = "post_stratification"
    read(this_section, "mode", "exact")
    read(this_section, "smoothing", False, bool)
    read(this_section, "cells_file", "")
    read(this_section, "root", None)
    config_dict["post_stratification.cutpoints"] = dict()
    config_dict["post_stratification.variables"] = dict()
    if this_section in config_handler.sections():
        for key in config_handler.options(this_section):
            if key.startswith("cutpoints."):
                values = read(this_section, key, list(), list)
                try:
                    config_dict["post_stratification.cutpoints"][key[len("cutpoints."):]] = \
                        [float(x) for x in values]
                except ValueError:
                    logging.error("Config: cutpoints in '%s.%s' must be numbers" % (this_section, key))
                    config_error = True
            if key.startswith("variables."):
                config_dict["post_stratification.variables"][key[len("variables."):]] = \
                    read(this_section, key, list(), list)

    # read population totals section, '<cohort>.<term> = total'
    this_section = "population_totals"
    config_dict["population_totals"] = dict()
    if this_section in config_handler.sections():
        for key in config_handler.options(this_section):
            if "." not in key:
                logging.error("Config: population total '%s' must be named <cohort>.<term>" % key)
                config_error = True
                continue
            cohort, term = key.split(".", 1)
            total = read(this_section, key, None, float)
            config_dict["population_totals"].setdefault(cohort, dict())[term] = total

    # read simulation section
    this_section = "simulation"
    read(this_section, "setup", 1, int)
    read(this_section, "replications", 200, int)
    read(this_section, "population_size", 50000, int)
    read(this_section, "misspec_selection", "none")
    read(this_section, "aux", "correct")
    read(this_section, "interaction", 0.3, float)
    read(this_section, "methods", ["naive", "naive_intercepts", "known", "JPL", "JSR", "JPS_exact",
                                     "JPS_marginal", "JCL", "JAIPW", "meta_naive", "meta_pl", "meta_sr",
                                     "meta_ps", "meta_cl"], list)
    read(this_section, "reference_size", 1000000, int)
    read(this_section, "jaipw_selection", "JPL")

    # overwrite with command line arguments
    for option, key in [("seed", "main.seed"), ("threads", "main.threads"), ("out_dir", "main.out_dir"),
                        ("setup", "simulation.setup"), ("replications", "simulation.replications"),
                        ("misspec_selection", "simulation.misspec_selection"), ("aux", "simulation.aux")]:
        value = getattr(args, option, None)
        if value is not None:
            config_dict[key] = value
            logging.info("Config: overwriting %s with command line arg: %s" % (key, value))

    config_dict["check_tables"] = bool(getattr(args, "check_tables", False))

    if config_dict["main.threads"] is not None and config_dict["main.threads"] < 1:
        logging.error("Config: option 'main.threads' must be at least 1")
        config_error = True

    # files which have to be defined for data driven commands
    if args.command in ["fit", "meta", "weights"]:
        for key in ["data.internal_file", "data.external_file"]:
            if config_dict[key] is None or config_dict[key] == "":
                logging.error("Config: option '%s' undefined or empty!" % key)
                config_error = True
            elif not os.path.exists(config_dict[key]):
                logging.error("Config: file '%s' of option '%s' not found" % (config_dict[key], key))
                config_error = True
        for key in ["roles.covariates", "roles.cohorts"]:
            if len(config_dict[key]) == 0:
                logging.error("Config: option '%s' undefined or empty!" % key)
                config_error = True

    if config_error:
        return False

    return config_dict


def do_error_exit(log_text, exit_code=1):
    """log an error and exit with return code 'exit_code'

    Parameters
    ----------
    log_text : str
        the text to log as error
    exit_code : int
        the process exit code
    """

    logging.error(log_text)
    exit(exit_code)


def set_log_level(log_level=None):
    """set or reset the log level

    Parameters
    ----------
    log_level : str
        Log level to set

    """

    # check set log level against self defined log level array
    if not log_level.upper() in valid_log_levels:
        do_error_exit('Invalid log level: %s' % log_level, exit_config_error)

    # check the provided log level and bail out if something is wrong
    numeric_log_level = getattr(logging, log_level.upper(), None)
    if not isinstance(numeric_log_level, int):
        do_error_exit('Invalid log level: %s' % log_level, exit_config_error)

    logging.info("Setting log level to: %s" % log_level)

    # unfortunately we have to manipulate the root logger
    if log_level == "DEBUG":
        logging.disable(logging.NOTSET)
    elif log_level == "INFO":
        logging.disable(logging.DEBUG)
    elif log_level == "WARNING":
        logging.disable(logging.INFO)
    elif log_level == "ERROR":
        logging.disable(logging.WARNING)


def setup_logging(args=None, default_log_level=None):
    """Setup logging

    Parameters
    ----------
    args : ArgumentParser object

    default_log_level: str
        default log level if args.log_level is not set

    """

    log_level = args.log_level

    if args.quiet_timestamps:
        logging.basicConfig(level="DEBUG", format='%(levelname)s: %(message)s')
    else:
        logging.basicConfig(level="DEBUG", format='%(asctime)s - %(levelname)s: %(message)s')

    if log_level is None or log_level == "":
        logging.debug("Configuring logging: No log level defined, using default level: %s" % default_log_level)
        log_level = default_log_level

    set_log_level(log_level)


def my_own_function_name():
    """returns the name of the function who called this function"""
    return inspect.currentframe().f_back.f_code.co_name

# EOF
