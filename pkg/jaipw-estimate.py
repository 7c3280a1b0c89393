#!/usr/bin/env python3

self_description = """Selection bias corrected disease model estimation for multi cohort data.

Fits the selection mechanism of every cohort (pseudolikelihood, simplex
regression, post-stratification or calibration), combines the cohort
probabilities into joint weights and estimates a logistic disease model by
inverse probability weighting or with the doubly robust estimator. Also runs
per cohort meta-analysis and Monte Carlo simulation studies.
"""

# import  modules

import logging
import os
import sys

from jaipw_modules import exit_ok, exit_config_error
from jaipw_modules.common import (
    parse_command_line,
    parse_own_config,
    setup_logging,
    do_error_exit
)
from jaipw_modules.command_definition import SubCommands
from jaipw_modules.report_helper import write_error_record


__version__ = "1.0.1"
__version_date__ = "2026-10-18"
__description__ = "Multi cohort selection bias correction"
__license__ = "MIT"


#################
#
#   default vars
#

default_log_level = "INFO"
default_config_file_path = "./jaipw-estimate.ini"


def main(argv=None):
    """parse command line and config, dispatch the sub command and return the exit code"""

    commands = SubCommands()

    ################
    #   parse command line
    args = parse_command_line(self_description=self_description,
                              version=__version__,
                              version_date=__version_date__,
                              default_config_file_path=default_config_file_path,
                              commands=commands,
                              argv=argv)

    ################
    #   setup logging
    setup_logging(args, default_log_level)

    logging.info("Starting " + __description__)

    ################
    #   parse config file(s)
    config = parse_own_config(args, default_log_level)

    if not config:
        do_error_exit("Config parsing error", exit_config_error)

    ################
    #   add program details to config dict
    config["program.version"] = __version__
    config["program.version_date"] = __version_date__
    config["program.description"] = __description__

    command = commands.get_command_called(args.command)
    if command is None:
        do_error_exit("Unknown command: %s" % args.command, exit_config_error)

    command_handler = command.get_command_handler()
    if command_handler is None:
        do_error_exit("No handler for command: %s" % args.command, exit_config_error)

    response = command_handler(config=config)

    if response.error:
        # noinspection PyBroadException
        try:
            write_error_record(config["main.out_dir"], response.data.get("error"), response.exit_code,
                               response.error)
        except Exception as e:
            logging.error("Unable to write error record to '%s': %s" % (config["main.out_dir"], e))
        return response.exit_code

    if response.text:
        print(response.text)

    for file_name in response.files:
        logging.info("Wrote %s" % os.path.relpath(file_name))

    return exit_ok


if __name__ == "__main__":
    sys.exit(main())

# EOF
