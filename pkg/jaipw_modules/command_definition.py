####
#
# define and describe implemented sub commands
#

# need import here as they will be called on whatever is defined in command_definition command_handlers
# noinspection PyUnresolvedReferences
from jaipw_modules.cli_commands import (
    run_fit,
    run_meta,
    run_simulate,
    run_weights
)
import logging
from typing import Callable

implemented_commands = [
    {
        "name": "fit",
        "short_description": "fit the disease model on internal + external data",
        "long_description": "Reads the internal sample of all cohorts and the external probability sample,\n"
                            "fits the configured selection models, estimates the disease model with inverse\n"
                            "probability weighting or the doubly robust estimator and writes\n"
                            "estimates.csv, weights.csv and diagnostics.json into the output directory.",
        "command_handler": "run_fit"
    },
    {
        "name": "meta",
        "short_description": "per cohort fits combined by fixed effects meta-analysis",
        "long_description": "Runs the configured estimator in every cohort on its own and combines the\n"
                            "cohort estimates with inverse variance weights. meta.csv holds the per cohort\n"
                            "rows and the combined row, estimates.csv the combined estimate only.",
        "command_handler": "run_meta"
    },
    {
        "name": "weights",
        "short_description": "fit selection models and export the weights only",
        "long_description": "Fits the configured selection models only and writes id, pi_1..pi_K and the\n"
                            "joint selection probability of every selected row into weights.csv.",
        "command_handler": "run_weights"
    },
    {
        "name": "simulate",
        "short_description": "run a Monte Carlo simulation study",
        "long_description": "Simulates populations of setup 1 (main effect selection models) or setup 2\n"
                            "(selection models with interactions), runs every configured method and writes\n"
                            "replicates.csv, metrics.csv and summary.txt. With --check-tables the summary\n"
                            "compares the study with the reference acceptance bands.",
        "command_handler": "run_simulate"
    }
]


class SubCommands:
    """
    Registry of the sub commands in 'implemented_commands'

    Each command dict becomes an attribute named after the command,
    iterating yields the command objects in definition order.
    """

    class _SingleCommand:
        """one sub command, the dict keys become attributes"""

        def __init__(self, definition: dict) -> None:
            self.__dict__.update(definition)

        def __repr__(self) -> str:
            return "SubCommand(%s)" % self.name

        def get_command_handler(self) -> Callable:
            """
            Resolve the handler named in 'command_handler'

            Returns
            -------
            Callable: handler(config) -> CommandResponse, None if it can't be resolved
            """

            handler_name = getattr(self, "command_handler", None)
            if handler_name is None:
                logging.error("sub command '%s' defines no command_handler" % self.name)
                return None

            handler = globals().get(handler_name)
            if handler is None:
                logging.error("handler '%s' of sub command '%s' is not imported in command_definition" %
                              (handler_name, self.name))

            return handler

    def __init__(self, definitions: list = None) -> None:
        for definition in implemented_commands if definitions is None else definitions:
            setattr(self, definition["name"], self._SingleCommand(definition))

    def get_command_called(self, name: str) -> _SingleCommand:
        """
        Look up a sub command by the name given on the command line

        Returns
        -------
        _SingleCommand: the command, None for unknown names
        """

        return next((command for command in self if command.name == name), None)

    def __repr__(self) -> str:
        return "SubCommands(%s)" % ", ".join(command.name for command in self)

    def __iter__(self):
        yield from self.__dict__.values()

# EOF
