####
#
# exceptions raised by the estimation modules
#

from jaipw_modules import exit_config_error, exit_numerical_failure, exit_data_error


class JaipwError(Exception):
    """
    Base class of all errors raised by this package.

    Each error family carries the process exit code the command line
    front end will terminate with.
    """

    exit_code = 1

    def __init__(self, message=None, best=None, residual=None):
        super().__init__(message)
        self.message = message
        self.best = best
        self.residual = residual

    @property
    def name(self):
        return self.__class__.__name__


class ConfigError(JaipwError):
    exit_code = exit_config_error


class NumericalError(JaipwError):
    exit_code = exit_numerical_failure


class DataError(JaipwError):
    exit_code = exit_data_error


# config
class InvalidConfig(ConfigError):
    pass


class InvalidArgument(ConfigError, ValueError):
    pass


# data
class MissingColumn(DataError):
    pass


class MissingValues(DataError):
    pass


class InvalidOutcome(DataError):
    pass


class AuxiliaryInSelection(DataError):
    pass


class EmptyAuxiliary(DataError):
    pass


class RankDeficient(DataError):
    pass


class ResponseOutOfRange(DataError):
    pass


class MissingCategory(DataError):
    pass


class TooFewRows(DataError):
    pass


class OverlapCategoryEmpty(DataError):
    pass


class OverlapPresent(DataError):
    pass


class EmptyCellError(DataError):
    pass


class EmptyCohort(DataError):
    pass


# numerical
class SingularJacobian(NumericalError):
    pass


class NoConvergence(NumericalError):
    pass


class SingularBread(NumericalError):
    pass


class SingularH(NumericalError):
    pass


class InfeasibleCalibration(NumericalError):
    pass


class NoOuterConvergence(NumericalError):
    pass


class TooManyFailedReplicates(NumericalError):
    pass


class ZeroVariance(NumericalError):
    pass


class StudyAborted(NumericalError):
    pass

# EOF
