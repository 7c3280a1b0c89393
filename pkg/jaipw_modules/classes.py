####
#
# Define commonly used classes
#

import copy
import logging

import numpy as np
import pandas as pd

from jaipw_modules import normal_quantile_95, exit_ok
from jaipw_modules.common import my_own_function_name


class EstimateReport:
    """
    A class used to represent disease model estimates

    Attributes
    ----------
    terms : list
        names of the disease model terms, intercept first
    estimate : numpy.ndarray
        coefficients on the log odds scale
    method : str
        estimation method tag
    variance : numpy.ndarray
        variance matrix of the estimate, None for point estimates
    variance_flavor : str
        which variance estimator produced 'variance'
    diagnostics : dict
        convergence and model diagnostics
    effective_sample_size : int
        number of selected rows the estimate is based on

    Methods
    -------
    with_variance(variance, flavor)
        return a copy of this report with a variance attached
    to_frame()
        return term, estimate, se, ci_low and ci_high as a DataFrame
    """

    def __init__(self,
                 terms,
                 estimate,
                 method,
                 variance=None,
                 variance_flavor=None,
                 diagnostics=None,
                 effective_sample_size=None):

        self.terms = list(terms)
        self.estimate = np.asarray(estimate, dtype=float)
        self.method = method
        self.variance = None
        self.variance_flavor = variance_flavor
        self.diagnostics = dict() if diagnostics is None else dict(diagnostics)
        self.effective_sample_size = effective_sample_size

        if variance is not None:
            self.variance = self._check_variance(variance)

    def _check_variance(self, variance):

        variance = np.asarray(variance, dtype=float)
        if variance.shape != (len(self.estimate), len(self.estimate)):
            raise ValueError("variance matrix shape %s does not match %d coefficients" %
                             (variance.shape, len(self.estimate)))

        variance = (variance + variance.T) / 2

        smallest = float(np.min(np.linalg.eigvalsh(variance)))
        if smallest < -1e-10:
            logging.warning("%s: variance matrix of method %s has a negative eigenvalue (%.3e)" %
                            (my_own_function_name(), self.method, smallest))

        return variance

    def with_variance(self, variance, flavor):
        report = copy.deepcopy(self)
        report.variance = report._check_variance(variance)
        report.variance_flavor = flavor
        return report

    @property
    def se(self):
        if self.variance is None:
            return np.full(len(self.estimate), np.nan)
        return np.sqrt(np.clip(np.diag(self.variance), 0, None))

    @property
    def ci_low(self):
        return self.estimate - normal_quantile_95 * self.se

    @property
    def ci_high(self):
        return self.estimate + normal_quantile_95 * self.se

    def to_frame(self):
        return pd.DataFrame({
            "term": self.terms,
            "estimate": self.estimate,
            "se": self.se,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high
        })

    def __repr__(self):
        return str(self.__dict__)


class SelectionModelFit:
    """
    A class used to hold fitted per cohort selection probabilities

    Attributes
    ----------
    method : str
        JPL, JSR, JPS, JCL or Known
    cohorts : list
        cohort names in column order of the probability matrices
    alphas : dict
        cohort -> selection coefficients, None for methods without parameters
    pi_internal : numpy.ndarray
        per cohort probabilities of all selected rows (n x K)
    pi_external : numpy.ndarray
        per cohort probabilities of all external rows (n_ext x K), may be None
    pi_joint : numpy.ndarray
        joint selection probability of all selected rows
    diagnostics : dict
        convergence, constraint residuals and clipping counts
    """

    def __init__(self,
                 method,
                 cohorts,
                 pi_internal,
                 pi_joint,
                 alphas=None,
                 pi_external=None,
                 diagnostics=None):

        self.method = method
        self.cohorts = list(cohorts)
        self.alphas = alphas
        self.pi_internal = np.asarray(pi_internal, dtype=float)
        self.pi_external = None if pi_external is None else np.asarray(pi_external, dtype=float)
        self.pi_joint = np.asarray(pi_joint, dtype=float)
        self.diagnostics = dict() if diagnostics is None else dict(diagnostics)

        for array in [self.pi_internal, self.pi_joint] + \
                ([self.pi_external] if self.pi_external is not None else list()):
            array.setflags(write=False)

    @property
    def weights(self):
        return 1.0 / self.pi_joint

    def cohort_probability(self, cohort, external=False):
        source = self.pi_external if external is True else self.pi_internal
        if source is None:
            return None
        return source[:, self.cohorts.index(cohort)]

    def weights_frame(self, ids=None):
        """id, pi_1..pi_K and pi_joint of all selected rows"""

        if ids is None:
            ids = np.arange(1, len(self.pi_joint) + 1)

        frame = pd.DataFrame({"id": ids})
        for index in range(len(self.cohorts)):
            frame["pi_%d" % (index + 1)] = self.pi_internal[:, index]
        frame["pi_joint"] = self.pi_joint

        return frame

    def __repr__(self):
        return "SelectionModelFit(method=%s, cohorts=%s, n_rows=%d)" % \
               (self.method, self.cohorts, len(self.pi_joint))


class CommandResponse:
    """
    A class used to hold the outcome of a sub command
    """

    data = None
    error = None

    def __init__(self,
                 data=None,
                 text=None,
                 error=None,
                 exit_code=exit_ok,
                 files=None):

        self.data = data
        self.text = text
        self.error = error
        self.exit_code = exit_code
        self.files = list() if files is None else list(files)

    def __repr__(self):
        return str(self.__dict__)

# EOF
