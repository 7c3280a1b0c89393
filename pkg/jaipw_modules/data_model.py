####
#
# datasets, model specifications and variable roles shared by all estimators
#

import logging

import numpy as np
import pandas as pd

from jaipw_modules import plural
from jaipw_modules.errors import (
    DataError,
    InvalidArgument,
    InvalidConfig,
    MissingColumn,
    MissingValues,
    InvalidOutcome,
    AuxiliaryInSelection,
    EmptyAuxiliary,
    RankDeficient,
    EmptyCohort
)

intercept_name = "(Intercept)"
term_separator = ":"


def term_components(term):
    """
    Return the variable names a design term is built from.

    "D:Z2" -> ["D", "Z2"], "W1" -> ["W1"]
    """
    return [part.strip() for part in term.split(term_separator)]


def build_design(frame, terms, intercept=True):
    """
    Build a design matrix from named columns of a DataFrame

    Parameters
    ----------
    frame : pandas.DataFrame
        data to take the columns from
    terms : list
        design terms, products of variables are written as "A:B"
    intercept : bool
        prepend a column of ones

    Returns
    -------
    numpy.ndarray: design matrix with len(terms) (+1) columns
    """

    columns = list()
    if intercept is True:
        columns.append(np.ones(len(frame)))

    for term in terms:
        column = np.ones(len(frame))
        for variable in term_components(term):
            if variable not in frame.columns:
                raise MissingColumn("column '%s' (needed for term '%s') not found" % (variable, term))
            column = column * frame[variable].to_numpy(dtype=float)
        columns.append(column)

    if len(columns) == 0:
        return np.zeros((len(frame), 0))

    return np.column_stack(columns)


def composite_indicator(indicators):
    """
    Composite selection indicator S = max(S_1, ..., S_K), row wise.

    Parameters
    ----------
    indicators : array like
        binary matrix with one column per cohort

    Returns
    -------
    numpy.ndarray: binary vector
    """

    indicators = np.asarray(indicators)
    if indicators.ndim == 1:
        indicators = indicators.reshape(-1, 1)

    if indicators.ndim != 2 or indicators.shape[1] < 1:
        raise InvalidArgument("selection indicator matrix needs at least one column")

    if indicators.shape[0] == 0:
        return np.zeros(0, dtype=int)

    return np.max(indicators, axis=1).astype(int)


def _read_only(array):
    array = np.array(array, copy=True)
    array.setflags(write=False)
    return array


class DiseaseModelSpec:
    """
    Logistic disease model logit P(D=1|Z) = theta'(1, Z)
    """

    link = "logit"

    def __init__(self, covariates, intercept=True):
        self.covariates = list(covariates)
        self.intercept = bool(intercept)

    @property
    def terms(self):
        if self.intercept is True:
            return [intercept_name] + self.covariates
        return list(self.covariates)

    @property
    def dimension(self):
        return len(self.terms)

    def __repr__(self):
        return str(self.__dict__)


class VariableRoles:
    """
    Assignment of variables to their roles

    Attributes
    ----------
    selection_variables : dict
        cohort indicator name -> list of selection design terms X_k
        (the intercept is always added and never listed)
    covariates : list
        disease model covariates Z
    auxiliary : list
        disease model covariates which enter no selection model (Z_1 cap)
    outcome : str
        name of the binary outcome D
    """

    def __init__(self, selection_variables, covariates, auxiliary=None, outcome="D"):
        self.selection_variables = {str(k): list(v) for k, v in selection_variables.items()}
        self.covariates = list(covariates)
        self.auxiliary = list(auxiliary or list())
        self.outcome = outcome

    @property
    def cohorts(self):
        return list(self.selection_variables.keys())

    @property
    def complement(self):
        """disease model covariates not in the auxiliary set (Z_-1 cap)"""
        return [x for x in self.covariates if x not in self.auxiliary]

    def selection_components(self, cohort=None):
        """all variables any selection term of one (or every) cohort is built from"""

        cohorts = self.cohorts if cohort is None else [cohort]
        variables = list()
        for this_cohort in cohorts:
            for term in self.selection_variables[this_cohort]:
                for variable in term_components(term):
                    if variable not in variables:
                        variables.append(variable)
        return variables

    def weight_variables(self, cohort=None):
        """selection variables which are neither outcome nor disease covariates (W)"""
        return [x for x in self.selection_components(cohort)
                if x != self.outcome and x not in self.covariates]

    def feature_names(self, include_outcome=True, cohort=None):
        """feature list X = (D, Z_-1 cap, W) of the auxiliary score model"""

        features = list()
        if include_outcome is True:
            features.append(self.outcome)
        features.extend(self.complement)
        for variable in self.weight_variables(cohort):
            if variable not in features:
                features.append(variable)
        return features

    def restrict(self, cohort):
        """roles of a single cohort analysis"""
        return VariableRoles({cohort: self.selection_variables[cohort]}, self.covariates,
                             self.auxiliary, self.outcome)

    def __repr__(self):
        return str(self.__dict__)


class CombinedSample:
    """
    The pooled internal sample of all cohorts

    Parameters
    ----------
    frame : pandas.DataFrame
        one row per individual, outcome, covariates and cohort indicators
    cohort_columns : list
        names of the K cohort indicator columns
    outcome : str
        name of the binary outcome column
    id_column : str
        name of the id column, optional in the frame
    full_population : bool
        permit rows nobody selected (simulation only)
    """

    def __init__(self, frame, cohort_columns, outcome="D", id_column="id", full_population=False):

        self.cohort_columns = list(cohort_columns)
        self.outcome_name = outcome
        self.id_column = id_column
        self.full_population = bool(full_population)

        if len(self.cohort_columns) == 0:
            raise InvalidArgument("at least one cohort indicator column is needed")

        for column in [outcome] + self.cohort_columns:
            if column not in frame.columns:
                raise MissingColumn("internal sample: column '%s' not found" % column)

        for column in [outcome] + self.cohort_columns:
            if frame[column].isna().any():
                raise MissingValues("internal sample: column '%s' has missing values" % column)
            values = frame[column].to_numpy()
            if not np.all(np.isin(values, [0, 1])):
                if column == outcome:
                    raise InvalidOutcome("internal sample: outcome '%s' must be coded 0/1" % column)
                raise DataError("internal sample: cohort indicator '%s' must be coded 0/1" % column)

        self.frame = frame.reset_index(drop=True)
        self._indicators = _read_only(self.frame[self.cohort_columns].to_numpy(dtype=int))
        self._composite = _read_only(composite_indicator(self._indicators))

        if self.full_population is False and np.any(self._composite == 0):
            raise DataError("internal sample: %d row(s) are not selected into any cohort" %
                            int(np.sum(self._composite == 0)))

    @property
    def n_rows(self):
        return len(self.frame)

    @property
    def outcome(self):
        return self.frame[self.outcome_name].to_numpy(dtype=float)

    @property
    def indicators(self):
        return self._indicators

    @property
    def composite(self):
        return self._composite

    @property
    def ids(self):
        if self.id_column in self.frame.columns:
            return self.frame[self.id_column].to_numpy()
        return None

    def subset(self, mask, full_population=None):
        if full_population is None:
            full_population = self.full_population
        return CombinedSample(self.frame.loc[np.asarray(mask, dtype=bool)], self.cohort_columns,
                              self.outcome_name, self.id_column, full_population)

    def selected(self):
        """rows with composite S = 1"""
        return self.subset(self._composite == 1, full_population=False)

    def __repr__(self):
        return "CombinedSample(n_rows=%d, cohorts=%s)" % (self.n_rows, self.cohort_columns)


class ExternalSample:
    """
    The external probability sample with known design probabilities

    Parameters
    ----------
    frame : pandas.DataFrame
        one row per sampled individual
    probability_column : str
        name of the design probability column
    id_column : str
        name of the id column linking rows to the internal sample (optional)
    """

    def __init__(self, frame, probability_column="pi_ext", id_column="id"):

        self.probability_column = probability_column
        self.id_column = id_column

        if probability_column not in frame.columns:
            raise MissingColumn("external sample: column '%s' not found" % probability_column)

        if frame[probability_column].isna().any():
            raise MissingValues("external sample: column '%s' has missing values" % probability_column)

        probability = frame[probability_column].to_numpy(dtype=float)
        if np.any(~np.isfinite(probability)) or np.any(probability <= 0) or np.any(probability > 1):
            raise DataError("external sample: design probabilities must be in (0, 1]")

        self.frame = frame.reset_index(drop=True)
        self._probability = _read_only(probability)

    @property
    def n_rows(self):
        return len(self.frame)

    @property
    def probability(self):
        return self._probability

    @property
    def weights(self):
        return 1.0 / self._probability

    @property
    def ids(self):
        if self.id_column in self.frame.columns:
            return self.frame[self.id_column].to_numpy()
        return None

    def subset(self, index):
        return ExternalSample(self.frame.iloc[np.asarray(index)], self.probability_column, self.id_column)

    def __repr__(self):
        return "ExternalSample(n_rows=%d)" % self.n_rows


class ValidatedContext:
    """
    A validated binding of internal sample, external sample and roles.

    Only rows with composite S = 1 of the internal sample are kept.
    """

    def __init__(self, sample, external, roles, spec, population_size, estimated_population_size=False):
        self.sample = sample
        self.external = external
        self.roles = roles
        self.spec = spec
        self.population_size = float(population_size)
        self.estimated_population_size = estimated_population_size

    @property
    def cohorts(self):
        return self.roles.cohorts

    @property
    def n_cohorts(self):
        return len(self.roles.cohorts)

    @property
    def n_selected(self):
        return self.sample.n_rows

    @property
    def outcome(self):
        return self.sample.outcome

    @property
    def indicators(self):
        return self.sample.indicators

    def cohort_indicator(self, cohort):
        return self.sample.indicators[:, self.sample.cohort_columns.index(cohort)]

    def disease_design(self):
        return build_design(self.sample.frame, self.spec.covariates, self.spec.intercept)

    def selection_design(self, cohort, external=False):
        frame = self.external.frame if external is True else self.sample.frame
        return build_design(frame, self.roles.selection_variables[cohort], intercept=True)

    def selection_terms(self, cohort):
        return [intercept_name] + self.roles.selection_variables[cohort]

    def feature_frame(self, include_outcome=True, cohort=None, external=False):
        frame = self.external.frame if external is True else self.sample.frame
        return frame[self.roles.feature_names(include_outcome, cohort)]

    def covariate_frame(self, external=False):
        """complement covariates Z_-1 cap for internal or external rows"""
        frame = self.external.frame if external is True else self.sample.frame
        return frame[self.roles.complement]

    def linked_rows(self):
        """
        Return positions of internal and external rows describing the same individual.

        Returns
        -------
        tuple: (internal positions, external positions), both empty without ids
        """
        internal_ids = self.sample.ids
        external_ids = self.external.ids
        if internal_ids is None or external_ids is None:
            return np.zeros(0, dtype=int), np.zeros(0, dtype=int)

        external_position = pd.Series(np.arange(len(external_ids)), index=external_ids)
        external_position = external_position[~external_position.index.duplicated(keep="first")]
        matched = external_position.reindex(internal_ids)
        internal_rows = np.flatnonzero(matched.notna().to_numpy())
        external_rows = matched.to_numpy()[internal_rows].astype(int)

        return internal_rows, external_rows

    def for_cohort(self, cohort):
        """context of the single cohort analysis of 'cohort'"""

        members = self.cohort_indicator(cohort) == 1
        if not np.any(members):
            raise EmptyCohort("cohort '%s' has no selected rows" % cohort)

        frame = self.sample.frame.loc[members]
        sample = CombinedSample(frame, [cohort], self.sample.outcome_name, self.sample.id_column)

        return ValidatedContext(sample, self.external, self.roles.restrict(cohort), self.spec,
                                self.population_size, self.estimated_population_size)

    def resample(self, rng):
        """bootstrap copy, internal and external rows drawn independently with replacement"""

        internal_index = rng.integers(0, self.sample.n_rows, self.sample.n_rows)
        external_index = rng.integers(0, self.external.n_rows, self.external.n_rows)

        sample = CombinedSample(self.sample.frame.iloc[internal_index], self.sample.cohort_columns,
                                self.sample.outcome_name, self.sample.id_column)

        return ValidatedContext(sample, self.external.subset(external_index), self.roles, self.spec,
                                self.population_size, self.estimated_population_size)

    def __repr__(self):
        return "ValidatedContext(n_selected=%d, n_external=%d, cohorts=%s, N=%s)" % \
               (self.n_selected, self.external.n_rows, self.cohorts, self.population_size)


def _check_columns(frame, columns, dataset):

    for column in columns:
        if column not in frame.columns:
            raise MissingColumn("%s sample: column '%s' not found" % (dataset, column))

    missing = [column for column in columns if frame[column].isna().any()]
    if len(missing) > 0:
        raise MissingValues("%s sample: missing values in column%s %s" %
                            (dataset, plural(len(missing)), ", ".join(missing)))


def validate_roles(sample, external, roles, spec=None, require_auxiliary=False, include_outcome=True,
                   population_size=None):
    """
    Validate variable roles against both datasets and bind them into a context

    Parameters
    ----------
    sample : CombinedSample
        internal sample, rows nobody selected are dropped
    external : ExternalSample
        external probability sample
    roles : VariableRoles
        role declaration
    spec : DiseaseModelSpec
        disease model, defaults to intercept + roles.covariates
    require_auxiliary : bool
        the doubly robust estimator will be used
    include_outcome : bool
        auxiliary features contain the outcome
    population_size : float
        target population size N, estimated from the design weights if None

    Returns
    -------
    ValidatedContext: the bound context
    """

    if spec is None:
        spec = DiseaseModelSpec(roles.covariates)

    if sorted(roles.cohorts) != sorted(sample.cohort_columns):
        raise InvalidConfig("cohorts with selection variables (%s) do not match the indicator columns (%s)" %
                            (", ".join(roles.cohorts), ", ".join(sample.cohort_columns)))

    # indicator columns follow the cohort order of the roles
    if roles.cohorts != sample.cohort_columns:
        sample = CombinedSample(sample.frame, roles.cohorts, sample.outcome_name, sample.id_column,
                                sample.full_population)

    for variable in roles.auxiliary:
        if variable not in roles.covariates:
            raise InvalidConfig("auxiliary variable '%s' is not a disease model covariate" % variable)

    if set(spec.covariates) != set(roles.covariates):
        raise InvalidConfig("disease model covariates do not match the declared covariate roles")

    for cohort in roles.cohorts:
        overlap = [x for x in roles.auxiliary if x in roles.selection_components(cohort)]
        if len(overlap) > 0:
            raise AuxiliaryInSelection("auxiliary variable%s %s found in selection model of cohort '%s'" %
                                       (plural(len(overlap)), ", ".join(overlap), cohort))

    if require_auxiliary is True and len(roles.auxiliary) == 0:
        raise EmptyAuxiliary("the doubly robust estimator needs at least one auxiliary variable")

    if sample.full_population is True:
        logging.debug("Dropping %d unselected rows from the internal sample" %
                      int(np.sum(sample.composite == 0)))
        sample = sample.selected()

    internal_columns = [roles.outcome] + roles.covariates
    for variable in roles.selection_components():
        if variable not in internal_columns:
            internal_columns.append(variable)
    _check_columns(sample.frame, internal_columns, "internal")

    external_columns = list(roles.selection_components())
    if require_auxiliary is True:
        for variable in roles.feature_names(include_outcome):
            if variable not in external_columns:
                external_columns.append(variable)
    _check_columns(external.frame, external_columns, "external")

    design = build_design(sample.frame, spec.covariates, spec.intercept)
    if np.linalg.matrix_rank(design) < design.shape[1]:
        raise RankDeficient("disease model design matrix is not of full column rank on the selected rows")

    estimated = False
    if population_size is None:
        population_size = float(np.sum(external.weights))
        estimated = True
        logging.warning("Target population size not configured, using the design weight sum %.1f" %
                        population_size)
    elif population_size <= 0:
        raise InvalidArgument("target population size must be positive")

    context = ValidatedContext(sample, external, roles, spec, population_size, estimated)
    logging.debug("Validated %s" % context)

    return context

# EOF
