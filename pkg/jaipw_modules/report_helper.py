####
#
# Some report helper functions to format and write results properly
#

import json
import logging
import os
import tempfile

import numpy as np
import pandas as pd

from jaipw_modules import exit_numerical_failure, exit_unexpected_error, plural, yes_no
from jaipw_modules.classes import CommandResponse
from jaipw_modules.errors import JaipwError
from jaipw_modules.reference_bands import slopes

estimates_file_name = "estimates.csv"
weights_file_name = "weights.csv"
diagnostics_file_name = "diagnostics.json"
meta_file_name = "meta.csv"
replicates_file_name = "replicates.csv"
metrics_file_name = "metrics.csv"
summary_file_name = "summary.txt"
error_file_name = "error.csv"


def _atomic_write(path, write):
    """write to a temp file in the target directory and rename it into place"""

    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)

    handle, temp_path = tempfile.mkstemp(prefix=".%s." % os.path.basename(path), dir=directory)
    try:
        with os.fdopen(handle, "w", newline="") as temp_fh:
            write(temp_fh)
        os.replace(temp_path, path)
    except BaseException:
        if os.path.exists(temp_path):
            os.remove(temp_path)
        raise

    logging.debug("Wrote file: %s" % path)

    return path


def write_csv(path, frame):
    """
    Write a DataFrame as CSV, the file appears complete or not at all

    Parameters
    ----------
    path : str
        target file
    frame : pandas.DataFrame
        data to write, index is dropped

    Returns
    -------
    str: path written
    """
    return _atomic_write(path, lambda fh: frame.to_csv(fh, index=False, lineterminator="\n"))


def write_text(path, text):
    return _atomic_write(path, lambda fh: fh.write(text))


def _json_default(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.integer, np.floating, np.bool_)):
        return value.item()
    return str(value)


def write_json(path, data):
    return _atomic_write(path, lambda fh: json.dump(data, fh, indent=2, sort_keys=True, default=_json_default))


def remove_outputs(paths):
    """remove files written before a failure"""

    for path in paths:
        if path is not None and os.path.exists(path):
            logging.debug("Removing partial output: %s" % path)
            os.remove(path)


def write_error_record(out_dir, error, exit_code, message):
    """machine readable record of a failed command"""

    frame = pd.DataFrame({"error": [error], "exit_code": [int(exit_code)], "message": [message]})
    return write_csv(os.path.join(out_dir, error_file_name), frame)


def command_error_response(error, written=None):
    """
    Log a failed command, remove what it wrote and return the error response

    Parameters
    ----------
    error : Exception
        the error the command stopped with, exceptions outside the
        JaipwError hierarchy are reported under their class name
    written : list
        files the command wrote before it failed

    Returns
    -------
    CommandResponse: response with error and exit code set
    """

    if isinstance(error, JaipwError):
        name, message, exit_code = error.name, error.message, error.exit_code
    else:
        name, message = type(error).__name__, str(error) or repr(error)
        if isinstance(error, (np.linalg.LinAlgError, FloatingPointError, OverflowError)):
            exit_code = exit_numerical_failure
        else:
            exit_code = exit_unexpected_error
        logging.debug("Unexpected error", exc_info=error)

    logging.error("%s: %s" % (name, message))
    remove_outputs(written or list())

    return CommandResponse(data={"error": name}, error=message, exit_code=exit_code)


def meta_frame(meta, combined):
    """per cohort rows followed by the combined row, tagged by 'cohort'"""

    frames = list()
    for cohort, report in zip(meta.cohorts, meta.reports):
        frame = report.to_frame()
        frame.insert(0, "cohort", cohort)
        frames.append(frame)

    frame = combined.to_frame()
    frame.insert(0, "cohort", "combined")
    frames.append(frame)

    return pd.concat(frames, ignore_index=True)


def format_estimate_table(report):
    """
    Plain text table of an EstimateReport

    Parameters
    ----------
    report : EstimateReport
        estimates to format

    Returns
    -------
    str: formatted table
    """

    lines = ["Method: %s (variance: %s)" % (report.method, report.variance_flavor or "none"),
             "%-14s %10s %10s %10s %10s" % ("term", "estimate", "se", "ci_low", "ci_high")]

    for term, estimate, se, low, high in zip(report.terms, report.estimate, report.se, report.ci_low,
                                             report.ci_high):
        lines.append("%-14s %10.4f %10.4f %10.4f %10.4f" % (term, estimate, se, low, high))

    return "\n".join(lines)


def _cell(value, pattern):
    if value is None or not np.isfinite(value):
        return "-"
    return pattern % value


def format_study_summary(result, band_rows=None):
    """
    Summary of a simulation study in the layout of the reference result tables

    Every method gets one line: estimated bias x 100 (relative bias %) of
    each slope followed by the RMSE ratios, then the coverage block.

    Parameters
    ----------
    result : SimStudyResult
        study outcome
    band_rows : list
        output of check_reference_bands, appended when given

    Returns
    -------
    str: summary text
    """

    scenario = result.scenario
    lines = [
        "Simulation setup %d, N = %d, R = %d, seed %d" % (scenario.setup, scenario.population_size,
                                                          scenario.replications, scenario.seed),
        "Selection models misspecified: %s, auxiliary score model: %s" % (scenario.misspec_selection,
                                                                           scenario.aux),
        "",
        "%-18s %-18s %-18s %-18s %6s %6s %6s" % ("method", "bias Z1", "bias Z2", "bias Z3",
                                                 "RMSE1", "RMSE2", "RMSE3")
    ]

    for method in result.methods:
        biases = list()
        ratios = list()
        for term in slopes:
            bias = result.metric(method, term, "bias_x100")
            relative = result.metric(method, term, "relative_bias_pct")
            biases.append("%s (%s)" % (_cell(bias, "%.2f"), _cell(relative, "%.2f%%")))
            ratios.append(_cell(result.metric(method, term, "rmse_ratio"), "%.2f"))
        lines.append("%-18s %-18s %-18s %-18s %6s %6s %6s" % tuple([method] + biases + ratios))

    lines.extend(["", "%-18s %8s %8s %8s %10s %10s %10s" % ("method", "cov Z1", "cov Z2", "cov Z3",
                                                            "SE bias1", "SE bias2", "SE bias3")])
    for method in result.methods:
        coverage = [_cell(result.metric(method, t, "coverage"), "%.2f") for t in slopes]
        se_bias = [_cell(result.metric(method, t, "se_bias_pct"), "%.2f%%") for t in slopes]
        lines.append("%-18s %8s %8s %8s %10s %10s %10s" % tuple([method] + coverage + se_bias))

    failed = {m: c for m, c in result.failures.items() if c > 0}
    if len(failed) > 0:
        lines.extend(["", "Failed replicates: %s" % ", ".join("%s %d" % (m, c) for m, c in failed.items())])

    if band_rows is not None:
        met = sum(1 for row in band_rows if row["met"])
        lines.extend(["", "Acceptance bands: %d of %d met" % (met, len(band_rows))])
        for row in band_rows:
            limits = "[%s, %s]" % (_cell(row["lower"], "%.2f"), _cell(row["upper"], "%.2f"))
            lines.append("  %-48s %-4s %-10s reference %-8s band %-16s observed %-8s met: %s" %
                         (row["band"], row["term"], row["metric"][:10], _cell(row["reference"], "%.2f"), limits,
                          _cell(row["observed"], "%.2f"), yes_no(row["met"])))
        if len(band_rows) == 0:
            lines.append("  no band applies to this scenario")

    lines.append("")

    logging.debug("Formatted summary of %d method%s" % (len(result.methods), plural(len(result.methods))))

    return "\n".join(lines)

# EOF
