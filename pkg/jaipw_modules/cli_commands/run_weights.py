import os

from jaipw_modules import plural
from jaipw_modules.classes import CommandResponse
from jaipw_modules.estimation_methods import fit_selection
from jaipw_modules.input_helper import load_context, options_from_config
from jaipw_modules.report_helper import (
    command_error_response,
    write_csv,
    write_json,
    weights_file_name,
    diagnostics_file_name
)


# noinspection PyUnusedLocal
def run_weights(config=None, *args, **kwargs):
    """fit the selection models only and export the per cohort and joint probabilities

    Parameters
    ----------
    config : dict
        dictionary with items parsed from config file
    args, kwargs: None
        used to hold additional args which are just ignored

    Returns
    -------
    CommandResponse: with the SelectionModelFit as data
    """

    out_dir = config["main.out_dir"]
    written = list()

    method = config["selection.method"]
    if method == "Known":
        method = "known"

    try:
        ctx = load_context(config)
        fit = fit_selection(ctx, method, options_from_config(config))

        written.append(write_csv(os.path.join(out_dir, weights_file_name), fit.weights_frame(ctx.sample.ids)))
        written.append(write_json(os.path.join(out_dir, diagnostics_file_name), {
            "method": fit.method,
            "cohorts": fit.cohorts,
            "alphas": fit.alphas,
            "diagnostics": fit.diagnostics
        }))

    except Exception as e:
        return command_error_response(e, written)

    return CommandResponse(data=fit, files=written,
                           text="%s selection model%s fitted for %d selected row%s" %
                                (fit.method, plural(len(fit.cohorts)), len(fit.pi_joint), plural(len(fit.pi_joint))))
