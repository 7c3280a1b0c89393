import os

from jaipw_modules.classes import CommandResponse
from jaipw_modules.estimation_methods import fit_selection, resolve_method, run_method
from jaipw_modules.input_helper import (
    fit_method_name,
    method_is_stochastic,
    seed_from_config,
    load_context,
    options_from_config
)
from jaipw_modules.report_helper import (
    command_error_response,
    format_estimate_table,
    write_csv,
    write_json,
    estimates_file_name,
    weights_file_name,
    diagnostics_file_name
)


# noinspection PyUnusedLocal
def run_fit(config=None, *args, **kwargs):
    """fit the selection models and the disease model, write estimates, weights and diagnostics

    Parameters
    ----------
    config : dict
        dictionary with items parsed from config file
    args, kwargs: None
        used to hold additional args which are just ignored

    Returns
    -------
    CommandResponse: with the EstimateReport as data
    """

    out_dir = config["main.out_dir"]
    written = list()

    try:
        name = fit_method_name(config)
        if method_is_stochastic(config) is True:
            seed_from_config(config)

        ctx = load_context(config, require_auxiliary=name == "JAIPW")
        options = options_from_config(config)

        report = run_method(ctx, name, options)

        written.append(write_csv(os.path.join(out_dir, estimates_file_name), report.to_frame()))

        if resolve_method(name).selection is not None:
            fit = fit_selection(ctx, name, options)
            written.append(write_csv(os.path.join(out_dir, weights_file_name), fit.weights_frame(ctx.sample.ids)))

        written.append(write_json(os.path.join(out_dir, diagnostics_file_name), {
            "method": report.method,
            "variance_flavor": report.variance_flavor,
            "n_selected": ctx.n_selected,
            "n_external": ctx.external.n_rows,
            "population_size": ctx.population_size,
            "population_size_estimated": ctx.estimated_population_size,
            "diagnostics": report.diagnostics
        }))

    except Exception as e:
        return command_error_response(e, written)

    return CommandResponse(data=report, text=format_estimate_table(report), files=written)
