import os

from jaipw_modules.classes import CommandResponse
from jaipw_modules.input_helper import (
    fit_method_name,
    method_is_stochastic,
    seed_from_config,
    load_context,
    options_from_config
)
from jaipw_modules.meta_analysis import fit_per_cohort, combine_fixed_effects
from jaipw_modules.report_helper import (
    command_error_response,
    format_estimate_table,
    meta_frame,
    write_csv,
    write_json,
    estimates_file_name,
    meta_file_name,
    diagnostics_file_name
)


# noinspection PyUnusedLocal
def run_meta(config=None, *args, **kwargs):
    """estimate every cohort on its own and combine them by fixed effects meta-analysis

    Parameters
    ----------
    config : dict
        dictionary with items parsed from config file
    args, kwargs: None
        used to hold additional args which are just ignored

    Returns
    -------
    CommandResponse: with the combined EstimateReport as data
    """

    out_dir = config["main.out_dir"]
    written = list()

    try:
        name = fit_method_name(config)
        if method_is_stochastic(config) is True:
            seed_from_config(config)

        ctx = load_context(config, require_auxiliary=name == "JAIPW")
        meta = fit_per_cohort(ctx, name, ctx.spec, options_from_config(config))
        combined = combine_fixed_effects(meta)
        combined.method = "meta_%s" % name

        written.append(write_csv(os.path.join(out_dir, meta_file_name), meta_frame(meta, combined)))
        written.append(write_csv(os.path.join(out_dir, estimates_file_name), combined.to_frame()))
        written.append(write_json(os.path.join(out_dir, diagnostics_file_name), {
            "method": combined.method,
            "cohorts": meta.cohorts,
            "failures": meta.failures,
            "overlap_warning": meta.overlap,
            "diagnostics": combined.diagnostics
        }))

    except Exception as e:
        return command_error_response(e, written)

    text = format_estimate_table(combined)
    if meta.overlap is True:
        text += "\nWARNING: cohorts overlap, the per cohort estimates are not independent"

    return CommandResponse(data=combined, text=text, files=written)
