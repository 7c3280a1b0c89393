import os

from jaipw_modules.classes import CommandResponse
from jaipw_modules.input_helper import scenario_from_config
from jaipw_modules.reference_bands import check_reference_bands
from jaipw_modules.report_helper import (
    command_error_response,
    format_study_summary,
    write_csv,
    write_text,
    replicates_file_name,
    metrics_file_name,
    summary_file_name
)
from jaipw_modules.sim_harness import run_study


# noinspection PyUnusedLocal
def run_simulate(config=None, *args, **kwargs):
    """run a Monte Carlo study and write replicates, metrics and the summary report

    Parameters
    ----------
    config : dict
        dictionary with items parsed from config file
    args, kwargs: None
        used to hold additional args which are just ignored

    Returns
    -------
    CommandResponse: with the SimStudyResult as data
    """

    out_dir = config["main.out_dir"]
    written = list()

    try:
        scenario = scenario_from_config(config)
        result = run_study(scenario, config["simulation.methods"], config["main.threads"])

        band_rows = check_reference_bands(result) if config.get("check_tables") is True else None
        summary = format_study_summary(result, band_rows)

        written.append(write_csv(os.path.join(out_dir, replicates_file_name), result.replicates))
        written.append(write_csv(os.path.join(out_dir, metrics_file_name), result.metrics))
        written.append(write_text(os.path.join(out_dir, summary_file_name), summary))

    except Exception as e:
        return command_error_response(e, written)

    return CommandResponse(data=result, text=summary, files=written)
