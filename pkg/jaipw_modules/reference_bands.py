####
#
# reference simulation results and the acceptance bands derived from them
#

import numpy as np

slopes = ["Z1", "Z2", "Z3"]

# 'scenario' keys must all match the simulated scenario for a band to apply,
# a missing key matches any value
reference_band_types = [
    {
        "name": "naive bias",
        "scenario": {"setup": 1},
        "method": "naive",
        "metric": "relative_bias_pct",
        "terms": slopes,
        "reference": [24.21, 41.20, 53.71],
        "lower": [18.21, 35.20, 47.71],
        "upper": [30.21, 47.20, 59.71]
    },
    {
        "name": "JPL bias, correct selection",
        "scenario": {"setup": 1, "misspec_selection": "none"},
        "method": "JPL",
        "metric": "relative_bias_pct",
        "terms": slopes,
        "reference": [0.85, 0.32, 0.42],
        "upper": [5.0, 5.0, 5.0]
    },
    {
        "name": "JSR bias, correct selection",
        "scenario": {"setup": 1, "misspec_selection": "none"},
        "method": "JSR",
        "metric": "relative_bias_pct",
        "terms": slopes,
        "reference": [0.88, 1.47, 4.47],
        "upper": [5.0, 5.0, 5.0]
    },
    {
        "name": "JPL RMSE ratio, correct selection",
        "scenario": {"setup": 1, "misspec_selection": "none"},
        "method": "JPL",
        "metric": "rmse_ratio",
        "terms": slopes,
        "reference": [0.04, 0.01, 0.02],
        "upper": [0.10, 0.10, 0.10]
    },
    {
        "name": "JSR RMSE ratio, correct selection",
        "scenario": {"setup": 1, "misspec_selection": "none"},
        "method": "JSR",
        "metric": "rmse_ratio",
        "terms": slopes,
        "reference": [None, None, None],
        "upper": [0.10, 0.10, 0.10]
    },
    {
        "name": "JPL coverage, correct selection",
        "scenario": {"setup": 1, "misspec_selection": "none"},
        "method": "JPL",
        "metric": "coverage",
        "terms": slopes,
        "reference": [0.95, 0.96, 0.94],
        "lower": [0.91, 0.91, 0.91],
        "upper": [0.98, 0.98, 0.98]
    },
    {
        "name": "JAIPW bias, all selection misspecified",
        "scenario": {"setup": 2, "misspec_selection": "all", "aux": "correct"},
        "method": "JAIPW",
        "metric": "relative_bias_pct",
        "terms": slopes,
        "reference": [1.72, 4.94, 6.76],
        "upper": [10.0, 10.0, 10.0]
    },
    {
        "name": "JAIPW RMSE ratio, all selection misspecified",
        "scenario": {"setup": 2, "misspec_selection": "all", "aux": "correct"},
        "method": "JAIPW",
        "metric": "rmse_ratio",
        "terms": slopes,
        "reference": [0.34, 0.17, 0.24],
        "upper": [0.6, 0.6, 0.6]
    },
    {
        "name": "JAIPW bias, selection and auxiliary misspecified",
        "scenario": {"setup": 2, "misspec_selection": "all", "aux": "incorrect"},
        "method": "JAIPW",
        "metric": "relative_bias_pct",
        "terms": ["Z1"],
        "reference": [19.91],
        "lower": [10.0]
    },
    {
        "name": "JPL bias, all selection misspecified",
        "scenario": {"setup": 1, "misspec_selection": "all"},
        "method": "JPL",
        "metric": "relative_bias_pct",
        "terms": ["Z2"],
        "reference": [36.92],
        "lower": [25.0]
    },
    {
        "name": "meta PL bias, correct selection",
        "scenario": {"setup": 1, "misspec_selection": "none"},
        "method": "meta_pl",
        "metric": "relative_bias_pct",
        "terms": slopes,
        "reference": [0.51, 0.99, 0.91],
        "upper": [5.0, 5.0, 5.0]
    }
]


def band_applies(band, scenario):
    return all(getattr(scenario, key) == value for key, value in band.get("scenario", dict()).items())


def check_reference_bands(result):
    """
    Compare a study result with every band that applies to its scenario

    Parameters
    ----------
    result : SimStudyResult
        study outcome

    Returns
    -------
    list: one dict per band and term (band, method, metric, term, reference, lower, upper, observed, met)
    """

    rows = list()
    for band in reference_band_types:
        if not band_applies(band, result.scenario) or band["method"] not in result.methods:
            continue

        for index, term in enumerate(band["terms"]):
            lower = band.get("lower", [None] * len(band["terms"]))[index]
            upper = band.get("upper", [None] * len(band["terms"]))[index]
            observed = result.metric(band["method"], term, band["metric"])

            met = bool(np.isfinite(observed))
            if lower is not None:
                met = met and observed >= lower
            if upper is not None:
                met = met and observed <= upper

            rows.append({
                "band": band["name"],
                "method": band["method"],
                "metric": band["metric"],
                "term": term,
                "reference": band["reference"][index],
                "lower": lower,
                "upper": upper,
                "observed": observed,
                "met": met
            })

    return rows

# EOF
