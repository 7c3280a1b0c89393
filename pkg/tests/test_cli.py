
import importlib.util
import os
import sys

import numpy as np
import pandas as pd
import pytest

from jaipw_modules import exit_config_error, exit_data_error, exit_numerical_failure, exit_ok, exit_unexpected_error
from jaipw_modules.command_definition import SubCommands
from jaipw_modules.common import parse_command_line, parse_own_config
from jaipw_modules.estimation_methods import run_method
from jaipw_modules.report_helper import error_file_name, estimates_file_name, metrics_file_name

script_path = os.path.join(os.path.dirname(os.path.abspath(__file__)), os.pardir, "jaipw-estimate.py")

internal_columns = ["id", "D", "Z1", "Z2", "Z3", "W1", "W2", "W3", "S1", "S2", "S3"]

config_template = """
[main]
schema_version = 1
seed = 7
out_dir = {out_dir}
population_size = 4000

[data]
internal_file = {internal_file}
external_file = {external_file}

[roles]
outcome = D
covariates = Z1, Z2, Z3
auxiliary = {auxiliary}
cohorts = S1, S2, S3
selection.S1 = Z2, Z3, W1, D
selection.S2 = Z3, W2, D
selection.S3 = Z2, W3

[selection]
method = JPL

[estimation]
estimator = {estimator}

[jaipw]
regressor = linear

[simulation]
setup = 1
replications = {replications}
population_size = 2000
methods = naive, JPL
"""


def load_script():
    spec = importlib.util.spec_from_file_location("jaipw_estimate", script_path)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


@pytest.fixture
def workspace(tmp_path, setup_1_population):
    """
    Input files of the first simulated setup 1 population and a config writer
    """

    internal, external = setup_1_population
    selected = internal.frame.loc[internal.composite == 1, internal_columns]

    internal_file = tmp_path / "internal.csv"
    external_file = tmp_path / "external.csv"
    selected.to_csv(internal_file, index=False)
    external.frame.to_csv(external_file, index=False)

    def write_config(out_dir="results", auxiliary="Z1", estimator="IPW", replications=2, external_frame=None):
        if external_frame is not None:
            external_frame.to_csv(external_file, index=False)
        path = tmp_path / "jaipw-estimate.ini"
        path.write_text(config_template.format(out_dir=tmp_path / out_dir, internal_file=internal_file,
                                               external_file=external_file, auxiliary=auxiliary,
                                               estimator=estimator, replications=replications))
        return str(path)

    return write_config


class TestSubCommands:

    def test_every_command_has_a_handler(self):
        commands = SubCommands()

        assert [c.name for c in commands] == ["fit", "meta", "weights", "simulate"]
        for command in commands:
            assert callable(command.get_command_handler())

    def test_unknown_command(self):
        assert SubCommands().get_command_called("plot") is None


class TestParseOwnConfig:

    def test_command_line_overrides_config(self, workspace):
        config_file = workspace()
        args = parse_command_line(self_description="test", version="0", version_date="today",
                                  default_config_file_path="./jaipw-estimate.ini",
                                  argv=["fit", "-c", config_file, "--seed", "11", "--threads", "2"])

        config = parse_own_config(args, "INFO")

        assert config["main.seed"] == 11
        assert config["main.threads"] == 2
        assert config["roles.selection.S2"] == ["Z3", "W2", "D"]
        assert config["selection.probability_floor"] == 1e-6
        assert config["jaipw.aux_mode"] == "flexible"
        assert config["check_tables"] is False

    def test_data_files_must_exist(self, workspace, tmp_path):
        config_file = workspace()
        os.remove(tmp_path / "external.csv")
        args = parse_command_line(self_description="test", version="0", version_date="today",
                                  default_config_file_path="./jaipw-estimate.ini", argv=["fit", "-c", config_file])

        assert parse_own_config(args, "INFO") is False

    def test_simulation_runs_without_config_file(self, tmp_path):
        args = parse_command_line(self_description="test", version="0", version_date="today",
                                  default_config_file_path="./jaipw-estimate.ini",
                                  argv=["simulate", "-c", str(tmp_path / "missing.ini"), "--check-tables"])

        config = parse_own_config(args, "INFO")

        assert config["simulation.replications"] == 200
        assert config["check_tables"] is True


class TestMain:

    def test_fit(self, workspace, tmp_path, setup_1_context):
        exit_code = load_script().main(["fit", "-c", workspace(), "-q"])

        assert exit_code == exit_ok
        estimates = pd.read_csv(tmp_path / "results" / estimates_file_name)
        expected = run_method(setup_1_context, "JPL")

        assert list(estimates["term"]) == expected.terms
        np.testing.assert_allclose(estimates["estimate"], expected.estimate, rtol=1e-6)
        np.testing.assert_allclose(estimates["se"], expected.se, rtol=1e-6)

        weights = pd.read_csv(tmp_path / "results" / "weights.csv")
        assert list(weights.columns) == ["id", "pi_1", "pi_2", "pi_3", "pi_joint"]
        assert os.path.exists(tmp_path / "results" / "diagnostics.json")

    def test_missing_design_probabilities(self, workspace, tmp_path, setup_1_population):
        _, external = setup_1_population
        config_file = workspace(external_frame=external.frame.drop(columns=["pi_ext"]))

        exit_code = load_script().main(["fit", "-c", config_file, "-q"])

        assert exit_code == exit_data_error
        error = pd.read_csv(tmp_path / "results" / error_file_name)
        assert error.loc[0, "error"] == "MissingColumn"
        assert "pi_ext" in error.loc[0, "message"]
        assert not os.path.exists(tmp_path / "results" / estimates_file_name)

    def test_doubly_robust_fit_needs_auxiliary_variables(self, workspace, tmp_path):
        exit_code = load_script().main(["fit", "-c", workspace(auxiliary="", estimator="JAIPW"), "-q"])

        assert exit_code == exit_data_error
        assert pd.read_csv(tmp_path / "results" / error_file_name).loc[0, "error"] == "EmptyAuxiliary"

    def test_meta(self, workspace, tmp_path):
        exit_code = load_script().main(["meta", "-c", workspace(estimator="naive"), "-q"])

        assert exit_code == exit_ok
        meta = pd.read_csv(tmp_path / "results" / "meta.csv")
        assert list(dict.fromkeys(meta["cohort"])) == ["S1", "S2", "S3", "combined"]

    def test_weights(self, workspace, tmp_path, setup_1_context):
        exit_code = load_script().main(["weights", "-c", workspace(), "-q"])

        assert exit_code == exit_ok
        weights = pd.read_csv(tmp_path / "results" / "weights.csv")
        assert len(weights) == setup_1_context.n_selected
        assert np.all(weights["pi_joint"] >= weights[["pi_1", "pi_2", "pi_3"]].max(axis=1) - 1e-12)

    def test_simulation_needs_two_replications(self, workspace, tmp_path):
        exit_code = load_script().main(["simulate", "-c", workspace(replications=1), "-q"])

        assert exit_code == exit_config_error
        assert pd.read_csv(tmp_path / "results" / error_file_name).loc[0, "error"] == "InvalidConfig"

    def test_seeded_simulation_is_reproducible(self, workspace, tmp_path):
        script = load_script()

        assert script.main(["simulate", "-c", workspace(out_dir="first"), "-q"]) == exit_ok
        assert script.main(["simulate", "-c", workspace(out_dir="second"), "-q"]) == exit_ok

        first = (tmp_path / "first" / metrics_file_name).read_bytes()
        assert first == (tmp_path / "second" / metrics_file_name).read_bytes()

    def test_numerical_library_failure(self, workspace, tmp_path, monkeypatch):
        def singular(*args, **kwargs):
            raise np.linalg.LinAlgError("Singular matrix")

        monkeypatch.setattr(sys.modules["jaipw_modules.cli_commands.run_fit"], "fit_selection", singular)
        exit_code = load_script().main(["fit", "-c", workspace(), "-q"])

        assert exit_code == exit_numerical_failure
        error = pd.read_csv(tmp_path / "results" / error_file_name)
        assert error.loc[0, "error"] == "LinAlgError"
        assert error.loc[0, "message"] == "Singular matrix"
        # estimates.csv was written before the failure
        assert not os.path.exists(tmp_path / "results" / estimates_file_name)

    def test_unexpected_failure(self, workspace, tmp_path, monkeypatch):
        def broken(*args, **kwargs):
            raise ValueError("cannot reshape array")

        monkeypatch.setattr(sys.modules["jaipw_modules.cli_commands.run_weights"], "fit_selection", broken)
        exit_code = load_script().main(["weights", "-c", workspace(), "-q"])

        assert exit_code == exit_unexpected_error
        assert pd.read_csv(tmp_path / "results" / error_file_name).loc[0, "error"] == "ValueError"

    def test_missing_config_file(self, tmp_path):
        with pytest.raises(SystemExit) as error:
            load_script().main(["fit", "-c", str(tmp_path / "missing.ini"), "-q"])

        assert error.value.code == exit_config_error

# EOF
