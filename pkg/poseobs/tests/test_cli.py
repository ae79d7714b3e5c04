"""
Test suite for scenario files, CSV output, settings and the command line
"""

import os
import sys

import numpy as np
import pytest

# Add parent directory to path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from app import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, check_geometry, main
from estimators.bias_observer import BiasLaw
from selftest.suite_router import SuiteRouter, innovation_for_fault
from simulation.scenario_parser import (
    ScenarioError,
    load_scenario,
    parse_geometry_file,
    parse_scenario_text,
)
from simulation.simulator import FeatureKind, builtin_scenarios, run_scenario
from utils import settings
from utils.csv_log import (
    FIG1_HEADER,
    FIG2_HEADER,
    TRAJECTORY_HEADER,
    format_number,
    read_csv_columns,
    write_plot_data,
    write_trajectory_csv,
)

LAB_SCENARIO = """
# two directions and a point
[scenario]
name = lab_run
dt = 0.002
duration = 0.5
bias_law = proposition1

[geometry]
vector = 0 0 1
vector = 1 0 0
point = 1 0 0

[gains]
k = 3
k_b = 0.5

[bias]
omega = 0.01 0 0

[initial]
estimate_rotation = 0 0 0.1
estimate_position = 0.1 0.2 0.3

[noise]
omega_std = 0.001
"""

COLLINEAR_GEOMETRY = """
[geometry]
vector = 0 0 1
vector = 0 0 -3
"""


@pytest.fixture(scope="module")
def short_log():
    return run_scenario(builtin_scenarios()["case2"].replace(duration=0.1))


class TestScenarioParser:
    """Test the sectioned scenario format"""

    def test_full_scenario(self):
        """Test every section of a scenario file"""
        s = parse_scenario_text(LAB_SCENARIO)
        assert s.name == "lab_run"
        assert s.dt == 0.002
        assert s.duration == 0.5
        assert s.bias_law is BiasLaw.PROPOSITION1
        assert [f.kind for f in s.reference_geometry] == [
            FeatureKind.VECTOR,
            FeatureKind.VECTOR,
            FeatureKind.POINT,
        ]
        assert s.gains == (3.0, 3.0, 3.0)
        assert s.antiwindup.k_b == 0.5
        assert np.array_equal(s.true_bias.angular, [0.01, 0.0, 0.0])
        assert np.array_equal(s.true_bias.linear, [0.2, -0.1, 0.1])
        assert np.allclose(s.initial_estimate.position, [0.1, 0.2, 0.3])
        assert s.noise_std == (0.001, 0.0)

    def test_defaults_from_case1(self):
        """Test that missing sections keep the case1 values"""
        s = parse_scenario_text("[scenario]\nduration = 2\n")
        base = builtin_scenarios()["case1"]
        assert s.name == "custom"
        assert s.duration == 2.0
        assert s.gains == base.gains
        assert s.bias_law is BiasLaw.ANTIWINDUP
        assert np.array_equal(s.true_bias.as_vector(), base.true_bias.as_vector())

    def test_geometry_without_gains(self):
        """Test the default gain for a new geometry"""
        s = parse_scenario_text("[geometry]\npoint = 1 0 0\npoint = 0 1 0\n")
        assert s.gains == (2.0, 2.0)

    def test_gain_count_mismatch(self):
        """Test that explicit gains must match the geometry"""
        with pytest.raises(ScenarioError):
            parse_scenario_text("[geometry]\npoint = 1 0 0\n[gains]\nk = 1 2\n")

    def test_non_positive_gains(self):
        """Test that gains must be positive"""
        for value in ("-2", "0", "1 -1"):
            with pytest.raises(ScenarioError, match="positive"):
                parse_scenario_text(f"[geometry]\npoint = 1 0 0\npoint = 0 1 0\n[gains]\nk = {value}\n")
        with pytest.raises(ScenarioError):
            parse_scenario_text("[gains]\nk_b = -1\n")

    def test_unknown_section(self):
        """Test rejection of unknown sections"""
        with pytest.raises(ScenarioError, match="unknown section"):
            parse_scenario_text("[camera]\nfov = 60\n")

    def test_unknown_key(self):
        """Test rejection of unknown keys"""
        with pytest.raises(ScenarioError, match="unknown key"):
            parse_scenario_text("[scenario]\nspeed = 3\n")

    def test_duplicate_key(self):
        """Test rejection of repeated scalar keys"""
        with pytest.raises(ScenarioError, match="duplicate key"):
            parse_scenario_text("[scenario]\ndt = 0.1\ndt = 0.2\n")

    def test_key_outside_section(self):
        """Test rejection of keys before the first section"""
        with pytest.raises(ScenarioError):
            parse_scenario_text("dt = 0.1\n")

    def test_empty_geometry(self):
        """Test rejection of a geometry section without entries"""
        with pytest.raises(ScenarioError):
            parse_scenario_text("[geometry]\n")

    def test_zero_vector(self):
        """Test rejection of a zero direction"""
        with pytest.raises(ScenarioError, match="nonzero"):
            parse_scenario_text("[geometry]\nvector = 0 0 0\n")

    def test_bad_numbers(self):
        """Test rejection of malformed and wrong-length values"""
        with pytest.raises(ScenarioError):
            parse_scenario_text("[geometry]\npoint = 1 0\n")
        with pytest.raises(ScenarioError):
            parse_scenario_text("[scenario]\ndt = fast\n")

    def test_unknown_bias_law(self):
        """Test rejection of an unknown estimator"""
        with pytest.raises(ScenarioError, match="bias_law"):
            parse_scenario_text("[scenario]\nbias_law = kalman\n")

    def test_geometry_file_requires_geometry(self, tmp_path):
        """Test that geometry files need a geometry section"""
        path = tmp_path / "g.cfg"
        path.write_text("[scenario]\ndt = 0.1\n")
        with pytest.raises(ScenarioError):
            parse_geometry_file(str(path))

    def test_load_scenario(self, tmp_path):
        """Test built-in names and file paths"""
        assert load_scenario("case3").name == "case3"
        path = tmp_path / "lab.cfg"
        path.write_text(LAB_SCENARIO)
        assert load_scenario(str(path)).name == "lab_run"
        with pytest.raises(ScenarioError):
            load_scenario(str(tmp_path / "missing.cfg"))

    def test_undecodable_file(self, tmp_path):
        """Test that a file that is not UTF-8 is a scenario error"""
        path = tmp_path / "binary.cfg"
        path.write_bytes(b"\xff\xfe[scenario]")
        with pytest.raises(ScenarioError, match="Cannot read"):
            load_scenario(str(path))
        with pytest.raises(ScenarioError, match="Cannot read"):
            parse_geometry_file(str(path))


class TestCsvOutput:
    """Test trajectory CSV and plot data files"""

    def test_number_format(self):
        """Test 17 significant digits with a '.' decimal point"""
        assert format_number(0.1) == "0.10000000000000001"
        assert format_number(1.0) == "1"
        assert float(format_number(1.0 / 3.0)) == 1.0 / 3.0

    def test_trajectory_csv(self, short_log, tmp_path):
        """Test header, row count and exact values"""
        path = write_trajectory_csv(short_log, tmp_path / "run.csv")
        with open(path) as f:
            header = f.readline().strip().split(",")
        assert header == TRAJECTORY_HEADER
        assert header[:5] == ["t", "rot_err_rad", "pos_err_m", "bias_omega_err", "bias_v_err"]

        columns = read_csv_columns(path)
        assert len(columns["t"]) == len(short_log) == 101
        assert np.array_equal(columns["rot_err_rad"], short_log.column("rot_err_rad"))
        assert np.array_equal(columns["est_px"], short_log.estimated_poses[:, 9])

    def test_plot_data(self, short_log, tmp_path):
        """Test the attitude/position and bias-error files"""
        fig1, fig2 = write_plot_data(short_log, tmp_path / "plots")
        assert fig1.name == "case2_fig1.csv"
        assert fig2.name == "case2_fig2.csv"
        fig1_columns = read_csv_columns(fig1)
        fig2_columns = read_csv_columns(fig2)
        assert list(fig1_columns) == FIG1_HEADER
        assert list(fig2_columns) == FIG2_HEADER
        assert fig1_columns["x"][0] == pytest.approx(1.0)
        assert fig1_columns["angle_true"][0] == pytest.approx(np.pi / 6.0)
        assert np.array_equal(fig2_columns["bias_v_err"], short_log.column("bias_v_err"))


class TestSettings:
    """Test environment configuration helpers"""

    def test_ensure_output_dir(self, tmp_path):
        """Test nested directory creation"""
        target = tmp_path / "a" / "b"
        assert settings.ensure_output_dir(str(target)) == target
        assert target.is_dir()

    def test_output_dir_on_a_file(self, tmp_path):
        """Test that a file path cannot serve as output directory"""
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(settings.ConfigError):
            settings.ensure_output_dir(str(blocker))

    def test_float_env(self, monkeypatch):
        """Test numeric environment values"""
        monkeypatch.setenv("POSEOBS_TEST_DT", "0.005")
        assert settings._float_env("POSEOBS_TEST_DT", 1.0) == 0.005
        monkeypatch.setenv("POSEOBS_TEST_DT", "soon")
        with pytest.raises(settings.ConfigError):
            settings._float_env("POSEOBS_TEST_DT", 1.0)
        monkeypatch.delenv("POSEOBS_TEST_DT")
        assert settings._float_env("POSEOBS_TEST_DT", 1.0) == 1.0


class TestSuiteRouter:
    """Test suite dispatch"""

    def test_unknown_suite(self):
        """Test the error result for an unknown name"""
        result = SuiteRouter().execute("telepathy")
        assert result["success"] is False
        assert "Unknown suite" in result["error"]

    def test_names(self):
        """Test the registered suites"""
        assert SuiteRouter().names == [
            "gradient_oracle",
            "form_equality",
            "equivariance",
            "error_autonomy",
            "lyapunov_identity",
            "observability",
            "zero_cost_search",
        ]

    def test_unknown_fault(self):
        """Test rejection of an unknown fault"""
        with pytest.raises(ValueError):
            innovation_for_fault("bit-flip")

    def test_injected_fault_fails_gradient(self):
        """Test that a sign-flipped innovation fails the gradient oracle"""
        result = SuiteRouter(samples=20, fault="innovation-sign").execute("gradient_oracle")
        assert result["success"] is False

    def test_seeded_results(self):
        """Test that the same seed reproduces a suite"""
        a = SuiteRouter(seed=3, samples=30).execute("equivariance")
        b = SuiteRouter(seed=3, samples=30).execute("equivariance")
        assert a["max_error"] == b["max_error"]


class TestCommandLine:
    """Test the run, check and selftest commands"""

    def test_run_single(self, tmp_path, capsys):
        """Test a short case1 run with an explicit output file"""
        out = tmp_path / "case1.csv"
        assert main(["run", "case1", "--duration", "1", "--out", str(out)]) == EXIT_OK
        assert len(read_csv_columns(out)["t"]) == 1001
        assert "Scenario case1" in capsys.readouterr().out

    def test_run_batch_with_plot_data(self, tmp_path):
        """Test several scenarios into an output directory"""
        out_dir = tmp_path / "results"
        plots = tmp_path / "plots"
        code = main(
            [
                "run",
                "case1",
                "case3",
                "--duration",
                "0.1",
                "--out-dir",
                str(out_dir),
                "--plot-data",
                str(plots),
                "--bias-law",
                "none",
            ]
        )
        assert code == EXIT_OK
        assert (out_dir / "case1.csv").is_file()
        assert (out_dir / "case3.csv").is_file()
        assert (plots / "case3_fig2.csv").is_file()

    def test_run_scenario_file(self, tmp_path):
        """Test a run from a scenario file"""
        path = tmp_path / "lab.cfg"
        path.write_text(LAB_SCENARIO)
        out = tmp_path / "lab.csv"
        assert main(["run", str(path), "--out", str(out)]) == EXIT_OK
        assert len(read_csv_columns(out)["t"]) == 251

    def test_run_initial_overrides(self, tmp_path):
        """Test that a perfect initial estimate keeps zero errors"""
        out = tmp_path / "eq.csv"
        code = main(
            [
                "run",
                "case2",
                "--duration",
                "0.2",
                "--bias-law",
                "none",
                "--estimate-rotation",
                "0",
                "0",
                str(np.pi / 6.0),
                "--estimate-position",
                "1",
                "-1",
                "0.5",
                "--out",
                str(out),
            ]
        )
        assert code == EXIT_OK
        columns = read_csv_columns(out)
        assert columns["rot_err_rad"][0] <= 1e-12
        assert columns["pos_err_m"][0] <= 1e-12

    def test_run_out_with_batch(self, tmp_path):
        """Test that --out refuses several scenarios"""
        assert main(["run", "case1", "case2", "--out", str(tmp_path / "x.csv")]) == EXIT_USAGE

    def test_run_unknown_scenario(self, tmp_path):
        """Test a missing scenario source"""
        code = main(["run", str(tmp_path / "nope.cfg"), "--out-dir", str(tmp_path)])
        assert code == EXIT_USAGE

    def test_run_rejects_bad_dt(self):
        """Test option validation"""
        with pytest.raises(SystemExit) as excinfo:
            main(["run", "case1", "--dt", "-1"])
        assert excinfo.value.code == EXIT_USAGE

    def test_run_rejects_negative_seed(self):
        """Test that --seed must be non-negative"""
        for argv in (["run", "case1", "--seed", "-1"], ["selftest", "--seed", "-1"]):
            with pytest.raises(SystemExit) as excinfo:
                main(argv)
            assert excinfo.value.code == EXIT_USAGE

    def test_undecodable_file(self, tmp_path):
        """Test run and check on a file that is not UTF-8"""
        path = tmp_path / "binary.cfg"
        path.write_bytes(b"\xff\xfe[scenario]")
        assert main(["run", str(path), "--out-dir", str(tmp_path)]) == EXIT_USAGE
        assert main(["check", str(path)]) == EXIT_USAGE

    def test_check_negative_gain(self, tmp_path):
        """Test that check refuses a non-positive gain"""
        path = tmp_path / "negative.cfg"
        path.write_text("[geometry]\nvector = 0 0 1\npoint = 1 0 0\n[gains]\nk = -2\n")
        assert main(["check", str(path)]) == EXIT_USAGE

    def test_usage_errors(self):
        """Test argparse failures exit with status 1"""
        for argv in (["frobnicate"], ["run"], ["selftest", "--suite", "telepathy"]):
            with pytest.raises(SystemExit) as excinfo:
                main(argv)
            assert excinfo.value.code == EXIT_USAGE

    def test_check_builtin(self, capsys):
        """Test the check verdict for case1"""
        assert main(["check", "case1"]) == EXIT_OK
        assert "Assumption 1: Case 1; Assumption 2: full rank" in capsys.readouterr().out

    def test_check_collinear_file(self, tmp_path, capsys):
        """Test the check verdict for two collinear directions"""
        path = tmp_path / "collinear.cfg"
        path.write_text(COLLINEAR_GEOMETRY)
        assert main(["check", str(path)]) == EXIT_FAILURE
        assert "Assumption 1: NotSatisfied; Assumption 2: rank deficient" in capsys.readouterr().out

    def test_check_empty_geometry(self, tmp_path):
        """Test a geometry file without entries"""
        path = tmp_path / "empty.cfg"
        path.write_text("[geometry]\n")
        assert main(["check", str(path)]) == EXIT_USAGE

    def test_check_geometry_result(self):
        """Test the verdict dictionary for case3"""
        s = builtin_scenarios()["case3"]
        result = check_geometry(s.reference_geometry, s.gains)
        assert result["case"] == "Case 3"
        assert result["full_rank"] is True
        assert result["success"] is True

    def test_selftest_passes(self, capsys):
        """Test a reduced self-test run"""
        argv = ["selftest", "--samples", "50", "--search-samples", "2000"]
        for suite in ("gradient_oracle", "form_equality", "equivariance", "observability", "zero_cost_search"):
            argv += ["--suite", suite]
        assert main(argv) == EXIT_OK
        out = capsys.readouterr().out
        assert "PASS gradient_oracle" in out
        assert "All properties passed" in out

    def test_selftest_injected_fault(self, capsys):
        """Test that an injected fault is reported"""
        argv = ["selftest", "--samples", "20", "--inject-fault", "innovation-sign", "--suite", "gradient_oracle"]
        assert main(argv) == EXIT_FAILURE
        assert "FAIL gradient_oracle" in capsys.readouterr().out


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
