"""CLI and runner tests: config validation, outputs, determinism, exit codes."""

import json

import numpy as np
import pytest

from kmflow.cli import main
from kmflow.config import parse_config
from kmflow.errors import ParseError, ValidationError

MINIMAL_FLOW = """
scenario = "flow"
seed = 3

[grid]
n_dims = 1
resolution = [64]

[cost]
kind = "torus_squared_distance"

[density.rho]
kind = "constant"

[density.rho_bar]
kind = "sine"
amplitude = 0.3
frequency = 1

[flow]
formulation = "potential"
t_max = 2.0
stop_grad_theta = 1e-7
monitor_stride = 10
"""


def write_config(tmp_path, text, name="run.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


class TestParseConfig:
    def test_minimal_flow_config(self, tmp_path):
        cfg = parse_config(write_config(tmp_path, MINIMAL_FLOW))
        assert cfg.scenario == "flow"
        assert cfg.grid.resolution == (64,)
        assert cfg.model.kind == "torus_squared_distance"
        assert cfg.flow.t_max == 2.0

    def test_negative_density_amplitude(self, tmp_path):
        bad = MINIMAL_FLOW.replace("amplitude = 0.3", "amplitude = -2.0")
        with pytest.raises(ValidationError, match="positive"):
            parse_config(write_config(tmp_path, bad))

    def test_unknown_cost_kind_named(self, tmp_path):
        bad = MINIMAL_FLOW.replace(
            'kind = "torus_squared_distance"', 'kind = "reflector_antenna"'
        )
        with pytest.raises(ValidationError, match="cost.kind"):
            parse_config(write_config(tmp_path, bad))

    def test_all_errors_collected(self, tmp_path):
        bad = MINIMAL_FLOW.replace(
            'kind = "torus_squared_distance"', 'kind = "reflector_antenna"'
        ).replace('scenario = "flow"', 'scenario = "teleport"')
        with pytest.raises(ValidationError) as err:
            parse_config(write_config(tmp_path, bad))
        assert len(err.value.problems) >= 2

    def test_syntax_error_is_parse_error(self, tmp_path):
        with pytest.raises(ParseError):
            parse_config(write_config(tmp_path, "scenario = [unclosed"))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ParseError, match="exist"):
            parse_config(str(tmp_path / "nope.toml"))

    def test_missing_csv_reported(self, tmp_path):
        cfg = MINIMAL_FLOW.replace(
            '[density.rho]\nkind = "constant"',
            '[density.rho]\nkind = "csv"\npath = "ghost.csv"',
        )
        with pytest.raises(ValidationError, match="does not exist"):
            parse_config(write_config(tmp_path, cfg))

    def test_csv_density_loaded(self, tmp_path):
        values = 1.0 + 0.1 * np.sin(2 * np.pi * np.arange(64) / 64)
        np.savetxt(tmp_path / "rho.csv", values, delimiter=",")
        cfg = MINIMAL_FLOW.replace(
            '[density.rho]\nkind = "constant"',
            '[density.rho]\nkind = "csv"\npath = "rho.csv"',
        )
        parsed = parse_config(write_config(tmp_path, cfg))
        from kmflow.config import build_densities

        dens = build_densities(parsed)
        assert np.allclose(dens.rho.values, values)


class TestCliRun:
    def test_identity_fixed_point_exit_zero(self, tmp_path):
        cfg = MINIMAL_FLOW.replace("amplitude = 0.3", "amplitude = 0.0")
        path = write_config(tmp_path, cfg)
        out = tmp_path / "out"
        status = main(["run", path, "--out", str(out)])
        assert status == 0
        report = json.loads((out / "report.json").read_text())
        assert report["flow_report"]["termination"] == "converged"
        assert max(report["flow_report"]["theta_osc"]) < 1e-12
        assert (out / "series.csv").exists()
        assert (out / "final_map.csv").exists()

    def test_huge_fixed_dt_exit_one(self, tmp_path):
        cfg = MINIMAL_FLOW + "\n"
        cfg = cfg.replace(
            'formulation = "potential"',
            'formulation = "potential"\ndt_policy = "fixed"\ndt = 50.0\nmax_halvings = 0',
        )
        path = write_config(tmp_path, cfg)
        out = tmp_path / "out"
        status = main(["run", path, "--out", str(out)])
        assert status == 1
        report = json.loads((out / "report.json").read_text())
        assert report["flow_report"]["termination"].startswith("error(")

    def test_verify_subcommand(self, tmp_path, capsys):
        path = write_config(tmp_path, MINIMAL_FLOW)
        assert main(["verify", path]) == 0
        bad = write_config(tmp_path, MINIMAL_FLOW.replace("0.3", "-2.0"), "bad.toml")
        assert main(["verify", bad]) == 1

    def test_determinism_byte_identical_series(self, tmp_path):
        path = write_config(tmp_path, MINIMAL_FLOW)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        s1 = main(["run", path, "--out", str(out1)])
        s2 = main(["run", path, "--out", str(out2)])
        assert s1 == s2
        assert (out1 / "series.csv").read_bytes() == (out2 / "series.csv").read_bytes()
        assert (out1 / "final_map.csv").read_bytes() == (out2 / "final_map.csv").read_bytes()

    def test_report_roundtrip_scalars(self, tmp_path):
        path = write_config(tmp_path, MINIMAL_FLOW)
        out = tmp_path / "out"
        main(["run", path, "--out", str(out)])
        text = (out / "report.json").read_text()
        report = json.loads(text)
        assert json.loads(json.dumps(report)) == report
        fr = report["flow_report"]
        assert len(fr["times"]) == len(fr["theta_osc"]) == len(fr["slope_ratio_max"])

    def test_mtw_scan_scenario(self, tmp_path):
        cfg = """
scenario = "mtw_scan"
seed = 1

[grid]
n_dims = 2
resolution = [16, 16]

[cost]
kind = "perturbed_quadratic"
epsilon = 0.02

[mtw]
directions_per_point = 8
points_per_axis = 3
"""
        path = write_config(tmp_path, cfg)
        out = tmp_path / "out"
        status = main(["run", path, "--out", str(out)])
        assert status == 0
        report = json.loads((out / "report.json").read_text())
        mtw = report["mtw_report"]
        assert mtw["samples"] > 0
        assert mtw["verdict"] in ("positive", "nonnegative_with_nulls", "violated")

    def test_geometry_verify_scenario(self, tmp_path):
        cfg = """
scenario = "geometry_verify"
seed = 1

[grid]
n_dims = 2
resolution = [16, 16]

[cost]
kind = "perturbed_quadratic"
epsilon = 0.02

[geometry_verify]
samples = 4
curvature_points = 4
wedge_points = 10
"""
        path = write_config(tmp_path, cfg)
        out = tmp_path / "out"
        status = main(["run", path, "--out", str(out)])
        assert status == 0
        report = json.loads((out / "report.json").read_text())
        ver = report["verification"]
        assert ver["passed"]
        assert ver["curvature_rel_error_max"] < 1e-5

    def test_oracle_compare_scenario_1d(self, tmp_path):
        cfg = MINIMAL_FLOW.replace('scenario = "flow"', 'scenario = "oracle_compare"')
        path = write_config(tmp_path, cfg)
        out = tmp_path / "out"
        status = main(["run", path, "--out", str(out)])
        assert status in (0, 2)
        report = json.loads((out / "report.json").read_text())
        assert report["oracle"]["method"] == "rearrangement_1d"
        assert report["oracle"]["comparison"]["sup_error"] < 5e-3
