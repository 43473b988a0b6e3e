import json

import pytest

from dbmvd.cli import CONFIG_KEYS, build_parser, main, parse_config
from dbmvd.model import ConfigurationError


class TestParseConfig:
    def test_flags_override_json(self):
        cfg = parse_config(source=json.dumps({"gamma": 1.0}),
                           flags={"gamma": 2.0}, command="kernel")
        assert cfg.params.gamma == 2.0

    def test_rho_spec_strings(self):
        cfg = parse_config(flags={"rho": "exp:0.5", "gamma": 1.0, "p": 1.0,
                                  "T": 1.0}, command="kernel")
        assert cfg.params.rho.alpha == 0.5
        cfg = parse_config(flags={"rho": "const"}, command="classify")
        assert cfg.params.rho.alpha == 0.0

    def test_unknown_key_reports_path(self):
        with pytest.raises(ConfigurationError, match="unknown config key: gama"):
            parse_config(source=json.dumps({"gama": 1}), command="kernel")
        rho = {"family": "exponential", "alpha": 0.5, "junk": 1}
        with pytest.raises(ConfigurationError, match=r"rho\.junk"):
            parse_config(source=json.dumps({"rho": rho}), command="kernel")

    def test_malformed_json_has_position(self):
        with pytest.raises(ConfigurationError, match="line 1, column"):
            parse_config(source="{bad", command="kernel")

    def test_out_of_range_parameter(self):
        with pytest.raises(Exception, match="positive"):
            parse_config(source=json.dumps({"p": -1}), command="kernel")

    def test_randomized_commands_require_seed(self):
        for cmd in ("simulate", "verify"):
            with pytest.raises(ConfigurationError, match="seed"):
                parse_config(command=cmd)
        parse_config(command="simulate", flags={"seed": 1})

    def test_bad_grid(self):
        with pytest.raises(ConfigurationError, match="bad grid"):
            parse_config(flags={"r_min": 2.0, "r_max": -2.0},
                         command="kernel")


class TestHelp:
    def test_help_enumerates_every_config_key(self, capsys):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["--help"])
        text = capsys.readouterr().out
        for key, *_ in CONFIG_KEYS:
            assert key in text, key


class TestCommands:
    def test_classify_transient(self, capsys):
        assert main(["--gamma", "-1", "classify"]) == 0
        out = capsys.readouterr().out
        assert "transient, conservative" in out

    def test_classify_recurrent(self, capsys):
        assert main(["--gamma", "1", "--rho", "exp:0.5", "classify"]) == 0
        assert "recurrent, conservative" in capsys.readouterr().out

    def test_kernel_artifacts_deterministic(self, tmp_path, capsys):
        args = ["--gamma", "0", "--rho", "const", "--out", str(tmp_path),
                "--times", "0.5", "--r-step", "1.0", "kernel"]
        assert main(args) == 0
        csv1 = next(tmp_path.glob("kernel_*.csv")).read_text()
        meta1 = json.loads(next(tmp_path.glob("*.meta.json")).read_text())
        assert main(args) == 0
        csv2 = next(tmp_path.glob("kernel_*.csv")).read_text()
        meta2 = json.loads(next(tmp_path.glob("*.meta.json")).read_text())
        assert csv1 == csv2
        meta1.pop("built_at")
        meta2.pop("built_at")
        assert meta1 == meta2

    def test_verify_exit_codes(self, tmp_path):
        base = ["--gamma", "0", "--rho", "const", "--seed", "3",
                "--out", str(tmp_path), "--checks", "ck,mass"]
        assert main(base + ["verify"]) == 0
        report = (tmp_path / "verify_report.jsonl").read_text().splitlines()
        assert len(report) == 2
        # an unreachable tolerance must flip the exit status
        assert main(base + ["--ck-tol", "1e-18", "verify"]) == 1

    def test_fit_bounds(self, tmp_path, capsys):
        assert main(["--gamma", "0", "--rho", "const", "--cases", "radial",
                     "--out", str(tmp_path), "fit-bounds"]) == 0
        fits = json.loads((tmp_path / "bound_fits.json").read_text())
        assert fits["fits"][0]["violations"] == 0

    def test_model_error_surfaces_as_json(self, tmp_path, capsys):
        assert main(["--p", "-1", "classify"]) == 2
        err = json.loads(capsys.readouterr().err)
        assert err["error"]["module"] == "model"
        assert err["error"]["code"] == "ModelError"

    def test_simulate_writes_paths(self, tmp_path, capsys):
        assert main(["--gamma", "0", "--rho", "const", "--seed", "12",
                     "--t", "0.02", "--dt", "1e-3", "--n-paths", "2",
                     "--out", str(tmp_path), "simulate"]) == 0
        assert (tmp_path / "path_12.csv").exists()
        assert (tmp_path / "path_13.csv").exists()
        summary = json.loads((tmp_path / "simulate_summary.json").read_text())
        assert len(summary["paths"]) == 2
