import json

import pytest

from rotorstack import cli
from rotorstack.errors import SimulationDiverged

BUNDLED = ("hover", "dash_100m", "figure_eight", "indoor_transition",
           "gnss_dropout_failover", "controller_switch_noise")


class TestBundled:
    def test_all_scenarios_present(self):
        assert set(cli.bundled_scenarios()) == set(BUNDLED)


class TestRun:
    def test_run_writes_log_and_summary(self, tmp_path, capsys):
        out = tmp_path / "log.csv"
        code = cli.main(["run", "--scenario", "hover", "--duration", "1.0",
                         "--seed", "42", "--out", str(out)])
        assert code == 0
        assert out.exists()
        assert (tmp_path / "log.csv.summary.json").exists()
        summary = json.loads(capsys.readouterr().out)
        assert summary["rows"] == 101

    def test_unknown_platform_is_validation_failure(self, tmp_path):
        assert cli.main(["run", "--scenario", "hover", "--profile", "Bogus",
                         "--duration", "1.0"]) == 1

    def test_unknown_scenario(self):
        assert cli.main(["run", "--scenario", "no_such_thing"]) == 1

    def test_divergence_maps_to_exit_2(self, monkeypatch):
        def explode(scenario, registry):
            raise SimulationDiverged("boom", 17)
        monkeypatch.setattr(cli, "run", explode)
        assert cli.main(["run", "--scenario", "hover", "--duration", "1.0"]) == 2

    def test_controller_override(self, capsys, tmp_path):
        code = cli.main(["run", "--scenario", "hover", "--duration", "1.0",
                         "--controller", "smooth"])
        assert code == 0

    def test_scenario_from_file(self, tmp_path, capsys):
        doc = tmp_path / "custom.yaml"
        doc.write_text(
            "name: custom\nplatform: F450\nduration: 1.0\n"
            "sources:\n  - {id: g, kind: gnss, rate: 10.0}\n")
        assert cli.main(["run", "--scenario", str(doc)]) == 0


class TestValidate:
    def test_bundled_all_validate(self, capsys):
        for name in BUNDLED:
            assert cli.main(["validate", "--scenario", name]) == 0

    def test_invalid_document(self, tmp_path):
        doc = tmp_path / "bad.yaml"
        doc.write_text("platform: Nope\nduration: 5\n"
                       "sources:\n  - {id: g, kind: gnss, rate: 10.0}\n")
        assert cli.main(["validate", "--scenario", str(doc)]) == 1


class TestProfiles:
    def test_lists_six_builtins(self, capsys):
        assert cli.main(["profiles"]) == 0
        out = capsys.readouterr().out
        for name in ("X500", "F450", "T650", "NAKI", "Eagle.One", "DOFEC"):
            assert name in out

    def test_profile_dir_env(self, tmp_path, monkeypatch, capsys):
        (tmp_path / "mine.yaml").write_text(
            "platforms:\n"
            "  HexPrototype:\n"
            "    mass: 1.2\n    battery_capacity: 60.0\n    flight_time: 14.0\n"
            "    dimension: 380.0\n    propeller_size: 9.0\n    rotor_count: 4\n")
        monkeypatch.setenv(cli.PROFILE_DIR_ENV, str(tmp_path))
        assert cli.main(["profiles"]) == 0
        assert "HexPrototype" in capsys.readouterr().out


class TestSummarize:
    def test_round_trip(self, tmp_path, capsys):
        out = tmp_path / "log.csv"
        cli.main(["run", "--scenario", "hover", "--duration", "1.0",
                  "--out", str(out)])
        capsys.readouterr()
        assert cli.main(["summarize", str(out)]) == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["rows"] == 101

    def test_missing_file(self):
        assert cli.main(["summarize", "/no/such/file.csv"]) == 1
