"""End-to-end tests of the kkstab command line interface."""

import configparser
import json
import subprocess
import sys

import pytest

from kkstab.cli import main


def run_cli(args, tmp_path, name):
    out = tmp_path / name
    code = main(args + ["--out", str(out)])
    return code, out


class TestVerify:
    def test_trivial_suite_passes(self, tmp_path):
        code, out = run_cli(["verify", "--suite", "trivial"], tmp_path, "v")
        assert code == 0
        report = json.loads((out / "verify-report.json").read_text())
        assert report["suite"] == "trivial"
        assert all(c["ok"] for c in report["checks"])
        assert len(report["checks"]) >= 5


class TestSpectrum:
    def test_default_run(self, tmp_path):
        code, out = run_cli(["spectrum", "--lmax", "3"], tmp_path, "s")
        assert code == 0
        first = (out / "spectrum.txt").read_text().splitlines()[0]
        assert first == "internal-spectrum v1 d=2"
        report = json.loads((out / "spectrum-report.json").read_text())
        assert report["linearly_stable"] is True
        assert report["min_eigenvalue"] == 0.0

    def test_unstable_input_exit_1(self, tmp_path):
        spec = tmp_path / "bad-spec.txt"
        spec.write_text("internal-spectrum v1 d=2\n-1.0 1\n0.0 3\n")
        code, out = run_cli(["spectrum", "--spectrum-file", str(spec)],
                            tmp_path, "u")
        assert code == 1

    def test_malformed_file_exit_2_with_line(self, tmp_path, capsys):
        spec = tmp_path / "mangled.txt"
        spec.write_text("internal-spectrum v1 d=2\n0.0 3\nnot numbers here\n")
        code, _ = run_cli(["spectrum", "--spectrum-file", str(spec)],
                          tmp_path, "m")
        assert code == 2
        assert "line 3" in capsys.readouterr().err

    def test_resolved_config_written(self, tmp_path):
        _, out = run_cli(["spectrum", "--lmax", "2"], tmp_path, "rc")
        cp = configparser.ConfigParser()
        cp.read(out / "resolved-config.ini")
        assert cp["spectrum"]["lmax"] == "2"
        assert cp.has_option("tool", "version")


class TestEvolve:
    def test_deterministic_byte_identical(self, tmp_path):
        args = ["evolve", "--n", "3", "--lambda", "0", "--t-end", "10",
                "--dr", "0.0625"]
        _, out1 = run_cli(list(args), tmp_path, "a")
        _, out2 = run_cli(list(args), tmp_path, "b")
        names1 = sorted(p.name for p in out1.iterdir())
        assert names1 == sorted(p.name for p in out2.iterdir())
        for name in names1:
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name

    def test_outputs_present(self, tmp_path):
        code, out = run_cli(["evolve", "--n", "3", "--lambda", "0",
                             "--t-end", "10", "--dr", "0.0625"], tmp_path, "o")
        assert code == 0
        assert (out / "monitors.csv").exists()
        assert (out / "final-field.bin").exists()
        assert (out / "evolve-report.json").exists()


class TestConfigPrecedence:
    def test_env_overrides_default(self, tmp_path, monkeypatch):
        monkeypatch.setenv("KKSTAB_LMAX", "2")
        _, out = run_cli(["spectrum"], tmp_path, "env")
        cp = configparser.ConfigParser()
        cp.read(out / "resolved-config.ini")
        assert cp["spectrum"]["lmax"] == "2"

    def test_flag_overrides_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("KKSTAB_LMAX", "2")
        _, out = run_cli(["spectrum", "--lmax", "4"], tmp_path, "fe")
        cp = configparser.ConfigParser()
        cp.read(out / "resolved-config.ini")
        assert cp["spectrum"]["lmax"] == "4"

    def test_config_file_section(self, tmp_path):
        ini = tmp_path / "conf.ini"
        ini.write_text("[spectrum]\nlmax = 3\nperiods = 1,2\n")
        _, out = run_cli(["spectrum", "--config", str(ini)], tmp_path, "cf")
        cp = configparser.ConfigParser()
        cp.read(out / "resolved-config.ini")
        assert cp["spectrum"]["lmax"] == "3"
        assert cp["spectrum"]["periods"] == "1,2"

    def test_missing_config_usage_error(self, tmp_path, capsys):
        code = main(["spectrum", "--config", str(tmp_path / "absent.ini"),
                     "--out", str(tmp_path / "x")])
        assert code == 2
        assert "not found" in capsys.readouterr().err


class TestUsage:
    def test_no_subcommand_exit_2(self, capsys):
        assert main([]) == 2

    def test_unknown_flag_exit_2(self, capsys):
        assert main(["spectrum", "--does-not-exist", "1"]) == 2

    def test_version_flag(self, capsys):
        assert main(["--version"]) == 0


class TestConsoleScript:
    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "kkstab.cli", "--version"],
                              capture_output=True, text=True)
        assert proc.returncode == 0
