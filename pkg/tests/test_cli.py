"""
Tests for the command-line surface.
"""

import json
import os

import pytest

from leaptt import __version__
from leaptt.cli import build_parser, main


@pytest.fixture
def config_path(tiny_run_dict, tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(tiny_run_dict), encoding="utf-8")
    return str(path)


class TestParser:
    """Tests for build_parser()."""

    def test_version(self, capsys):
        """Test --version prints the package version."""
        with pytest.raises(SystemExit) as excinfo:
            main(["--version"])
        assert excinfo.value.code == 0
        assert __version__ in capsys.readouterr().out

    def test_command_required(self):
        """Test a subcommand must be given."""
        with pytest.raises(SystemExit):
            build_parser().parse_args([])

    def test_overrides(self):
        """Test the shared options parse."""
        args = build_parser().parse_args(["leap", "--seed", "4", "--out", "x", "--quiet"])
        assert (args.command, args.seed, args.out, args.quiet) == ("leap", 4, "x", True)


class TestExitCodes:
    """Tests for main() exit codes."""

    def test_missing_config(self, tmp_path, capsys):
        """Test an unreadable config is an input error."""
        assert main(["gen-data", "--config", str(tmp_path / "absent.json")]) == 2
        assert "Error:" in capsys.readouterr().err

    def test_unknown_config_field(self, tiny_run_dict, tmp_path):
        """Test a config with an unknown field is an input error."""
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(dict(tiny_run_dict, epochs=3)), encoding="utf-8")
        assert main(["gen-data", "--config", str(path)]) == 2

    def test_divergence_is_numeric(self, tiny_run_dict, tmp_path):
        """Test a diverging stage exits with the numeric code."""
        data = dict(tiny_run_dict)
        data["finetune"] = dict(data["finetune"], divergence_threshold=1e-9)
        path = tmp_path / "diverge.json"
        path.write_text(json.dumps(data), encoding="utf-8")
        assert main(["finetune", "--config", str(path), "--quiet"]) == 3


class TestCommands:
    """Tests for the individual commands."""

    def test_gen_data(self, config_path, tmp_path, capsys):
        """Test corpus generation prints split sizes and writes the corpus."""
        out = str(tmp_path / "data-run")
        assert main(["gen-data", "--config", config_path, "--out", out, "--quiet"]) == 0
        assert "train=" in capsys.readouterr().out
        assert os.path.exists(os.path.join(out, "corpus"))
        assert os.path.exists(os.path.join(out, "resolved_config.json"))

    def test_stage_by_stage(self, config_path, tmp_path, capsys):
        """Test running stages one at a time builds the checkpoint chain."""
        out = str(tmp_path / "staged")
        for command in ["pretrain-ssl", "leap", "finetune"]:
            assert main([command, "--config", config_path, "--out", out, "--quiet"]) == 0
        for name in ["init.ckpt", "ssl.ckpt", "leap.ckpt", "final.ckpt"]:
            assert os.path.exists(os.path.join(out, name))

        capsys.readouterr()
        assert main(["evaluate", "--config", config_path, "--out", out, "--quiet"]) == 0
        report = json.loads(capsys.readouterr().out)
        assert [loc["locale"] for loc in report["locales"]] == ["lang0", "lang1"]

    def test_recipe_and_plot(self, config_path, tmp_path, capsys):
        """Test the full recipe prints its lineage and plot renders its metrics."""
        out = str(tmp_path / "full")
        assert main(["recipe", "--config", config_path, "--out", out, "--quiet"]) == 0
        printed = capsys.readouterr().out
        assert printed.splitlines()[0].startswith("finetune")
        assert "overall WER" in printed

        assert main(["plot", "--config", config_path, "--out", out, "--quiet"]) == 0
        assert os.path.exists(os.path.join(out, "metrics.svg"))
        assert os.path.exists(os.path.join(out, "metrics.csv"))
