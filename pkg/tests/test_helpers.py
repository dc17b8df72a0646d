from __future__ import annotations

import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from ricciflow_lab import constants
from ricciflow_lab.conformal_balance import WeightedMeasure, uniform_measure
from ricciflow_lab.helpers import Config, ConfigError, cli
from ricciflow_lab.io_formats import write_measure_csv

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"

ROUND_INI = """\
[profile]
kind = round
n_cells = 64

[flow]
t_max = 0.3
output_count = 20

[monitors]
enabled = scalar_bound, width_rate
          hersch

[run]
name = cli-round
"""


def _write(tmp_path: Path, text: str, name: str = "run.ini") -> Path:
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_config_is_validated(tmp_path) -> None:
    config = Config(_write(tmp_path, ROUND_INI))
    run_config = config.run_config
    assert run_config.profile.n_cells == 64
    assert run_config.flow.t_max == 0.3
    assert run_config.monitors == ["scalar_bound", "width_rate", "hersch"]
    assert run_config.run.name == "cli-round"
    assert config.base_dir == tmp_path


@pytest.mark.parametrize("path", sorted(CONFIG_DIR.glob("*.ini")), ids=lambda p: p.name)
def test_shipped_configs_are_valid(path: Path) -> None:
    assert Config(path).run_config is not None


def test_output_times_are_split(tmp_path) -> None:
    text = "[profile]\nkind = round\n[flow]\nt_max = 0.2\noutput_times = 0.05, 0.1 0.2\n"
    config = Config(_write(tmp_path, text))
    assert config.run_config.flow.output_times == [0.05, 0.1, 0.2]


def test_tolerance_overrides(tmp_path) -> None:
    text = "[profile]\nkind = round\n[flow]\nt_max = 0.2\n[tolerances]\ncfl = 0.25\n"
    tolerances = Config(_write(tmp_path, text)).run_config.resolved_tolerances()
    assert tolerances.cfl == 0.25


@pytest.mark.parametrize(
    "text, line",
    [
        ("[profile]\nkind = round\n[flow]\nt_max = -1\n", 4),
        ("[profile]\nkind = cube\n[flow]\nt_max = 1\n", 2),
        ("[profile]\nkind = round\n[flow]\nt_max = 1\n[bogus]\nkey = 1\n", 5),
        ("[profile]\nkind = round\n[flow]\nt_max = 1\n\n[monitors]\nenabled = nope\n", 7),
        ("[profile]\nkind = round\n[flow]\nt_max = 1\n[tolerances]\ncfl = 0.9\n", 5),
        ("[profile]\nkind = round\nkind = round\n[flow]\nt_max = 1\n", 3),
    ],
)
def test_config_errors_point_at_the_line(tmp_path, text: str, line: int) -> None:
    path = _write(tmp_path, text)
    with pytest.raises(ConfigError) as info:
        Config(path)
    assert info.value.line == line
    assert str(info.value).startswith(f"{path}:{line}: ")


def test_config_without_flow_section(tmp_path) -> None:
    with pytest.raises(ConfigError) as info:
        Config(_write(tmp_path, "[profile]\nkind = round\n"))
    assert info.value.line is None


def test_missing_config_file(tmp_path) -> None:
    with pytest.raises(ConfigError):
        Config(tmp_path / "absent.ini")


def test_cli_without_command_prints_help(tmp_path) -> None:
    result = CliRunner().invoke(cli, ["--out", str(tmp_path)], obj={})
    assert result.exit_code == 0
    assert "simulate" in result.output


def test_cli_simulate_and_report(tmp_path) -> None:
    config = _write(tmp_path, ROUND_INI)
    out_dir = tmp_path / "out"
    runner = CliRunner()
    result = runner.invoke(cli, ["--out", str(out_dir), "--quiet", "simulate", str(config)], obj={})
    assert result.exit_code == constants.EXIT_OK, result.output
    assert "extinct" in result.output
    report = json.loads((out_dir / "cli-round" / "report.json").read_text())
    assert report["trajectory"]["termination"] == "extinct"
    assert set(report["monitors"]) == {"scalar_bound", "width_rate", "hersch"}

    result = runner.invoke(cli, ["report", str(out_dir / "cli-round")], obj={})
    assert result.exit_code == constants.EXIT_OK, result.output
    assert "cli-round" in result.output


def test_cli_simulate_bad_config(tmp_path) -> None:
    config = _write(tmp_path, "[profile]\nkind = round\n[flow]\nt_max = -1\n")
    result = CliRunner().invoke(cli, ["--out", str(tmp_path), "simulate", str(config)], obj={})
    assert result.exit_code == constants.EXIT_ERROR


def test_cli_report_without_run(tmp_path) -> None:
    result = CliRunner().invoke(cli, ["report", str(tmp_path)], obj={})
    assert result.exit_code == constants.EXIT_ERROR


def test_cli_balance(tmp_path) -> None:
    measure = write_measure_csv(tmp_path / "measure.csv", uniform_measure(2))
    out_dir = tmp_path / "out"
    result = CliRunner().invoke(cli, ["--out", str(out_dir), "balance", str(measure)], obj={})
    assert result.exit_code == constants.EXIT_OK, result.output
    assert "iterations=0" in result.output
    assert (out_dir / "balance.json").is_file()


def test_cli_balance_rejects_single_atom(tmp_path) -> None:
    atom = WeightedMeasure(nodes=[[0.0, 0.0, 1.0]], weights=[1.0])
    measure = write_measure_csv(tmp_path / "atom.csv", atom)
    result = CliRunner().invoke(cli, ["--out", str(tmp_path), "balance", str(measure)], obj={})
    assert result.exit_code == constants.EXIT_ERROR


def test_cli_balance_reports_non_convergence(tmp_path) -> None:
    nodes = [[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]]
    skewed = WeightedMeasure(nodes=nodes, weights=[0.45, 0.2, 0.2, 0.15])
    measure = write_measure_csv(tmp_path / "skewed.csv", skewed)
    result = CliRunner().invoke(
        cli, ["--out", str(tmp_path), "balance", str(measure), "--tol", "1e-300"], obj={}
    )
    assert result.exit_code == constants.EXIT_VIOLATION
