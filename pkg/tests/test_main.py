from __future__ import annotations

import json
import logging
import math
from dataclasses import replace

import pytest

from ricciflow_lab import main
from ricciflow_lab.conformal_balance import uniform_measure
from ricciflow_lab.flow_engine import FlowState, FlowTrajectory, Termination
from ricciflow_lab.io_formats import write_measure_csv
from ricciflow_lab.models import MonitorVerdict, RunConfig


def _round_config(**flow) -> RunConfig:
    return RunConfig.model_validate(
        {
            "profile": {"kind": "round", "n_cells": 64},
            "flow": {"t_max": 0.3, "output_count": 20, **flow},
            "run": {"name": "round-unit"},
        }
    )


@pytest.fixture(scope="module")
def round_report(tmp_path_factory):
    out_dir = tmp_path_factory.mktemp("runs")
    return out_dir, main.run_simulate(_round_config(), out_dir)


def test_round_run_passes(round_report) -> None:
    _, report = round_report
    assert report.trajectory.termination == "extinct"
    assert report.trajectory.termination_time == pytest.approx(0.25, rel=1e-2)
    assert report.certificate.policy == "nonnegative_minR"
    assert report.certificate.T_star == pytest.approx(1.0, rel=1e-6)
    assert report.certificate.sound is True
    assert set(report.monitors) == {"scalar_bound", "width_rate", "monotone", "neck", "hersch"}
    assert report.passed, {name: v.detail for name, v in report.monitors.items()}
    assert report.monitors["monotone"].checked == 0
    assert report.monitors["neck"].detail == "no stable neck"
    assert not main.run_failed(report)


def test_round_run_writes_files(round_report) -> None:
    out_dir, report = round_report
    run_dir = out_dir / "round-unit"
    for name in (
        "trajectory.csv",
        "width.csv",
        "profile_initial.csv",
        "profile_final.csv",
        "certificate.json",
        "report.json",
    ):
        assert (run_dir / name).is_file(), name
    assert set(report.files) == {
        "trajectory",
        "width",
        "initial_profile",
        "final_profile",
        "certificate",
        "report",
    }
    certificate = json.loads((run_dir / "certificate.json").read_text())
    assert certificate["sound"] is True
    assert "extinction_time" in certificate["margins_summary"]


def test_load_report_round_trip(round_report) -> None:
    out_dir, report = round_report
    loaded = main.load_report(out_dir / "round-unit")
    assert loaded.name == report.name
    assert loaded.certificate == report.certificate
    assert loaded.monitors == report.monitors


def test_run_failed_on_violation(round_report) -> None:
    _, report = round_report
    monitors = dict(report.monitors)
    monitors["width_rate"] = MonitorVerdict(
        name="width_rate", passed=False, checked=3, violations=1
    )
    assert main.run_failed(report.model_copy(update={"monitors": monitors}))
    unsound = report.certificate.model_copy(update={"sound": False})
    assert main.run_failed(report.model_copy(update={"certificate": unsound}))
    summary = report.trajectory.model_copy(update={"termination": "degenerate"})
    assert main.run_failed(report.model_copy(update={"trajectory": summary}))


def test_report_carries_width_series(round_report) -> None:
    _, report = round_report
    assert len(report.width) == report.trajectory.snapshots
    assert report.width[0].t == 0.0
    assert report.width[0].W == pytest.approx(4.0 * math.pi, rel=1e-3)
    assert report.width[-1].dq is None
    assert all(point.dq is not None for point in report.width[:-1])


def test_degenerate_flow_fails_coverage_monitors(tmp_path, monkeypatch) -> None:
    def broken_flow(profile, *args):
        state = FlowState.initial(profile)
        later = replace(state, profile=profile.with_time(0.01))
        return FlowTrajectory((state, later), Termination("degenerate", 0.01))

    monkeypatch.setattr(main, "evolve_profile", broken_flow)
    report = main.run_simulate(_round_config(), tmp_path)
    assert report.trajectory.termination == "degenerate"
    for name in main.COVERAGE_MONITORS:
        assert not report.monitors[name].passed
        assert report.monitors[name].detail.startswith("flow degenerated")
    assert report.certificate.sound is False
    assert not report.passed
    assert main.run_failed(report)


def test_selected_monitors_only(tmp_path) -> None:
    config = _round_config(t_max=0.05).model_copy(update={"monitors": ["scalar_bound"]})
    report = main.run_simulate(config, tmp_path)
    assert list(report.monitors) == ["scalar_bound"]
    assert report.trajectory.termination == "reached_t_max"
    assert report.certificate.sound is None


def test_samples_profile_is_resolved_against_config_dir(tmp_path, round_report) -> None:
    out_dir, _ = round_report
    snapshot = out_dir / "round-unit" / "profile_initial.csv"
    (tmp_path / "snap.csv").write_bytes(snapshot.read_bytes())
    config = RunConfig.model_validate(
        {
            "profile": {"kind": "samples", "file": "snap.csv", "n_cells": 64},
            "flow": {"t_max": 0.01, "output_count": 2},
        }
    )
    profile = main.load_profile(config.profile, tmp_path)
    assert profile.n_cells == 64
    assert profile.max_psi == pytest.approx(1.0, rel=1e-3)


def test_run_balance_writes_record(tmp_path) -> None:
    path = write_measure_csv(tmp_path / "measure.csv", uniform_measure(2))
    record = main.run_balance(path, 1e-8, tmp_path / "out")
    assert record.iterations == 0
    assert record.nodes == 162
    assert json.loads((tmp_path / "out" / "balance.json").read_text())["t"] == 0.0


def test_env_helpers(monkeypatch) -> None:
    monkeypatch.setenv("RFLAB_TEST_FLAG", " Yes ")
    assert main._as_bool(main._get_env("RFLAB_TEST_FLAG"))
    assert main._as_bool(None, True)
    assert not main._as_bool("off", True)
    monkeypatch.delenv("RFLAB_TEST_FLAG")
    assert main._get_env("RFLAB_TEST_FLAG", "fallback") == "fallback"


def test_configure_logging_levels() -> None:
    root = logging.getLogger()
    level = root.level
    handler_levels = [(handler, handler.level) for handler in root.handlers]
    try:
        main._configure_logging(debug=False, quiet=True)
        assert root.level == logging.WARNING
        main._configure_logging(debug=True, quiet=True)
        assert root.level == logging.DEBUG
    finally:
        root.setLevel(level)
        for handler, handler_level in handler_levels:
            handler.setLevel(handler_level)
