from __future__ import annotations

import math

import numpy as np
import pytest

from ricciflow_lab import constants
from ricciflow_lab.conformal_balance import WeightedMeasure
from ricciflow_lab.flow_engine import FlowEngine, FlowState
from ricciflow_lab.io_formats import (
    FileFormatError,
    format_number,
    read_measure_csv,
    read_profile_snapshot,
    write_measure_csv,
    write_profile_snapshot,
    write_trajectory_csv,
    write_width_csv,
)
from ricciflow_lab.profile_geometry import DumbbellKind, RoundKind, build_profile
from ricciflow_lab.width_minmax import width_rate_monitor


@pytest.mark.parametrize(
    "value, expected",
    [
        (None, ""),
        (True, "true"),
        (False, "false"),
        (3, "3"),
        (np.int64(7), "7"),
        (0.1, "0.10000000000000001"),
        (float("nan"), ""),
        (-2.5, "-2.5"),
    ],
)
def test_format_number(value, expected: str) -> None:
    assert format_number(value) == expected


def test_snapshot_file_layout(tmp_path) -> None:
    profile = build_profile(RoundKind(1.0), 32).with_time(0.125)
    path = write_profile_snapshot(tmp_path / "snap" / "profile.csv", profile)
    lines = path.read_text().splitlines()
    assert lines[:3] == ["# n_cells=32", "# time=0.125", "x,psi,phi"]
    assert len(lines) == 35

    loaded = read_profile_snapshot(path)
    assert loaded.time == 0.125
    assert np.array_equal(loaded.psi, profile.psi)
    assert np.array_equal(loaded.phi, profile.phi)


def test_snapshot_is_resampled_on_request(tmp_path) -> None:
    path = write_profile_snapshot(tmp_path / "profile.csv", build_profile(RoundKind(1.0), 128))
    loaded = read_profile_snapshot(path, n_cells=64)
    assert loaded.n_cells == 64
    assert np.max(np.abs(loaded.psi - build_profile(RoundKind(1.0), 64).psi)) <= 1e-6


@pytest.mark.parametrize(
    "text, line",
    [
        ("", 1),
        ("x,psi\n", 1),
        ("# time=0\nx,psi,phi\n0.5,1.0\n", 3),
        ("x,psi,phi\n0.5,one,3.14\n", 2),
    ],
)
def test_snapshot_errors_carry_line(tmp_path, text: str, line: int) -> None:
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(FileFormatError) as info:
        read_profile_snapshot(path)
    assert info.value.line == line
    assert str(info.value).startswith(f"{path}:{line}:")


def test_measure_round_trip_and_normalization(tmp_path) -> None:
    nodes = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
    measure = WeightedMeasure(nodes=nodes, weights=np.array([1.0, 2.0, 0.5]))
    path = write_measure_csv(tmp_path / "measure.csv", measure)
    assert path.read_text().splitlines()[0] == "nx,ny,nz,weight"
    loaded = read_measure_csv(path)
    assert np.array_equal(loaded.nodes, nodes)
    assert loaded.total == pytest.approx(3.5)

    path.write_text("nx,ny,nz,weight\n0.6000000001,0.8,0,1\n")
    assert np.linalg.norm(read_measure_csv(path).nodes[0]) == pytest.approx(1.0, abs=1e-15)


def test_measure_rejects_off_sphere_nodes(tmp_path) -> None:
    path = tmp_path / "measure.csv"
    path.write_text("nx,ny,nz,weight\n0,0,1,1\n0.5,0.5,0,1\n")
    with pytest.raises(FileFormatError) as info:
        read_measure_csv(path)
    assert info.value.line == 3


def test_measure_error_line_skips_comments_and_blanks(tmp_path) -> None:
    path = tmp_path / "measure.csv"
    path.write_text("# source=fixture\n\nnx,ny,nz,weight\n0,0,1,1\n\n# next\n0.5,0.5,0,1\n")
    with pytest.raises(FileFormatError) as info:
        read_measure_csv(path)
    assert info.value.line == 7
    assert str(info.value).endswith(":7: node is not a unit vector")


def test_trajectory_and_width_csv(tmp_path) -> None:
    profile = build_profile(RoundKind(1.0), 32)
    trajectory = FlowEngine().evolve(FlowState.initial(profile), 0.3, output_times=[0.1, 0.2])
    path = write_trajectory_csv(tmp_path / "trajectory.csv", trajectory)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(constants.trajectory_columns)
    assert len(lines) == len(trajectory.states) + 1
    assert lines[-1].endswith(",extinct")
    # round profiles have no interior minimum
    assert lines[1].split(",")[2] == ""

    series = width_rate_monitor(trajectory, None)
    path = write_width_csv(tmp_path / "width.csv", series)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(constants.width_columns)
    assert float(lines[1].split(",")[1]) == pytest.approx(4.0 * math.pi, rel=1e-9)


def test_trajectory_csv_reports_neck(tmp_path) -> None:
    profile = build_profile(DumbbellKind(0.3, 1.0), 64)
    trajectory = FlowEngine().evolve(
        FlowState.initial(profile), 1e-3, output_times=[5e-4, 1e-3]
    )
    lines = write_trajectory_csv(tmp_path / "t.csv", trajectory).read_text().splitlines()
    assert float(lines[1].split(",")[2]) == pytest.approx(0.3, abs=2e-2)
    assert lines[-1].endswith(",reached_t_max")
