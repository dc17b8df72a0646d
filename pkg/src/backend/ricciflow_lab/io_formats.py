"""CSV and JSON files written and read by the lab.

Numbers are written with format(value, ".17g") so that a float survives a
round trip bit for bit; missing values are empty fields.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel

from . import constants
from .conformal_balance import WeightedMeasure
from .flow_engine import FlowTrajectory, interior_min_psi
from .profile_geometry import ProfileGrid, SamplesKind, build_profile, curvature
from .width_minmax import WidthSeries

logger = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]
PROFILE_COLUMNS = ("x", "psi", "phi")
MEASURE_COLUMNS = ("nx", "ny", "nz", "weight")


class FileFormatError(ValueError):
    def __init__(self, path: PathLike, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


def format_number(value: Optional[Union[float, int, bool]]) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    if math.isnan(value):
        return ""
    return format(value, ".17g")


def _write_rows(path: PathLike, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [item if isinstance(item, str) else format_number(item) for item in row]
            )
    logger.debug("wrote %s", path)
    return path


def _read_numeric(path: PathLike, columns: Sequence[str]):
    """Return (header_comments, rows, line_numbers) with rows as lists of floats."""
    path = Path(path)
    comments = {}
    rows = []
    line_numbers = []
    with path.open(newline="", encoding="utf-8") as handle:
        header_seen = False
        for line_number, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].partition("=")
                comments[key.strip()] = value.strip()
                continue
            fields = next(csv.reader([line]))
            if not header_seen:
                if tuple(field.strip() for field in fields) != tuple(columns):
                    raise FileFormatError(
                        path, line_number, f"expected header {','.join(columns)}"
                    )
                header_seen = True
                continue
            if len(fields) != len(columns):
                raise FileFormatError(
                    path, line_number, f"expected {len(columns)} fields, got {len(fields)}"
                )
            try:
                rows.append([float(field) for field in fields])
                line_numbers.append(line_number)
            except ValueError as exc:
                raise FileFormatError(path, line_number, f"not a number: {exc}") from exc
    if not header_seen:
        raise FileFormatError(path, 1, "file is empty")
    return comments, rows, line_numbers


def write_profile_snapshot(path: PathLike, profile: ProfileGrid) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        handle.write(f"# n_cells={profile.n_cells}\n")
        handle.write(f"# time={format_number(profile.time)}\n")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(PROFILE_COLUMNS)
        for x, psi, phi in zip(profile.x_centers, profile.psi, profile.phi):
            writer.writerow([format_number(x), format_number(psi), format_number(phi)])
    return path


def read_profile_snapshot(path: PathLike, n_cells: Optional[int] = None) -> ProfileGrid:
    """Read a snapshot; samples off the cell centers are resampled."""
    comments, rows, _ = _read_numeric(path, PROFILE_COLUMNS)
    if not rows:
        raise FileFormatError(path, 1, "snapshot has no rows")
    data = np.array(rows)
    time = float(comments.get("time") or 0.0)
    target = n_cells or int(comments.get("n_cells") or len(rows))
    profile = build_profile(SamplesKind(data[:, 0], data[:, 1], data[:, 2]), target)
    return profile.with_time(time)


def write_trajectory_csv(path: PathLike, trajectory: FlowTrajectory) -> Path:
    rows = []
    last = len(trajectory.states) - 1
    for k, state in enumerate(trajectory.states):
        profile = state.profile
        neck = interior_min_psi(profile)
        rows.append(
            (
                state.time,
                profile.max_psi,
                None if neck is None else neck[0],
                float(np.min(curvature(profile).scalar)),
                profile.total_arclength,
                trajectory.termination.kind if k == last else "",
            )
        )
    return _write_rows(path, constants.trajectory_columns, rows)


def write_width_csv(path: PathLike, series: WidthSeries) -> Path:
    rows = [
        (s.t, s.W, s.x_argmax, s.dq, s.bound_rhs, s.margin, s.neck_area) for s in series.samples
    ]
    return _write_rows(path, constants.width_columns, rows)


def read_measure_csv(path: PathLike) -> WeightedMeasure:
    _, rows, line_numbers = _read_numeric(path, MEASURE_COLUMNS)
    if not rows:
        raise FileFormatError(path, 1, "measure has no rows")
    data = np.array(rows)
    nodes = data[:, :3]
    norms = np.linalg.norm(nodes, axis=1)
    # files carry 17 significant digits; renormalize to the unit sphere
    if np.any(np.abs(norms - 1.0) > 1e-9):
        bad = int(np.argmax(np.abs(norms - 1.0)))
        raise FileFormatError(path, line_numbers[bad], "node is not a unit vector")
    return WeightedMeasure(nodes=nodes / norms[:, None], weights=data[:, 3])


def write_measure_csv(path: PathLike, measure: WeightedMeasure) -> Path:
    rows = [(*node, weight) for node, weight in zip(measure.nodes, measure.weights)]
    return _write_rows(path, MEASURE_COLUMNS, rows)


def write_json(path: PathLike, model: BaseModel) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(model.model_dump_json(indent=2) + "\n", encoding="utf-8")
    return path


def read_json(path: PathLike, model_type: type[BaseModel]) -> BaseModel:
    return model_type.model_validate_json(Path(path).read_text(encoding="utf-8"))
