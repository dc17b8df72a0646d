from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from typing import Any, Dict, Optional

from . import constants

ToleranceDict = Dict[str, float]


@dataclass(frozen=True)
class Tolerances:
    cfl: float = constants.CFL
    extinction_ratio: float = constants.EXTINCTION_RATIO
    pinch_ratio: float = constants.PINCH_RATIO
    psi_floor_ratio: float = constants.PSI_FLOOR_RATIO
    dt_underflow_ratio: float = constants.DT_UNDERFLOW_RATIO
    neck_resolution_cells: float = constants.NECK_RESOLUTION_CELLS
    monotone_rel: float = constants.MONOTONE_REL
    monotone_abs: float = constants.MONOTONE_ABS
    max_monotone_halvings: int = constants.MAX_MONOTONE_HALVINGS
    minimal_rel: float = constants.MINIMAL_REL
    bisection_rel: float = constants.BISECTION_REL
    rate_rel: float = constants.RATE_REL
    time_rel: float = constants.TIME_REL
    scalar_rel: float = constants.SCALAR_REL
    identity_tol: float = constants.IDENTITY_TOL
    hersch_tol: float = constants.HERSCH_TOL
    spectrum_zero: float = constants.SPECTRUM_ZERO
    width_tie_rtol: float = constants.WIDTH_TIE_RTOL
    balance_max_iterations: int = constants.BALANCE_MAX_ITERATIONS
    atomic_ratio: float = constants.ATOMIC_RATIO
    energy_rel: float = constants.ENERGY_REL

    def monotone_tolerance(self, initial_min_r: float) -> float:
        return self.monotone_rel * abs(initial_min_r) + self.monotone_abs


DEFAULTS = Tolerances()

INTEGER_KEYS = {"max_monotone_halvings", "balance_max_iterations"}
ALLOWED_KEYS = {item.name for item in fields(Tolerances)}
# cfl above one half makes the explicit step unstable for the diffusive mode
UPPER_LIMITS = {"cfl": 0.5, "extinction_ratio": 1.0, "pinch_ratio": 1.0}


def _normalize_number(key: str, value: Any) -> float | int:
    if isinstance(value, bool):
        raise ValueError(f"Invalid tolerance {key}: {value!r}")
    if isinstance(value, str):
        value = value.strip()
        if not value:
            raise ValueError(f"Invalid tolerance {key}: empty value")
    try:
        number = float(value)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"Invalid tolerance {key}: {value!r}") from exc
    if not math.isfinite(number) or number <= 0:
        raise ValueError(f"Tolerance {key} must be a positive finite number")
    limit = UPPER_LIMITS.get(key)
    if limit is not None and number > limit:
        raise ValueError(f"Tolerance {key} must not exceed {limit}")
    if key in INTEGER_KEYS:
        if number != int(number):
            raise ValueError(f"Tolerance {key} must be an integer")
        return int(number)
    return number


def normalize_overrides(payload: Any) -> ToleranceDict:
    if not isinstance(payload, dict):
        return {}
    normalized: ToleranceDict = {}
    for key, raw_value in payload.items():
        name = str(key).strip().lower()
        if name not in ALLOWED_KEYS:
            raise ValueError(f"Unknown tolerance: {key}")
        if raw_value is None:
            continue
        normalized[name] = _normalize_number(name, raw_value)
    return normalized


def resolve_tolerances(overrides: Optional[ToleranceDict] = None) -> Tolerances:
    overrides = normalize_overrides(overrides or {})
    if not overrides:
        return DEFAULTS
    return replace(DEFAULTS, **overrides)
