from __future__ import annotations

import pytest

from ricciflow_lab.tolerances import DEFAULTS, normalize_overrides, resolve_tolerances


def test_defaults_without_overrides() -> None:
    assert resolve_tolerances() is DEFAULTS
    assert resolve_tolerances({}) is DEFAULTS
    assert DEFAULTS.cfl == 0.4
    assert DEFAULTS.max_monotone_halvings == 8


def test_overrides_are_normalized() -> None:
    overrides = normalize_overrides(
        {" CFL ": "0.25", "max_monotone_halvings": "3", "rate_rel": 0.05, "time_rel": None}
    )
    assert overrides == {"cfl": 0.25, "max_monotone_halvings": 3, "rate_rel": 0.05}
    assert isinstance(overrides["max_monotone_halvings"], int)


def test_resolve_applies_overrides() -> None:
    tolerances = resolve_tolerances({"cfl": 0.2})
    assert tolerances.cfl == 0.2
    assert tolerances.rate_rel == DEFAULTS.rate_rel
    assert DEFAULTS.cfl == 0.4


def test_monotone_tolerance_scales_with_initial_min_r() -> None:
    assert DEFAULTS.monotone_tolerance(-100.0) == pytest.approx(1e-4 + 1e-10)
    assert DEFAULTS.monotone_tolerance(0.0) == pytest.approx(1e-10)


def test_non_dict_payload_is_ignored() -> None:
    assert normalize_overrides(["cfl"]) == {}


@pytest.mark.parametrize(
    "payload",
    [
        {"unknown_key": 1.0},
        {"cfl": 0.6},
        {"cfl": -0.1},
        {"cfl": 0},
        {"cfl": "fast"},
        {"cfl": ""},
        {"cfl": True},
        {"rate_rel": float("nan")},
        {"max_monotone_halvings": 2.5},
        {"pinch_ratio": 2.0},
    ],
)
def test_invalid_overrides(payload) -> None:
    with pytest.raises(ValueError):
        normalize_overrides(payload)
