from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field, field_validator, model_validator

from . import constants
from .profile_geometry import (
    DumbbellKind,
    PerturbedRoundKind,
    ProfileKind,
    RandomKind,
    RoundKind,
)
from .tolerances import Tolerances, normalize_overrides, resolve_tolerances


class ProfileSpec(BaseModel):
    kind: str = "round"
    n_cells: int = Field(default=256, ge=constants.MIN_CELLS)
    radius: float = Field(default=1.0, gt=0)
    neck: Optional[float] = Field(default=None, gt=0)
    lobe: Optional[float] = Field(default=None, gt=0)
    neck_stretch: float = Field(default=1.0, gt=0)
    seed: int = 0
    modes: int = Field(default=3, ge=1, le=8)
    target_min_R: float = Field(default=-1.0, lt=0)
    file: Optional[str] = None

    @field_validator("kind")
    @classmethod
    def validate_kind(cls, value: str) -> str:
        value = value.strip().lower()
        if value not in constants.profile_kinds:
            raise ValueError(f"Invalid profile kind: {value}")
        return value

    @model_validator(mode="after")
    def check_kind_fields(self) -> "ProfileSpec":
        if self.kind == "dumbbell":
            if self.neck is None or self.lobe is None:
                raise ValueError("dumbbell profiles need neck and lobe")
            if self.neck >= self.lobe:
                raise ValueError("dumbbell neck must be smaller than lobe")
        if self.kind == "samples" and not self.file:
            raise ValueError("samples profiles need a file")
        return self

    def to_kind(self) -> ProfileKind:
        """Profile request for every kind except samples, which io_formats reads."""
        if self.kind == "round":
            return RoundKind(self.radius)
        if self.kind == "dumbbell":
            return DumbbellKind(self.neck, self.lobe, self.neck_stretch)
        if self.kind == "random":
            return RandomKind(self.seed, self.modes)
        if self.kind == "perturbed_round":
            return PerturbedRoundKind(self.target_min_R, self.neck_stretch)
        raise ValueError("samples profiles are loaded from their file")


class FlowSpec(BaseModel):
    t_max: float = Field(ge=0)
    output_times: Optional[list[float]] = None
    output_stride: Optional[int] = Field(default=None, ge=1)
    output_count: int = Field(default=constants.DEFAULT_OUTPUT_COUNT, ge=2)
    max_steps: Optional[int] = Field(default=None, ge=1)

    @field_validator("output_times")
    @classmethod
    def validate_output_times(cls, value: Optional[list[float]]) -> Optional[list[float]]:
        if value is None:
            return value
        if any(t < 0 for t in value):
            raise ValueError("output times must be non-negative")
        if any(later <= earlier for earlier, later in zip(value, value[1:])):
            raise ValueError("output times must be strictly increasing")
        return value


class RunSettings(BaseModel):
    name: str = Field(default="run", min_length=1)
    seed: int = 0
    workers: int = Field(default=1, ge=1)
    fleet_random: int = Field(default=20, ge=0)
    fleet_cells: int = Field(default=64, ge=constants.MIN_CELLS)
    balance_level: int = Field(default=constants.DEFAULT_BALANCE_LEVEL, ge=1, le=6)

    @field_validator("name")
    @classmethod
    def validate_name(cls, value: str) -> str:
        value = value.strip()
        if not value or any(sep in value for sep in "/\\"):
            raise ValueError("run name must be a plain, non-empty name")
        return value


class RunConfig(BaseModel):
    profile: ProfileSpec
    flow: FlowSpec
    monitors: list[str] = Field(default_factory=lambda: list(constants.monitor_names))
    tolerances: dict[str, float] = Field(default_factory=dict)
    run: RunSettings = Field(default_factory=RunSettings)

    @field_validator("monitors")
    @classmethod
    def validate_monitors(cls, value: list[str]) -> list[str]:
        cleaned = []
        for name in value:
            name = name.strip().lower()
            if name not in constants.monitor_names:
                raise ValueError(f"Invalid monitor: {name}")
            if name not in cleaned:
                cleaned.append(name)
        return cleaned

    @field_validator("tolerances")
    @classmethod
    def validate_tolerances(cls, value: dict[str, float]) -> dict[str, float]:
        return normalize_overrides(value)

    def resolved_tolerances(self) -> Tolerances:
        return resolve_tolerances(self.tolerances)


class MonitorVerdict(BaseModel):
    name: str
    passed: bool
    checked: int = Field(ge=0)
    violations: int = Field(ge=0)
    worst_margin: Optional[float] = None
    detail: str = ""


class TrajectorySummary(BaseModel):
    termination: str
    termination_time: float
    termination_x: Optional[float] = None
    snapshots: int
    steps: int
    dt_last: float
    initial_min_R: float
    final_max_psi: float


class WidthPoint(BaseModel):
    t: float
    W: float
    x_argmax: float
    min_R: float
    dq: Optional[float] = None
    bound_rhs: Optional[float] = None
    margin: Optional[float] = None


class CertificateRecord(BaseModel):
    C: Optional[float] = None
    W0: float
    T_star: float
    policy: str
    simulated_extinction: Optional[float] = None
    sound: Optional[bool] = None
    margins_summary: dict[str, Optional[float]] = Field(default_factory=dict)

    @field_validator("policy")
    @classmethod
    def validate_policy(cls, value: str) -> str:
        if value not in (constants.NEGATIVE_POLICY, constants.NONNEGATIVE_POLICY):
            raise ValueError(f"Invalid policy: {value}")
        return value


class RunReport(BaseModel):
    name: str
    version: str
    config: RunConfig
    trajectory: TrajectorySummary
    certificate: CertificateRecord
    monitors: dict[str, MonitorVerdict] = Field(default_factory=dict)
    width: list[WidthPoint] = Field(default_factory=list)
    files: dict[str, str] = Field(default_factory=dict)

    @property
    def violations(self) -> int:
        return sum(verdict.violations for verdict in self.monitors.values())

    @property
    def passed(self) -> bool:
        return all(verdict.passed for verdict in self.monitors.values())


class BalanceRecord(BaseModel):
    center: list[float]
    t: float
    residual: float
    iterations: int
    nodes: int


class SuiteResult(BaseModel):
    name: str
    passed: bool
    checked: int = 0
    worst_margin: Optional[float] = None
    detail: str = ""


class CheckSummary(BaseModel):
    seed: int
    suites: list[SuiteResult]

    @property
    def passed(self) -> bool:
        return all(suite.passed for suite in self.suites)
