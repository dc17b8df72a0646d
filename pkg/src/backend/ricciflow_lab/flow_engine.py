"""Explicit Ricci flow of the reduced metric.

Under Ricci flow the profile evolves by

    psi_t = psi_ss - (1 - psi_s^2) / psi
    phi_t = 2 (psi_ss / psi) phi

which is the diagonal of -2 Ric written in the reduced variables. The
stepper adds the DeTurck term L_W g, with W measured against the round
metric, so that phi diffuses instead of drifting freely. It moves points
along the axis and leaves every invariant of the geometry unchanged.

Steps are second-order Runge-Kutta (midpoint) under a parabolic time-step
limit, with step halving whenever positivity or the min R floor fails.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Iterable, List, Optional, Protocol, Tuple

import numpy as np

from . import constants
from .profile_geometry import (
    DegenerateProfileError,
    ProfileGrid,
    cell_centers,
    check_psi_floor,
    curvature,
    grid_derivatives,
    min_scalar,
)
from .tolerances import DEFAULTS, Tolerances

logger = logging.getLogger(__name__)


class StepTracer(Protocol):
    def on_step_accepted(self, state: "FlowState", dt: float) -> None: ...

    def on_step_rejected(self, state: "FlowState", dt: float, reason: str) -> None: ...


@dataclass(frozen=True, eq=False)
class FlowState:
    profile: ProfileGrid
    step_count: int
    dt_last: float
    min_R_history_floor: float
    tol_monotone: float

    @property
    def time(self) -> float:
        return self.profile.time

    @classmethod
    def initial(cls, profile: ProfileGrid, tolerances: Tolerances = DEFAULTS) -> "FlowState":
        check_psi_floor(profile, tolerances.psi_floor_ratio)
        min_r = min_scalar(profile)
        return cls(
            profile=profile,
            step_count=0,
            dt_last=0.0,
            min_R_history_floor=min_r,
            tol_monotone=tolerances.monotone_tolerance(min_r),
        )


@dataclass(frozen=True)
class Termination:
    kind: str
    time: float
    x: Optional[float] = None

    def __post_init__(self) -> None:
        if self.kind not in constants.termination_kinds:
            raise ValueError(f"Invalid termination kind: {self.kind}")


@dataclass(frozen=True, eq=False)
class FlowTrajectory:
    states: Tuple[FlowState, ...]
    termination: Termination

    def __post_init__(self) -> None:
        times = [state.time for state in self.states]
        if not times:
            raise ValueError("trajectory needs at least one state")
        if any(later <= earlier for earlier, later in zip(times, times[1:])):
            raise ValueError("trajectory states must be strictly increasing in time")

    @property
    def times(self) -> np.ndarray:
        return np.array([state.time for state in self.states])

    @property
    def final(self) -> FlowState:
        return self.states[-1]


@dataclass(frozen=True)
class BoundVerdict:
    time: float
    min_R: float
    bound: float
    margin: float
    tolerance: float
    resolved: bool = True

    @property
    def ok(self) -> bool:
        return not self.resolved or self.margin >= -self.tolerance


def pointwise_rhs(psi, psi_s, psi_ss):
    """Return (psi_t, phi_t / phi) from the arclength jet of psi."""
    psi_t = psi_ss - (1.0 - psi_s**2) / psi
    lapse_rate = 2.0 * psi_ss / psi
    return psi_t, lapse_rate


def rhs(profile: ProfileGrid, psi_floor_ratio: float = constants.PSI_FLOOR_RATIO):
    check_psi_floor(profile, psi_floor_ratio)
    psi_s, psi_ss = grid_derivatives(profile)
    psi_t, lapse_rate = pointwise_rhs(profile.psi, psi_s, psi_ss)
    # isotropic limit in the pole cells: psi_t = 2 psi_ss
    psi_t[0] = 2.0 * psi_ss[0]
    psi_t[-1] = 2.0 * psi_ss[-1]
    return psi_t, lapse_rate * profile.phi


@lru_cache(maxsize=16)
def _round_reference(n_cells: int) -> np.ndarray:
    """psi_hat psi_hat_x / phi_hat^2 of the unit-lapse round metric on the inner faces."""
    psi_hat = np.sin(np.pi * cell_centers(n_cells))
    faces = 0.5 * (psi_hat[:-1] + psi_hat[1:])
    reference = faces * np.diff(psi_hat) * n_cells / np.pi**2
    reference.setflags(write=False)
    return reference


def gauge_field(profile: ProfileGrid) -> np.ndarray:
    """DeTurck vector field W^x on the n + 1 faces, zero at both poles.

    W^x = g^ij (Gamma^x_ij - Gamma_hat^x_ij) against the round metric
    sin(pi x), pi dx. It vanishes identically on round profiles of any radius.
    """
    dx = profile.dx
    psi, phi = profile.psi, profile.phi
    psi_f = 0.5 * (psi[:-1] + psi[1:])
    phi_f = 0.5 * (phi[:-1] + phi[1:])
    slope = np.diff(psi) / (dx * phi_f)
    phi_x = np.diff(phi) / dx
    inner = (
        phi_x / phi_f**3
        - 2.0 * slope / (psi_f * phi_f)
        + 2.0 * _round_reference(profile.n_cells) / psi_f**2
    )
    return np.concatenate([[0.0], inner, [0.0]])


def gauge_rhs(profile: ProfileGrid) -> Tuple[np.ndarray, np.ndarray]:
    """(psi_t, phi_t) of the Lie derivative L_W g."""
    dx = profile.dx
    w_faces = gauge_field(profile)
    w_cells = 0.5 * (w_faces[:-1] + w_faces[1:])
    psi_s, _ = grid_derivatives(profile)
    psi_t = w_cells * psi_s * profile.phi

    phi_e = np.concatenate([profile.phi[:1], profile.phi, profile.phi[-1:]])
    phi_f = 0.5 * (phi_e[:-1] + phi_e[1:])
    phi_t = np.diff(phi_f * w_faces) / dx
    return psi_t, phi_t


def flow_rhs(profile: ProfileGrid, psi_floor_ratio: float = constants.PSI_FLOOR_RATIO):
    """Ricci flow plus the DeTurck term."""
    psi_t, phi_t = rhs(profile, psi_floor_ratio)
    gauge_psi, gauge_phi = gauge_rhs(profile)
    return psi_t + gauge_psi, phi_t + gauge_phi


def interior_min_psi(profile: ProfileGrid) -> Optional[Tuple[float, int]]:
    """Smallest strict interior local minimum of psi, if any."""
    psi = profile.psi
    inner = np.flatnonzero((psi[1:-1] < psi[:-2]) & (psi[1:-1] <= psi[2:])) + 1
    if inner.size == 0:
        return None
    best = int(inner[np.argmin(psi[inner])])
    return float(psi[best]), best


def neck_resolved(profile: ProfileGrid, tolerances: Tolerances = DEFAULTS) -> bool:
    """False once a neck is thinner than a few local cell widths."""
    neck = interior_min_psi(profile)
    if neck is None:
        return True
    value, cell = neck
    return value >= tolerances.neck_resolution_cells * profile.phi[cell] * profile.dx


class FlowEngine:
    def __init__(self, tolerances: Tolerances = DEFAULTS, tracer: Optional[StepTracer] = None):
        self.tolerances = tolerances
        self.tracer = tracer

    def stable_dt(self, profile: ProfileGrid) -> float:
        """Parabolic limit per cell, tightened where psi is comparable to the cell width.

        The advective limit of the DeTurck term applies on top.
        """
        h = profile.phi * profile.dx
        dt = self.tolerances.cfl * float(np.min(h * h / (1.0 + h / profile.psi)))
        speed = float(np.max(np.abs(gauge_field(profile))))
        if speed > 0:
            dt = min(dt, self.tolerances.cfl * profile.dx / speed)
        return dt

    def advance(self, profile: ProfileGrid, dt: float, gauge: bool = True) -> ProfileGrid:
        floor = self.tolerances.psi_floor_ratio
        field = flow_rhs if gauge else rhs
        k1_psi, k1_phi = field(profile, floor)
        midpoint = ProfileGrid(
            psi=profile.psi + 0.5 * dt * k1_psi,
            phi=profile.phi + 0.5 * dt * k1_phi,
            time=profile.time + 0.5 * dt,
        )
        k2_psi, k2_phi = field(midpoint, floor)
        candidate = ProfileGrid(
            psi=profile.psi + dt * k2_psi,
            phi=profile.phi + dt * k2_phi,
            time=profile.time + dt,
        )
        check_psi_floor(candidate, floor)
        return candidate

    def step(self, state: FlowState, dt_request: float) -> FlowState:
        """Advance by at most dt_request.

        Raises DegenerateProfileError when the step underflows or when the
        min R floor still fails after the allowed number of halvings.
        """
        if dt_request < 0:
            raise ValueError("dt_request must be non-negative")
        if dt_request == 0:
            return state
        tol = self.tolerances
        profile = state.profile
        dt = min(dt_request, self.stable_dt(profile))
        underflow = tol.dt_underflow_ratio * profile.total_arclength**2
        w_faces = gauge_field(profile)
        w_cells = 0.5 * (w_faces[:-1] + w_faces[1:])
        halvings = 0

        while True:
            if dt < underflow:
                raise DegenerateProfileError(
                    f"time step underflow at t={profile.time:.6g} (dt={dt:.3e})"
                )
            try:
                candidate = self.advance(profile, dt)
            except DegenerateProfileError as exc:
                self._rejected(state, dt, f"positivity: {exc}")
                dt *= 0.5
                continue

            scalar = curvature(candidate, tol.psi_floor_ratio).scalar
            # min R at the points the gauge moved onto the old cell centers
            carried = scalar - dt * w_cells * np.gradient(scalar, candidate.dx)
            min_carried = float(np.min(carried))
            if min_carried < state.min_R_history_floor - state.tol_monotone and neck_resolved(
                candidate, tol
            ):
                if halvings >= tol.max_monotone_halvings:
                    raise DegenerateProfileError(
                        f"min R fell from {state.min_R_history_floor:.9g} to "
                        f"{min_carried:.9g} at t={candidate.time:.6g} after {halvings} halvings"
                    )
                self._rejected(state, dt, f"min R fell to {min_carried:.6g}")
                halvings += 1
                dt *= 0.5
                continue

            accepted = replace(
                state,
                profile=candidate,
                step_count=state.step_count + 1,
                dt_last=dt,
                min_R_history_floor=max(state.min_R_history_floor, float(np.min(scalar))),
            )
            if self.tracer is not None:
                self.tracer.on_step_accepted(accepted, dt)
            return accepted

    def _rejected(self, state: FlowState, dt: float, reason: str) -> None:
        if self.tracer is not None:
            self.tracer.on_step_rejected(state, dt, reason)

    def _classify(self, profile: ProfileGrid, initial_max_psi: float) -> Optional[Termination]:
        tol = self.tolerances
        max_psi = profile.max_psi
        if max_psi < tol.extinction_ratio * initial_max_psi:
            return Termination("extinct", profile.time)
        neck = interior_min_psi(profile)
        if neck is not None and neck[0] < tol.pinch_ratio * max_psi:
            return Termination("pinched", profile.time, float(profile.x_centers[neck[1]]))
        return None

    def evolve(
        self,
        state: FlowState,
        t_max: float,
        output_times: Optional[Iterable[float]] = None,
        output_stride: Optional[int] = None,
        max_steps: Optional[int] = None,
    ) -> FlowTrajectory:
        t_start = state.time
        if t_max < t_start:
            raise ValueError(f"t_max={t_max} is before the initial time {t_start}")
        if output_stride is not None and output_stride < 1:
            raise ValueError("output_stride must be at least 1")
        if output_times is None and output_stride is None:
            output_times = np.linspace(t_start, t_max, constants.DEFAULT_OUTPUT_COUNT)
        pending: List[float] = sorted(
            float(t) for t in (() if output_times is None else output_times) if t_start < t <= t_max
        )

        initial_max_psi = state.profile.max_psi
        recorded: List[FlowState] = [state]
        current = state
        termination: Optional[Termination] = None
        steps = 0
        logger.info(
            "evolving %d cells from t=%.6g to t=%.6g", state.profile.n_cells, t_start, t_max
        )

        while termination is None:
            termination = self._classify(current.profile, initial_max_psi)
            if termination is not None:
                break
            remaining = t_max - current.time
            if remaining <= 1e-15 * max(1.0, abs(t_max)):
                termination = Termination("reached_t_max", current.time)
                break
            if max_steps is not None and steps >= max_steps:
                logger.warning("step budget of %d exhausted at t=%.6g", max_steps, current.time)
                termination = Termination("degenerate", current.time)
                break
            try:
                following = self.step(current, remaining)
            except DegenerateProfileError as exc:
                logger.warning("flow stopped: %s", exc)
                termination = Termination("degenerate", current.time)
                break
            steps += 1
            if abs(following.time - t_max) <= 1e-15 * max(1.0, abs(t_max)):
                following = replace(following, profile=following.profile.with_time(t_max))

            while pending and pending[0] <= following.time:
                target = pending.pop(0)
                if target > recorded[-1].time:
                    recorded.append(_interpolate(current, following, target))
            if output_stride is not None and following.step_count % output_stride == 0:
                if following.time > recorded[-1].time:
                    recorded.append(following)
            current = following

        if current.time > recorded[-1].time:
            recorded.append(current)
        logger.info(
            "flow terminated: %s at t=%.9g after %d steps",
            termination.kind,
            termination.time,
            steps,
        )
        return FlowTrajectory(states=tuple(recorded), termination=termination)


def _interpolate(before: FlowState, after: FlowState, time: float) -> FlowState:
    span = after.time - before.time
    weight = 1.0 if span <= 0 else (time - before.time) / span
    profile = ProfileGrid(
        psi=(1.0 - weight) * before.profile.psi + weight * after.profile.psi,
        phi=(1.0 - weight) * before.profile.phi + weight * after.profile.phi,
        time=time,
    )
    return replace(after, profile=profile)


def scalar_bound(time: float, C: float) -> float:
    shifted = time + C
    if shifted <= 0:
        return -math.inf
    return -3.0 / (2.0 * shifted)


def scalar_bound_monitor(
    trajectory: FlowTrajectory,
    C: Optional[float],
    tolerances: Tolerances = DEFAULTS,
) -> List[BoundVerdict]:
    """min R(t) >= -3/(2(t+C)) at every snapshot.

    Pass C=None for a non-negative initial min R; the bound then has C = 0.
    Snapshots with an unresolved neck are reported but not judged.
    """
    shift = 0.0 if C is None else C
    verdicts = []
    for state in trajectory.states:
        check_psi_floor(state.profile, tolerances.psi_floor_ratio)
        min_r = min_scalar(state.profile)
        bound = scalar_bound(state.time, shift)
        margin = min_r - bound
        tol = 0.0
        if math.isfinite(bound):
            tol = tolerances.scalar_rel * abs(bound) + tolerances.monotone_abs
        verdicts.append(
            BoundVerdict(
                time=state.time,
                min_R=min_r,
                bound=bound,
                margin=margin,
                tolerance=tol,
                resolved=neck_resolved(state.profile, tolerances),
            )
        )
    return verdicts


def laplacian_of(profile: ProfileGrid, values: np.ndarray) -> np.ndarray:
    """Laplace-Beltrami of a rotationally symmetric function: f_ss + 2 (psi_s/psi) f_s."""
    dx = profile.dx
    psi_s, _ = grid_derivatives(profile)
    f_e = np.concatenate([values[:1], values, values[-1:]])
    phi_e = np.concatenate([profile.phi[:1], profile.phi, profile.phi[-1:]])
    phi_faces = 0.5 * (phi_e[:-1] + phi_e[1:])
    flux = np.diff(f_e) / (dx * phi_faces)
    f_ss = np.diff(flux) / (dx * profile.phi)
    f_s = (f_e[2:] - f_e[:-2]) / (2.0 * dx * profile.phi)
    return f_ss + 2.0 * (psi_s / profile.psi) * f_s


@dataclass(frozen=True)
class ScalarEvolutionCheck:
    x: float
    rate: float
    lower: float
    margin: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return self.margin >= -self.tolerance


def scalar_evolution_check(
    engine: FlowEngine, profile: ProfileGrid, dt: Optional[float] = None
) -> ScalarEvolutionCheck:
    """At the minimum of R, dR/dt >= Lap R + (2/3) R^2."""
    before = curvature(profile).scalar
    cell = int(np.argmin(before))
    dt = engine.stable_dt(profile) if dt is None else dt
    after = curvature(engine.advance(profile, dt, gauge=False)).scalar
    rate = float((after[cell] - before[cell]) / dt)
    lower = float(laplacian_of(profile, before)[cell] + 2.0 / 3.0 * before[cell] ** 2)
    tol = engine.tolerances.rate_rel * abs(lower) + engine.tolerances.monotone_abs
    return ScalarEvolutionCheck(
        x=float(profile.x_centers[cell]),
        rate=rate,
        lower=lower,
        margin=rate - lower,
        tolerance=tol,
    )

