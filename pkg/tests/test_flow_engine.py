from __future__ import annotations

import logging
import math
from types import SimpleNamespace

import numpy as np
import pytest

from ricciflow_lab.debug_helpers import StepLogger
from ricciflow_lab.flow_engine import (
    BoundVerdict,
    FlowEngine,
    FlowState,
    FlowTrajectory,
    Termination,
    flow_rhs,
    gauge_field,
    gauge_rhs,
    interior_min_psi,
    neck_resolved,
    rhs,
    scalar_bound,
    scalar_bound_monitor,
    scalar_evolution_check,
)
from ricciflow_lab.profile_geometry import (
    DegenerateProfileError,
    DumbbellKind,
    PerturbedRoundKind,
    ProfileGrid,
    RandomKind,
    RoundKind,
    build_profile,
    cell_centers,
    grid_derivatives,
    min_scalar,
)
from ricciflow_lab.tolerances import resolve_tolerances


def _round(radius: float = 1.0, n_cells: int = 64) -> ProfileGrid:
    return build_profile(RoundKind(radius), n_cells)


def _dumbbell(neck: float = 0.2, lobe: float = 1.0, n_cells: int = 128) -> ProfileGrid:
    return build_profile(DumbbellKind(neck, lobe), n_cells)


def _evolve(profile: ProfileGrid, t_max: float, **kwargs) -> FlowTrajectory:
    engine = FlowEngine()
    return engine.evolve(FlowState.initial(profile), t_max, **kwargs)


class _Recorder:
    def __init__(self):
        self.accepted = []
        self.rejected = []

    def on_step_accepted(self, state, dt):
        self.accepted.append(dt)

    def on_step_rejected(self, state, dt, reason):
        self.rejected.append(reason)


def test_rhs_on_round_sphere() -> None:
    profile = _round(1.0, 256)
    psi_t, phi_t = rhs(profile)
    equator = profile.n_cells // 2
    # exact solution r(t) = sqrt(1 - 4t)
    assert psi_t[equator] == pytest.approx(-2.0, abs=1e-3)
    assert np.max(np.abs(phi_t / profile.phi + 2.0)) <= 1e-3

    psi_t, phi_t = rhs(_round(2.0, 256))
    assert np.max(np.abs(phi_t / (2.0 * math.pi) + 0.5)) <= 1e-3


def test_single_step_follows_exact_solution() -> None:
    profile = _round(1.0, 256)
    engine = FlowEngine()
    state = engine.step(FlowState.initial(profile), 1e-4)
    assert state.dt_last < 1e-4
    # dt is capped by the parabolic limit; compare with the exact radius at the new time
    expected = math.sqrt(1.0 - 4.0 * state.time) * math.sin(math.pi * cell_centers(256)[128])
    assert state.profile.psi[128] == pytest.approx(expected, abs=1e-7)


def test_step_respects_cfl_limit() -> None:
    profile = _round(1.0, 64)
    engine = FlowEngine()
    state = engine.step(FlowState.initial(profile), 1.0)
    h = math.pi / 64
    # the pole cells, where psi is half a cell width, set the limit
    assert state.dt_last == pytest.approx(0.4 * h**2 / (1.0 + h / math.sin(math.pi / 128)))
    assert state.step_count == 1


def test_zero_step_is_identity() -> None:
    state = FlowState.initial(_round())
    assert FlowEngine().step(state, 0.0) is state
    with pytest.raises(ValueError):
        FlowEngine().step(state, -1.0)


def test_dumbbell_step_keeps_min_r() -> None:
    profile = _dumbbell()
    state = FlowState.initial(profile)
    after = FlowEngine().step(state, 1e-3)
    assert min_scalar(after.profile) >= state.min_R_history_floor - state.tol_monotone
    assert after.step_count == 1


@pytest.mark.parametrize("radius", [1.0, 2.0])
def test_round_extinction_time(radius: float) -> None:
    trajectory = _evolve(_round(radius, 64), 0.3 * radius**2)
    assert trajectory.termination.kind == "extinct"
    assert trajectory.termination.time == pytest.approx(radius**2 / 4.0, rel=1e-2)


def test_extinction_error_shrinks_with_resolution() -> None:
    errors = []
    for n_cells in (32, 64):
        trajectory = _evolve(_round(1.0, n_cells), 0.3)
        errors.append(abs(trajectory.termination.time - 0.25))
    assert errors[1] * 3.0 <= errors[0]


def test_output_times_are_recorded() -> None:
    times = [0.01, 0.02, 0.05]
    trajectory = _evolve(_round(), 0.05, output_times=times)
    assert trajectory.termination.kind == "reached_t_max"
    assert trajectory.times.tolist() == pytest.approx([0.0] + times)
    for state in trajectory.states:
        assert state.profile.max_psi == pytest.approx(
            math.sqrt(1.0 - 4.0 * state.time), rel=1e-3
        )


def test_output_stride_and_step_budget() -> None:
    trajectory = _evolve(_round(), 0.3, output_times=[], output_stride=10, max_steps=25)
    assert trajectory.termination.kind == "degenerate"
    assert [state.step_count for state in trajectory.states] == [0, 10, 20, 25]


def test_terminal_state_is_appended() -> None:
    trajectory = _evolve(_round(), 0.3, output_times=[0.1])
    assert trajectory.termination.kind == "extinct"
    assert trajectory.final.time == pytest.approx(trajectory.termination.time)
    assert trajectory.times[-1] > 0.1


def test_evolve_rejects_past_t_max() -> None:
    state = FlowState.initial(_round().with_time(1.0))
    with pytest.raises(ValueError):
        FlowEngine().evolve(state, 0.5)


def test_tracer_sees_accepted_steps() -> None:
    recorder = _Recorder()
    engine = FlowEngine(tracer=recorder)
    engine.evolve(FlowState.initial(_round()), 0.01, output_times=[0.01])
    assert recorder.accepted
    assert all(dt > 0 for dt in recorder.accepted)


def test_step_logger_counts_rejections(caplog) -> None:
    tracer = StepLogger(logging.getLogger("test.steps"))
    state = FlowState.initial(_round())
    with caplog.at_level(logging.DEBUG, logger="test.steps"):
        tracer.on_step_rejected(state, 1e-3, "positivity")
        tracer.on_step_accepted(state, 1e-3)
    assert tracer.rejected == 1
    assert "rejected" in caplog.text


def test_positivity_failure_halves_dt(monkeypatch) -> None:
    engine = FlowEngine(tracer=_Recorder())
    original = engine.advance
    calls = {"count": 0}

    def flaky(profile, dt):
        calls["count"] += 1
        if calls["count"] == 1:
            raise DegenerateProfileError("psi dropped")
        return original(profile, dt)

    monkeypatch.setattr(engine, "advance", flaky)
    state = FlowState.initial(_round())
    after = engine.step(state, 1.0)
    assert after.dt_last == pytest.approx(0.5 * engine.stable_dt(state.profile))
    assert engine.tracer.rejected[0].startswith("positivity")


def test_dt_underflow_raises() -> None:
    tolerances = resolve_tolerances({"dt_underflow_ratio": 1.0})
    engine = FlowEngine(tolerances)
    with pytest.raises(DegenerateProfileError):
        engine.step(FlowState.initial(_round(), tolerances), 1e-3)


def test_monotone_halvings_then_degenerate(monkeypatch) -> None:
    tolerances = resolve_tolerances({"max_monotone_halvings": 2})
    engine = FlowEngine(tolerances, tracer=_Recorder())
    state = FlowState.initial(_round(), tolerances)
    monkeypatch.setattr(
        "ricciflow_lab.flow_engine.curvature",
        lambda profile, floor: SimpleNamespace(scalar=np.full(profile.n_cells, -100.0)),
    )
    with pytest.raises(DegenerateProfileError, match="after 2 halvings"):
        engine.step(state, 1.0)
    assert len(engine.tracer.rejected) == 2
    assert all(reason.startswith("min R fell") for reason in engine.tracer.rejected)


def test_evolve_reports_degenerate_when_min_r_keeps_falling(monkeypatch) -> None:
    monkeypatch.setattr(
        "ricciflow_lab.flow_engine.curvature",
        lambda profile, floor: SimpleNamespace(scalar=np.full(profile.n_cells, -100.0)),
    )
    trajectory = _evolve(_round(), 0.1)
    assert trajectory.termination.kind == "degenerate"
    assert trajectory.termination.time == 0.0


@pytest.mark.slow
def test_dumbbell_pinches() -> None:
    trajectory = _evolve(build_profile(DumbbellKind(0.15, 1.0), 256), 0.1)
    assert trajectory.termination.kind == "pinched"
    assert trajectory.termination.x == pytest.approx(0.5, abs=0.02)


def test_interior_min_and_resolution() -> None:
    assert interior_min_psi(_round()) is None
    assert neck_resolved(_round())

    profile = _dumbbell(0.2, 1.0, 128)
    value, cell = interior_min_psi(profile)
    assert value == pytest.approx(0.2, abs=1e-3)
    assert profile.x_centers[cell] == pytest.approx(0.5, abs=1.0 / 128)
    assert neck_resolved(profile)

    thin = build_profile(DumbbellKind(0.01, 1.0), 64)
    assert not neck_resolved(thin)


def test_trajectory_validation() -> None:
    state = FlowState.initial(_round())
    with pytest.raises(ValueError):
        FlowTrajectory(states=(state, state), termination=Termination("extinct", 0.0))
    with pytest.raises(ValueError):
        Termination("exploded", 0.0)


def test_scalar_bound_formula() -> None:
    assert scalar_bound(0.0, 1.5) == pytest.approx(-1.0)
    assert scalar_bound(1.0, 1.5) == pytest.approx(-0.6)
    assert scalar_bound(0.0, 0.0) == -math.inf


def test_scalar_bound_monitor_on_round() -> None:
    trajectory = _evolve(_round(), 0.2, output_times=[0.05, 0.1, 0.2])
    verdicts = scalar_bound_monitor(trajectory, None)
    assert len(verdicts) == len(trajectory.states)
    assert all(verdict.ok for verdict in verdicts)
    assert verdicts[0].bound == -math.inf


def test_unresolved_verdicts_are_not_judged() -> None:
    verdict = BoundVerdict(
        time=0.1, min_R=-50.0, bound=-1.0, margin=-49.0, tolerance=0.0, resolved=False
    )
    assert verdict.ok


def test_scalar_evolution_on_round() -> None:
    check = scalar_evolution_check(FlowEngine(), _round(1.0, 128))
    # R = 6/(1 - 4t) gives dR/dt = 24 = (2/3) R^2 with Lap R = 0
    assert check.rate == pytest.approx(24.0, rel=2e-2)
    assert check.lower == pytest.approx(24.0, rel=5e-2)


@pytest.mark.parametrize("radius", [0.5, 1.0, 2.0])
def test_gauge_vanishes_on_round(radius: float) -> None:
    profile = _round(radius, 64)
    assert np.max(np.abs(gauge_field(profile))) <= 1e-9 / radius**2
    psi_t, phi_t = gauge_rhs(profile)
    assert np.max(np.abs(psi_t)) <= 1e-9
    assert np.max(np.abs(phi_t)) <= 1e-9


def test_gauge_moves_points_without_changing_length() -> None:
    profile = _dumbbell(0.3, 1.0, 128)
    field = gauge_field(profile)
    assert field[0] == 0.0 and field[-1] == 0.0
    assert np.max(np.abs(field)) > 1e-3
    _, phi_t = gauge_rhs(profile)
    # the lapse flux telescopes, so the total arclength is unchanged
    assert np.sum(phi_t) * profile.dx == pytest.approx(0.0, abs=1e-12)


def test_flow_rhs_adds_gauge_to_ricci() -> None:
    profile = _dumbbell(0.3, 1.0, 128)
    psi_t, phi_t = flow_rhs(profile)
    ricci_psi, ricci_phi = rhs(profile)
    gauge_psi, gauge_phi = gauge_rhs(profile)
    assert np.allclose(psi_t, ricci_psi + gauge_psi)
    assert np.allclose(phi_t, ricci_phi + gauge_phi)


def test_pole_cells_use_isotropic_limit() -> None:
    profile = _round(1.0, 128)
    psi_t, _ = rhs(profile)
    _, psi_ss = grid_derivatives(profile)
    assert psi_t[0] == pytest.approx(2.0 * psi_ss[0])
    assert psi_t[-1] == pytest.approx(2.0 * psi_ss[-1])
    # r(t) = sqrt(1 - 4t) on every cell, the pole cells included
    assert psi_t[0] / profile.psi[0] == pytest.approx(-2.0, rel=1e-3)


def test_stable_dt_includes_gauge_speed() -> None:
    profile = _dumbbell(0.3, 1.0, 128)
    engine = FlowEngine()
    speed = float(np.max(np.abs(gauge_field(profile))))
    assert engine.stable_dt(profile) <= 0.4 * profile.dx / speed


def test_dumbbell_keeps_pole_cells_smooth() -> None:
    trajectory = _evolve(_dumbbell(0.5, 1.0, 64), 0.02, output_times=[0.01, 0.02])
    assert trajectory.termination.kind == "reached_t_max"
    for state in trajectory.states:
        profile = state.profile
        # psi stays monotone away from each pole
        assert profile.psi[1] > profile.psi[0] > 0
        assert profile.psi[-2] > profile.psi[-1] > 0
    assert trajectory.final.min_R_history_floor >= trajectory.states[0].min_R_history_floor


@pytest.mark.slow
def test_perturbed_round_runs_to_extinction() -> None:
    profile = build_profile(PerturbedRoundKind(-1.0), 64)
    trajectory = _evolve(profile, 1.5, output_times=np.linspace(0.0, 1.5, 40))
    assert trajectory.termination.kind == "extinct"
    assert all(verdict.ok for verdict in scalar_bound_monitor(trajectory, 1.5))


@pytest.mark.slow
@pytest.mark.parametrize("seed", [2024, 2025, 2026, 2027])
def test_random_profiles_run_to_extinction(seed: int) -> None:
    trajectory = _evolve(build_profile(RandomKind(seed), 64), 2.0)
    assert trajectory.termination.kind == "extinct"
