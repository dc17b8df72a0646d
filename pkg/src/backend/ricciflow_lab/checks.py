"""Property suites behind `ricciflow-lab check`.

Static suites look at freshly built profiles; flow suites evolve a seeded
fleet (round, perturbed round and random profiles) and judge every
monitor on the resulting trajectories. Fleet members are independent, so
they can be spread over worker processes.
"""

from __future__ import annotations

import logging
import math
import multiprocessing
from dataclasses import dataclass
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

from . import constants
from .conformal_balance import (
    ConformalDilation,
    atomic_measure,
    balance,
    energy_identity_check,
    hersch_check_for_jet,
    skewed_measure,
    uniform_measure,
)
from .extinction import (
    ExtinctionCertificate,
    certificate_for,
    certificate_soundness,
    flow_covered,
    monotone_monitor,
    predicted_extinction,
)
from .flow_engine import (
    FlowEngine,
    FlowState,
    FlowTrajectory,
    rhs,
    scalar_bound_monitor,
    scalar_evolution_check,
)
from .models import CheckSummary, RunConfig, RunSettings, SuiteResult
from .profile_geometry import (
    DumbbellKind,
    PerturbedRoundKind,
    ProfileGrid,
    ProfileKind,
    RandomKind,
    RoundKind,
    build_profile,
    curvature,
    intrinsic_curvature,
)
from .sphere_mesh import laplace_beltrami_spectrum
from .tolerances import Tolerances
from .width_minmax import (
    critical_spheres,
    first_variation_check,
    index_criteria,
    lower_rate_series,
    minimal_area_rate,
    neck_area_tracker,
    upper_rate_bound,
    width_rate_monitor,
)

logger = logging.getLogger(__name__)

ROUND_RADII = (0.5, 1.0, 2.0)
STATIC_CELLS = 256
NECK_FIXTURE = DumbbellKind(neck=0.15, lobe=1.0)
SATURATION_REL = 2e-2
REPRODUCTION_REL = 1e-2
ORACLE_LEVEL = 3
ORACLE_REL = 5e-2
NECK_T_MAX = 0.1
PINCH_REL = 5e-2
PINCH_REFERENCE_FACTOR = 4
NECK_SCALE = 2.0


@dataclass(frozen=True)
class FleetMember:
    name: str
    kind: ProfileKind
    n_cells: int
    t_max: float
    output_count: int = 40


@dataclass(frozen=True, eq=False)
class FleetRun:
    member: FleetMember
    trajectory: FlowTrajectory
    certificate: ExtinctionCertificate


class _Outcomes:
    """Collects (ok, margin) pairs for one suite."""

    def __init__(self, name: str):
        self.name = name
        self.checked = 0
        self.failures: List[str] = []
        self.worst: Optional[float] = None

    def add(self, ok: bool, margin: Optional[float] = None, where: str = "") -> None:
        self.checked += 1
        if not ok:
            self.failures.append(where)
        if margin is not None and math.isfinite(margin):
            self.worst = margin if self.worst is None else min(self.worst, margin)

    def result(self) -> SuiteResult:
        detail = ""
        if self.failures:
            shown = ", ".join(item for item in self.failures[:5] if item)
            detail = f"{len(self.failures)} failures" + (f": {shown}" if shown else "")
        return SuiteResult(
            name=self.name,
            passed=not self.failures,
            checked=self.checked,
            worst_margin=self.worst,
            detail=detail,
        )


def random_kinds(seed: int, count: int) -> List[RandomKind]:
    return [RandomKind(seed=seed + k) for k in range(count)]


def build_fleet(settings: RunSettings) -> List[FleetMember]:
    cells = settings.fleet_cells
    members = [
        FleetMember(f"round-{r:g}", RoundKind(r), cells, t_max=0.3 * r * r) for r in ROUND_RADII
    ]
    members.append(FleetMember("perturbed-round", PerturbedRoundKind(-1.0), cells, t_max=1.5))
    members.extend(
        FleetMember(f"random-{kind.seed}", kind, cells, t_max=2.0)
        for kind in random_kinds(settings.seed, settings.fleet_random)
    )
    return members


def run_member(member: FleetMember, tolerances: Tolerances) -> FleetRun:
    profile = build_profile(member.kind, member.n_cells)
    certificate = certificate_for(profile, tolerances)
    engine = FlowEngine(tolerances)
    trajectory = engine.evolve(
        FlowState.initial(profile, tolerances),
        member.t_max,
        output_times=np.linspace(0.0, member.t_max, member.output_count),
    )
    logger.info(
        "fleet %s: %s at t=%.6g",
        member.name,
        trajectory.termination.kind,
        trajectory.termination.time,
    )
    return FleetRun(member, trajectory, certificate)


def run_fleet(
    members: Sequence[FleetMember], tolerances: Tolerances, workers: int = 1
) -> List[FleetRun]:
    """Evolve every member; results keep the order of members."""
    if workers <= 1 or len(members) <= 1:
        return [run_member(member, tolerances) for member in members]
    context = multiprocessing.get_context("spawn")
    with context.Pool(processes=min(workers, len(members))) as pool:
        return pool.starmap(run_member, [(member, tolerances) for member in members])


# Static suites


def suite_curvature_oracle(profiles: Iterable[Tuple[str, ProfileGrid]]) -> SuiteResult:
    """-2 Ric from the curvature module against the metric rates of the flow."""
    outcomes = _Outcomes("curvature_oracle")
    for name, profile in profiles:
        field = curvature(profile)
        psi_t, phi_t = rhs(profile)
        sphere_rate = 2.0 * profile.psi * psi_t
        axis_rate = 2.0 * profile.phi * phi_t
        sphere_expected = -2.0 * field.ric_sph * profile.psi**2
        axis_expected = -2.0 * field.ric_nn * profile.phi**2
        tolerance = profile.dx**2
        for rate, expected in ((sphere_rate, sphere_expected), (axis_rate, axis_expected)):
            scale = 1.0 + np.abs(expected)
            error = float(np.max(np.abs(rate - expected) / scale))
            outcomes.add(error <= tolerance, tolerance - error, name)
    return outcomes.result()


def suite_round_curvature(n_cells: int = STATIC_CELLS) -> SuiteResult:
    outcomes = _Outcomes("round_curvature")
    for radius in ROUND_RADII:
        field = curvature(build_profile(RoundKind(radius), n_cells))
        scale = 1.0 / radius**2
        for values, expected in ((field.scalar, 6.0), (field.ric_nn, 2.0)):
            error = float(np.max(np.abs(values / scale - expected)))
            outcomes.add(error <= 1e-3, 1e-3 - error, f"round-{radius:g}")
    return outcomes.result()


def suite_variation_identities(
    profiles: Iterable[Tuple[str, ProfileGrid]], tolerances: Tolerances, stride: int = 8
) -> SuiteResult:
    outcomes = _Outcomes("variation_identities")
    for name, profile in profiles:
        centers = profile.x_centers
        slices = list(centers[stride // 2 : -1 : stride])
        slices.extend(sphere.x for sphere in critical_spheres(profile, 0, tolerances))
        for x in slices:
            check = first_variation_check(profile, float(x), tolerances)
            area = 4.0 * math.pi * np.interp(x, centers, profile.psi) ** 2
            tol = tolerances.identity_tol * (1.0 + area)
            error = abs(check.residual)
            outcomes.add(error <= check.tolerance, check.tolerance - error, f"{name}@{x:.4f}")
            if check.gauss_bonnet_residual is not None:
                error = abs(check.gauss_bonnet_residual)
                outcomes.add(error <= tol, tol - error, f"{name}@{x:.4f} gauss-bonnet")
    return outcomes.result()


def suite_index_equivalence(
    profiles: Iterable[Tuple[str, ProfileGrid]], tolerances: Tolerances
) -> SuiteResult:
    outcomes = _Outcomes("index_equivalence")
    equator = critical_spheres(build_profile(RoundKind(1.0), STATIC_CELLS), 2, tolerances)
    for sphere in equator:
        error = abs(sphere.spectrum.integral_one_L_one - 8.0 * math.pi)
        ok = sphere.spectrum.index == 1 and error <= tolerances.identity_tol
        outcomes.add(ok, tolerances.identity_tol - error, "unit round equator")
    for name, profile in profiles:
        for sphere in critical_spheres(profile, 2, tolerances):
            criteria = index_criteria(sphere, tolerances)
            outcomes.add(criteria.consistent, None, f"{name}@{sphere.x:.4f}")
    return outcomes.result()


def suite_hersch(profiles: Iterable[Tuple[str, ProfileGrid]], tolerances: Tolerances):
    outcomes = _Outcomes("hersch")
    for name, profile in profiles:
        for sphere in critical_spheres(profile, 0, tolerances):
            verdict = hersch_check_for_jet(sphere.sphere.jet, tolerances, tol_minimal=math.inf)
            margin = None if verdict.vacuous else 8.0 * math.pi - verdict.integral_one_L_one
            outcomes.add(
                verdict.integral_holds and verdict.rate_holds, margin, f"{name}@{sphere.x:.4f}"
            )
    return outcomes.result()


def suite_minimal_rates(profiles: Iterable[Tuple[str, ProfileGrid]], tolerances: Tolerances):
    """Minimal-surface form of the area rate, Gauss-Bonnet and the upper rate bound."""
    outcomes = _Outcomes("minimal_rates")
    for name, profile in profiles:
        min_r = float(np.min(curvature(profile).scalar))
        for sphere in critical_spheres(profile, 0, tolerances):
            where = f"{name}@{sphere.x:.4f}"
            tol = tolerances.identity_tol * (1.0 + sphere.area)
            rate = first_variation_check(profile, sphere.x, tolerances).rate_flow
            error = abs(minimal_area_rate(profile, sphere.x) - rate)
            outcomes.add(error <= tol, tol - error, where)
            error = abs(intrinsic_curvature(profile, sphere.x) * sphere.area - 4.0 * math.pi)
            outcomes.add(error <= tol, tol - error, f"{where} gauss-bonnet")
            bound = upper_rate_bound(profile, sphere.x, min_r)
            slack = tolerances.rate_rel * abs(bound.bound) + tol
            outcomes.add(bound.margin >= -slack, bound.margin, f"{where} upper bound")
    return outcomes.result()


def suite_spectrum_oracle(
    profiles: Iterable[Tuple[str, ProfileGrid]], tolerances: Tolerances, level: int = ORACLE_LEVEL
) -> SuiteResult:
    """Closed-form stability spectra against a cotangent-Laplacian eigensolve."""
    outcomes = _Outcomes("spectrum_oracle")
    for name, profile in profiles:
        for sphere in critical_spheres(profile, 3, tolerances):
            psi = sphere.sphere.jet.psi
            potential = sphere.spectrum.potential
            numeric = laplace_beltrami_spectrum(level, psi, potential, count=16) + potential
            expected = np.repeat(
                [mode.l * (mode.l + 1) / psi**2 for mode in sphere.spectrum.modes],
                [mode.multiplicity for mode in sphere.spectrum.modes],
            )
            scale = np.maximum(expected, 1.0 / psi**2)
            error = float(np.max(np.abs(numeric - expected) / scale))
            outcomes.add(error <= ORACLE_REL, ORACLE_REL - error, f"{name}@{sphere.x:.4f}")
    return outcomes.result()


def suite_scalar_evolution(
    profiles: Iterable[Tuple[str, ProfileGrid]], tolerances: Tolerances
) -> SuiteResult:
    """dR/dt against Lap R + 2R^2/3 at the minimum of R; reported only."""
    engine = FlowEngine(tolerances)
    below = []
    worst = None
    checked = 0
    for name, profile in profiles:
        check = scalar_evolution_check(engine, profile)
        checked += 1
        worst = check.margin if worst is None else min(worst, check.margin)
        if not check.ok:
            below.append(f"{name}@{check.x:.4f}")
    detail = f"{len(below)} of {checked} below the lower rate (reported only)"
    if below:
        detail += ": " + ", ".join(below[:5])
    return SuiteResult(
        name="scalar_evolution", passed=True, checked=checked, worst_margin=worst, detail=detail
    )


def suite_certificate_spot() -> SuiteResult:
    """Closed-form T* against a root finder on the integrated inequality."""
    outcomes = _Outcomes("certificate_closed_form")
    W0, C = 4.0 * math.pi, 1.5

    def excess(T: float) -> float:
        return W0 * C**-0.75 - 16.0 * math.pi * ((T + C) ** 0.25 - C**0.25)

    reference = brentq(excess, 0.0, 100.0, xtol=1e-14)
    error = abs(predicted_extinction(W0, C) - reference)
    outcomes.add(error <= 1e-6, 1e-6 - error, "W0=4pi, C=1.5")
    return outcomes.result()


def suite_balancing(level: int, tolerances: Tolerances) -> SuiteResult:
    outcomes = _Outcomes("balancing")
    uniform = balance(uniform_measure(level), 1e-8, tolerances)
    outcomes.add(uniform.dilation.t <= 1e-8, 1e-8 - uniform.dilation.t, "uniform")
    for name, measure in (
        ("skewed", skewed_measure(level)),
        ("atomic", atomic_measure(level, atom_mass=0.4)),
    ):
        result = balance(measure, 1e-8, tolerances)
        outcomes.add(
            result.residual <= 1e-8 and result.iterations <= 50, 1e-8 - result.residual, name
        )
    for t in (0.0, 0.25, 0.5, 0.9):
        # the dilated coordinates steepen near the boundary of the ball
        energy_level = constants.ENERGY_LEVEL if t <= 0.5 else constants.ENERGY_LEVEL_NEAR_BOUNDARY
        check = energy_identity_check(
            max(level, energy_level), ConformalDilation((0.3, -0.5, 0.8), t)
        )
        limit = tolerances.energy_rel
        outcomes.add(check.relative_error <= limit, limit - check.relative_error, f"energy t={t}")
    return outcomes.result()


# Flow suites


def _require_coverage(outcomes: _Outcomes, run: FleetRun) -> None:
    """A monitor only counts if the flow lasted to extinction, a pinch or t_max."""
    termination = run.trajectory.termination
    outcomes.add(
        flow_covered(run.trajectory),
        None,
        f"{run.member.name}: {termination.kind} at t={termination.time:.4g}",
    )


def suite_termination(runs: Sequence[FleetRun]) -> SuiteResult:
    """Every fleet member is a smooth sphere and must shrink to a point before t_max."""
    outcomes = _Outcomes("termination")
    for run in runs:
        termination = run.trajectory.termination
        outcomes.add(
            termination.kind == "extinct",
            None,
            f"{run.member.name}: {termination.kind} at t={termination.time:.4g}",
        )
    return outcomes.result()


def suite_scalar_bound(runs: Sequence[FleetRun], tolerances: Tolerances) -> SuiteResult:
    outcomes = _Outcomes("scalar_bound")
    for run in runs:
        for verdict in scalar_bound_monitor(run.trajectory, run.certificate.C, tolerances):
            outcomes.add(verdict.ok, verdict.margin, f"{run.member.name}@t={verdict.time:.4g}")
        _require_coverage(outcomes, run)
    return outcomes.result()


def suite_width_rate(runs: Sequence[FleetRun], tolerances: Tolerances) -> SuiteResult:
    outcomes = _Outcomes("width_rate")
    for run in runs:
        _require_coverage(outcomes, run)
        series = width_rate_monitor(run.trajectory, run.certificate.C, tolerances)
        for sample in series.samples:
            if sample.dq is not None:
                outcomes.add(sample.ok, sample.margin, f"{run.member.name}@t={sample.t:.4g}")
    return outcomes.result()


def suite_saturation(runs: Sequence[FleetRun], tolerances: Tolerances) -> SuiteResult:
    """Round widths fall at exactly 16 pi, which is both rate bounds at once."""
    outcomes = _Outcomes("saturation")
    target = -16.0 * math.pi
    for run in runs:
        if not isinstance(run.member.kind, RoundKind):
            continue
        series = width_rate_monitor(run.trajectory, run.certificate.C, tolerances)
        for _, dq, _ in lower_rate_series(series):
            error = abs(dq - target) / abs(target)
            outcomes.add(error <= SATURATION_REL, SATURATION_REL - error, run.member.name)
    return outcomes.result()


def suite_monotone_quantity(runs: Sequence[FleetRun], tolerances: Tolerances) -> SuiteResult:
    outcomes = _Outcomes("monotone_quantity")
    for run in runs:
        C = run.certificate.C
        if C is None:
            continue
        _require_coverage(outcomes, run)
        series = width_rate_monitor(run.trajectory, C, tolerances)
        for verdict in monotone_monitor(series, C, tolerances):
            outcomes.add(verdict.ok, verdict.margin, f"{run.member.name}@t={verdict.t:.4g}")
    return outcomes.result()


def suite_certificate(runs: Sequence[FleetRun], tolerances: Tolerances) -> SuiteResult:
    outcomes = _Outcomes("certificate")
    for run in runs:
        verdict = certificate_soundness(run.trajectory, run.certificate, tolerances)
        if verdict.comparable:
            outcomes.add(bool(verdict.sound), verdict.margin, run.member.name)
    return outcomes.result()


def suite_round_extinction(runs: Sequence[FleetRun], tolerances: Tolerances) -> SuiteResult:
    outcomes = _Outcomes("round_extinction")
    for run in runs:
        if not isinstance(run.member.kind, RoundKind):
            continue
        expected = run.member.kind.radius**2 / 4.0
        termination = run.trajectory.termination
        error = abs(termination.time - expected) / expected
        ok = termination.kind == "extinct" and error <= tolerances.time_rel
        outcomes.add(ok, tolerances.time_rel - error, run.member.name)
    return outcomes.result()


def suite_round_reproduction(n_cells: int, tolerances: Tolerances) -> SuiteResult:
    """max psi^2 follows 1 - 4t on the unit round sphere down to radius 0.1."""
    outcomes = _Outcomes("round_reproduction")
    t_end = (1.0 - 0.01) / 4.0
    engine = FlowEngine(tolerances)
    trajectory = engine.evolve(
        FlowState.initial(build_profile(RoundKind(1.0), n_cells), tolerances),
        t_end,
        output_times=np.linspace(0.0, t_end, 50),
    )
    for state in trajectory.states:
        expected = 1.0 - 4.0 * state.time
        error = abs(state.profile.max_psi**2 - expected) / expected
        outcomes.add(error <= REPRODUCTION_REL, REPRODUCTION_REL - error, f"t={state.time:.4g}")
    return outcomes.result()


def _evolve_neck(profile: ProfileGrid, tolerances: Tolerances, t_max: float, outputs: int):
    engine = FlowEngine(tolerances)
    return engine.evolve(
        FlowState.initial(profile, tolerances),
        t_max,
        output_times=np.linspace(0.0, t_max, outputs),
    )


def _pinch_time(trajectory: FlowTrajectory) -> Optional[float]:
    termination = trajectory.termination
    return termination.time if termination.kind == "pinched" else None


def suite_neck(
    n_cells: int,
    tolerances: Tolerances,
    reference_factor: int = PINCH_REFERENCE_FACTOR,
    scale: float = NECK_SCALE,
) -> SuiteResult:
    """Neck area decay on the dumbbell, its pinch time against a finer grid and under scaling."""
    outcomes = _Outcomes("neck")
    profile = build_profile(NECK_FIXTURE, n_cells)
    trajectory = _evolve_neck(profile, tolerances, NECK_T_MAX, 400)
    track = neck_area_tracker(trajectory, tolerances)
    outcomes.add(track.pinch_time is not None, None, "dumbbell did not pinch")
    areas = [sample.area for sample in track.samples if sample.area is not None]
    decreasing = all(later < earlier for earlier, later in zip(areas, areas[1:]))
    outcomes.add(decreasing, None, "neck area not strictly decreasing")
    for sample in track.samples:
        if sample.dq is not None:
            outcomes.add(sample.ok, sample.margin, f"t={sample.t:.4g}")
    if track.pinch_time is None:
        return outcomes.result()
    pinch = track.pinch_time

    fine = build_profile(NECK_FIXTURE, reference_factor * n_cells)
    reference = _pinch_time(_evolve_neck(fine, tolerances, NECK_T_MAX, 2))
    if reference is None:
        outcomes.add(False, None, f"{reference_factor}x reference did not pinch")
    else:
        error = abs(pinch - reference) / reference
        outcomes.add(
            error <= PINCH_REL,
            PINCH_REL - error,
            f"pinch at {pinch:.6g}, {reference_factor}x reference at {reference:.6g}",
        )

    scaled = _pinch_time(
        _evolve_neck(profile.scaled(scale), tolerances, scale**2 * NECK_T_MAX, 2)
    )
    if scaled is None:
        outcomes.add(False, None, f"dumbbell scaled by {scale:g} did not pinch")
    else:
        error = abs(scaled / (scale**2 * pinch) - 1.0)
        outcomes.add(
            error <= PINCH_REL,
            PINCH_REL - error,
            f"scaled pinch at {scaled:.6g}, expected {scale**2 * pinch:.6g}",
        )
    return outcomes.result()


def run_checks(config: RunConfig, workers: Optional[int] = None) -> CheckSummary:
    settings = config.run
    tolerances = config.resolved_tolerances()
    workers = workers or settings.workers

    static_profiles = [
        (f"round-{r:g}", build_profile(RoundKind(r), STATIC_CELLS)) for r in ROUND_RADII
    ]
    static_profiles.append(("dumbbell", build_profile(NECK_FIXTURE, STATIC_CELLS)))
    static_profiles.append(
        ("perturbed-round", build_profile(PerturbedRoundKind(-1.0), STATIC_CELLS))
    )
    static_profiles.extend(
        (f"random-{kind.seed}", build_profile(kind, STATIC_CELLS))
        for kind in random_kinds(settings.seed, settings.fleet_random)
    )

    static_suites: List[Callable[[], SuiteResult]] = [
        lambda: suite_curvature_oracle(static_profiles),
        lambda: suite_round_curvature(),
        lambda: suite_variation_identities(static_profiles, tolerances),
        lambda: suite_index_equivalence(static_profiles, tolerances),
        lambda: suite_hersch(static_profiles, tolerances),
        lambda: suite_minimal_rates(static_profiles, tolerances),
        lambda: suite_spectrum_oracle(static_profiles, tolerances),
        lambda: suite_scalar_evolution(static_profiles, tolerances),
        suite_certificate_spot,
        lambda: suite_balancing(settings.balance_level, tolerances),
    ]
    results = [suite() for suite in static_suites]

    runs = run_fleet(build_fleet(settings), tolerances, workers)
    results.extend(
        [
            suite_termination(runs),
            suite_scalar_bound(runs, tolerances),
            suite_width_rate(runs, tolerances),
            suite_saturation(runs, tolerances),
            suite_monotone_quantity(runs, tolerances),
            suite_certificate(runs, tolerances),
            suite_round_extinction(runs, tolerances),
            suite_round_reproduction(max(settings.fleet_cells, 128), tolerances),
            suite_neck(max(settings.fleet_cells, STATIC_CELLS), tolerances),
        ]
    )
    for result in results:
        log = logger.info if result.passed else logger.warning
        status = "ok" if result.passed else "FAILED"
        log("suite %s: %s (%d checks)", result.name, status, result.checked)
    return CheckSummary(seed=settings.seed, suites=results)
