"""Width of the level-sphere sweepout and the rates it obeys along the flow.

The symmetric sweepout is the family of level spheres x = const. Its width
W is the largest level-sphere area; every critical sphere of psi is a
minimal sphere of the metric, and the largest is where W is attained.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import CubicSpline

from . import constants
from .flow_engine import FlowTrajectory, pointwise_rhs, rhs
from .profile_geometry import (
    ProfileGrid,
    SliceJet,
    SphereData,
    StabilitySpectrum,
    cell_centers,
    critical_jets,
    curvature,
    curvature_from_derivatives,
    minimal_tolerance,
    slice_jet,
    spectrum_for_sphere,
    sphere_from_jet,
)
from .tolerances import DEFAULTS, Tolerances

logger = logging.getLogger(__name__)

FOUR_PI = 4.0 * math.pi


@dataclass(frozen=True, eq=False)
class SweepOut:
    slices: np.ndarray
    areas: np.ndarray


@dataclass(frozen=True)
class CriticalSphere:
    sphere: SphereData
    spectrum: StabilitySpectrum

    @property
    def x(self) -> float:
        return self.sphere.x

    @property
    def area(self) -> float:
        return self.sphere.area

    @property
    def kind(self) -> str:
        return "max" if self.sphere.jet.psi_ss < 0 else "min"


@dataclass(frozen=True)
class VariationCheck:
    x: float
    rate_flow: float
    rate_grid: float
    rate_curvature: float
    residual: float
    tolerance: float
    rate_gauss_bonnet: Optional[float] = None
    gauss_bonnet_residual: Optional[float] = None


@dataclass(frozen=True)
class RateBound:
    x: float
    rate: float
    bound: float
    margin: float


@dataclass(frozen=True)
class IndexCriteria:
    """Three equivalent readings of "index at most one" on a minimal sphere."""

    index_at_most_one: bool
    integral_at_most_8pi: bool
    curvature_product_ok: bool
    psi_psi_ss: float
    consistent: bool


@dataclass(frozen=True)
class WidthSample:
    t: float
    W: float
    x_argmax: float
    min_R: float
    dq: Optional[float] = None
    bound_rhs: Optional[float] = None
    margin: Optional[float] = None
    tolerance: Optional[float] = None
    neck_area: Optional[float] = None

    @property
    def ok(self) -> bool:
        if self.margin is None or self.tolerance is None:
            return True
        return self.margin >= -self.tolerance


@dataclass(frozen=True)
class WidthSeries:
    samples: Tuple[WidthSample, ...]
    C: Optional[float]

    @property
    def violations(self) -> int:
        return sum(1 for sample in self.samples if not sample.ok)

    @property
    def times(self) -> np.ndarray:
        return np.array([sample.t for sample in self.samples])

    @property
    def widths(self) -> np.ndarray:
        return np.array([sample.W for sample in self.samples])


@dataclass(frozen=True)
class NeckSample:
    t: float
    area: Optional[float]
    x: Optional[float]
    min_R: float
    dq: Optional[float] = None
    bound: Optional[float] = None
    margin: Optional[float] = None
    tolerance: Optional[float] = None

    @property
    def ok(self) -> bool:
        if self.margin is None or self.tolerance is None:
            return True
        return self.margin >= -self.tolerance


@dataclass(frozen=True)
class NeckTrack:
    samples: Tuple[NeckSample, ...]
    pinch_time: Optional[float]
    present: bool

    @property
    def violations(self) -> int:
        return sum(1 for sample in self.samples if not sample.ok)


def sweep_out(profile: ProfileGrid) -> SweepOut:
    """Level-sphere areas over the cell centers, closed by zero area at both poles."""
    slices = np.concatenate([[0.0], profile.x_centers, [1.0]])
    areas = np.concatenate([[0.0], FOUR_PI * profile.psi**2, [0.0]])
    return SweepOut(slices=slices, areas=areas)


def _minimal_tolerance_for(profile: ProfileGrid, jet: SliceJet, tolerances: Tolerances) -> float:
    # bisection leaves |psi_s| of order |psi_ss| times the position error
    position_error = tolerances.bisection_rel * profile.total_arclength
    return max(minimal_tolerance(profile, tolerances), 10.0 * abs(jet.psi_ss) * position_error)


def critical_spheres(
    profile: ProfileGrid,
    l_max: int = constants.DEFAULT_L_MAX,
    tolerances: Tolerances = DEFAULTS,
) -> List[CriticalSphere]:
    spheres = []
    for jet in critical_jets(profile, tolerances):
        sphere = sphere_from_jet(jet, _minimal_tolerance_for(profile, jet, tolerances))
        spheres.append(CriticalSphere(sphere, spectrum_for_sphere(sphere, l_max, tolerances)))
    return spheres


def symmetric_width(
    profile: ProfileGrid, tolerances: Tolerances = DEFAULTS
) -> Tuple[float, float]:
    """Return (W, x_argmax); ties resolve to the smallest x."""
    candidates = [(float(FOUR_PI * p**2), float(x)) for x, p in zip(profile.x_centers, profile.psi)]
    for jet in critical_jets(profile, tolerances):
        if jet.psi_ss < 0:
            candidates.append((FOUR_PI * jet.psi**2, jet.x))
    width = max(area for area, _ in candidates)
    tied = [x for area, x in candidates if area >= width * (1.0 - tolerances.width_tie_rtol)]
    return width, min(tied)


def _grid_area_rate(profile: ProfileGrid, x: float) -> float:
    """8 pi psi psi_t at x, with psi_t from the grid right-hand side."""
    psi_t, _ = rhs(profile)
    centers = profile.x_centers
    psi = float(CubicSpline(centers, profile.psi)(x))
    return 8.0 * math.pi * psi * float(CubicSpline(centers, psi_t)(x))


def _coarsened(profile: ProfileGrid) -> ProfileGrid:
    cells = profile.n_cells // 2
    coarse = cell_centers(cells)
    return ProfileGrid(
        psi=CubicSpline(profile.x_centers, profile.psi)(coarse),
        phi=CubicSpline(profile.x_centers, profile.phi)(coarse),
        time=profile.time,
    )


def first_variation_check(
    profile: ProfileGrid, x: float, tolerances: Tolerances = DEFAULTS
) -> VariationCheck:
    """Area rate of a level sphere under the discrete flow against -(R - Ric(n,n)) integrated.

    The flow side interpolates the grid right-hand side; the curvature side
    comes from the local polynomial jet. The allowed residual is the change of
    the flow side on a grid with half the cells. On minimal slices the
    Gauss-Bonnet form -8 pi - int(|A|^2 + Ric(n,n)) is reported as well.
    """
    jet = slice_jet(profile, x)
    sphere = sphere_from_jet(jet, _minimal_tolerance_for(profile, jet, tolerances))
    psi_t, _ = pointwise_rhs(jet.psi, jet.psi_s, jet.psi_ss)
    rate_flow = 8.0 * math.pi * jet.psi * psi_t
    rate_grid = _grid_area_rate(profile, x)

    field = curvature_from_derivatives(jet.psi, jet.psi_s, jet.psi_ss)
    rate_curvature = -sphere.area * (field.scalar - field.ric_nn)

    tolerance = tolerances.identity_tol * (1.0 + sphere.area)
    if profile.n_cells // 2 >= constants.JET_STENCIL:
        tolerance += abs(rate_grid - _grid_area_rate(_coarsened(profile), x))

    rate_gb = None
    gb_residual = None
    if sphere.is_minimal:
        spectrum = spectrum_for_sphere(sphere, 0, tolerances)
        rate_gb = -8.0 * math.pi - spectrum.integral_one_L_one
        gb_residual = rate_curvature - rate_gb
    return VariationCheck(
        x=float(x),
        rate_flow=float(rate_flow),
        rate_grid=float(rate_grid),
        rate_curvature=float(rate_curvature),
        residual=float(rate_grid - rate_curvature),
        tolerance=float(tolerance),
        rate_gauss_bonnet=rate_gb,
        gauss_bonnet_residual=gb_residual,
    )


def minimal_area_rate(profile: ProfileGrid, x: float) -> float:
    """-int K_Sigma - 1/2 int (|A|^2 + R) over the level sphere."""
    jet = slice_jet(profile, x)
    sphere = sphere_from_jet(jet, math.inf)
    field = curvature_from_derivatives(jet.psi, jet.psi_s, jet.psi_ss)
    gauss = float(field.k_sph + (jet.psi_s / jet.psi) ** 2)
    return float(
        -sphere.area * gauss - 0.5 * sphere.area * (sphere.second_fund_sq + field.scalar)
    )


def upper_rate_bound(
    profile: ProfileGrid, x: float, min_r: Optional[float] = None
) -> RateBound:
    """dA/dt <= -4 pi - (A/2) min R for a minimal sphere."""
    if min_r is None:
        min_r = float(np.min(curvature(profile).scalar))
    check = first_variation_check(profile, x)
    area = FOUR_PI * slice_jet(profile, x).psi ** 2
    bound = -FOUR_PI - 0.5 * area * min_r
    return RateBound(x=float(x), rate=check.rate_flow, bound=bound, margin=bound - check.rate_flow)


def index_criteria(critical: CriticalSphere, tolerances: Tolerances = DEFAULTS) -> IndexCriteria:
    jet = critical.sphere.jet
    product = jet.psi * jet.psi_ss
    index_ok = critical.spectrum.index <= 1
    integral_ok = critical.spectrum.integral_one_L_one <= 8.0 * math.pi * (1.0 + 1e-12)
    product_ok = product >= -1.0 - 1e-12
    agree = index_ok == integral_ok == product_ok
    return IndexCriteria(
        index_at_most_one=index_ok,
        integral_at_most_8pi=integral_ok,
        curvature_product_ok=product_ok,
        psi_psi_ss=float(product),
        consistent=agree or abs(product + 1.0) <= tolerances.identity_tol,
    )


def _width_points(
    trajectory: FlowTrajectory, tolerances: Tolerances
) -> List[Tuple[float, float, float, float]]:
    points = []
    for state in trajectory.states:
        width, x_argmax = symmetric_width(state.profile, tolerances)
        min_r = float(np.min(curvature(state.profile, tolerances.psi_floor_ratio).scalar))
        points.append((state.time, width, x_argmax, min_r))
    return points


def _step_errors(rates: Sequence[float]) -> List[float]:
    errors = []
    for k, rate in enumerate(rates):
        neighbours = [rates[j] for j in (k - 1, k + 1) if 0 <= j < len(rates)]
        errors.append(max((abs(rate - other) for other in neighbours), default=0.0))
    return errors


def width_bound(width: float, time: float, min_r: float, C: Optional[float]) -> float:
    if C is None:
        return -FOUR_PI - 0.5 * width * max(min_r, 0.0)
    shifted = time + C
    return -FOUR_PI + 3.0 * width / (4.0 * shifted)


def width_rate_monitor(
    trajectory: FlowTrajectory,
    C: Optional[float],
    tolerances: Tolerances = DEFAULTS,
    neck: Optional[NeckTrack] = None,
) -> WidthSeries:
    """Forward differences of W(t) against the width inequality.

    C=None selects the non-negative min R form of the bound.
    """
    points = _width_points(trajectory, tolerances)
    rates = [
        (w1 - w0) / (t1 - t0) for (t0, w0, _, _), (t1, w1, _, _) in zip(points, points[1:])
    ]
    errors = _step_errors(rates)
    neck_areas = [None] * len(points)
    if neck is not None and len(neck.samples) == len(points):
        neck_areas = [sample.area for sample in neck.samples]

    samples = []
    for k, (t, width, x_argmax, min_r) in enumerate(points):
        if k < len(rates):
            bound = width_bound(width, t, min_r, C)
            tol = tolerances.rate_rel * abs(bound) + errors[k]
            samples.append(
                WidthSample(
                    t=t,
                    W=width,
                    x_argmax=x_argmax,
                    min_R=min_r,
                    dq=rates[k],
                    bound_rhs=bound,
                    margin=bound - rates[k],
                    tolerance=tol,
                    neck_area=neck_areas[k],
                )
            )
        else:
            samples.append(
                WidthSample(t=t, W=width, x_argmax=x_argmax, min_R=min_r, neck_area=neck_areas[k])
            )
    series = WidthSeries(samples=tuple(samples), C=C)
    if series.violations:
        logger.warning("width rate bound violated at %d samples", series.violations)
    return series


def lower_rate_series(series: WidthSeries) -> List[Tuple[float, float, float]]:
    """(t, dq, dq + 16 pi) for every pair; the lower bound holds for index <= 1."""
    rows = []
    for sample in series.samples:
        if sample.dq is None:
            continue
        rows.append((sample.t, sample.dq, sample.dq + 16.0 * math.pi))
    return rows


def _stable_neck(profile: ProfileGrid, tolerances: Tolerances) -> Optional[CriticalSphere]:
    necks = [
        sphere
        for sphere in critical_spheres(profile, 0, tolerances)
        if sphere.kind == "min" and sphere.spectrum.index == 0
    ]
    if not necks:
        return None
    return min(necks, key=lambda sphere: sphere.area)


def neck_area_tracker(
    trajectory: FlowTrajectory, tolerances: Tolerances = DEFAULTS
) -> NeckTrack:
    """Follow the smallest stable minimal sphere and its area rate."""
    raw = []
    for state in trajectory.states:
        min_r = float(np.min(curvature(state.profile, tolerances.psi_floor_ratio).scalar))
        neck = _stable_neck(state.profile, tolerances)
        raw.append((state.time, neck, min_r))

    areas = [neck.area if neck is not None else None for _, neck, _ in raw]
    rates: List[Optional[float]] = []
    for k in range(len(raw) - 1):
        if areas[k] is None or areas[k + 1] is None:
            rates.append(None)
        else:
            rates.append((areas[k + 1] - areas[k]) / (raw[k + 1][0] - raw[k][0]))
    known = [rate for rate in rates if rate is not None]
    spread = _step_errors(known)
    errors = iter(spread)

    samples = []
    for k, (t, neck, min_r) in enumerate(raw):
        rate = rates[k] if k < len(rates) else None
        if neck is None or rate is None:
            samples.append(
                NeckSample(
                    t=t,
                    area=None if neck is None else neck.area,
                    x=None if neck is None else neck.x,
                    min_R=min_r,
                )
            )
            continue
        bound = -FOUR_PI - 0.5 * neck.area * min_r
        tol = tolerances.rate_rel * abs(bound) + next(errors)
        samples.append(
            NeckSample(
                t=t,
                area=neck.area,
                x=neck.x,
                min_R=min_r,
                dq=rate,
                bound=bound,
                margin=bound - rate,
                tolerance=tol,
            )
        )

    present = any(area is not None for area in areas)
    pinch_time = None
    if trajectory.termination.kind == "pinched":
        pinch_time = trajectory.termination.time
    elif present:
        logger.info("neck present but flow ended without a pinch (%s)", trajectory.termination.kind)
    return NeckTrack(samples=tuple(samples), pinch_time=pinch_time, present=present)
